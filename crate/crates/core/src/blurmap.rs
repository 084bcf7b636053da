//! Blur-region detection from a per-pixel kernel field and its average
//! precision against a binary "blurred" mask.

use crate::error::{mismatch, Result};
use crate::image::Image;
use crate::kernel::{kernel_norm_map, KernelBasis, MixingField};

/// Per-pixel sharpness: L2 norm of the synthesized kernel (1 for a delta).
pub fn blur_map(basis: &KernelBasis, field: &MixingField) -> Result<Image> {
    kernel_norm_map(basis, field)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragePrecision {
    pub value: f64,
    /// Set when the mask has no blurred pixel; `value` is then 0.
    pub undefined: bool,
}

/// Blur score `1 - normalized sharpness`, normalized by the map's range.
pub fn blur_scores(sharpness: &Image) -> Vec<f64> {
    let plane = sharpness.plane(0);
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    plane
        .iter()
        .map(|&s| {
            if span > 0.0 {
                1.0 - (s - lo) / span
            } else {
                0.0
            }
        })
        .collect()
}

/// Non-interpolated AP over every distinct threshold:
/// `sum_k (R_k - R_{k-1}) P_k`, tied scores entering together.
pub fn average_precision_of(scores: &[f64], positive: &[bool]) -> Result<AveragePrecision> {
    if scores.len() != positive.len() {
        return Err(mismatch(format!(
            "{} scores against {} mask entries",
            scores.len(),
            positive.len()
        )));
    }
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Ok(AveragePrecision {
            value: 0.0,
            undefined: true,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            tp += positive[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
    }
    Ok(AveragePrecision {
        value: ap,
        undefined: false,
    })
}

/// AP of the blur score derived from `sharpness` against `blurred`.
pub fn average_precision(sharpness: &Image, blurred: &[bool]) -> Result<AveragePrecision> {
    if blurred.len() != sharpness.height() * sharpness.width() {
        return Err(mismatch(format!(
            "mask of {} pixels for a {}x{} map",
            blurred.len(),
            sharpness.height(),
            sharpness.width()
        )));
    }
    average_precision_of(&blur_scores(sharpness), blurred)
}

pub fn blur_detection_ap(
    basis: &KernelBasis,
    field: &MixingField,
    blurred: &[bool],
) -> Result<AveragePrecision> {
    average_precision(&blur_map(basis, field)?, blurred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;

    fn ap(scores: &[f64], mask: &[bool]) -> f64 {
        average_precision_of(scores, mask).unwrap().value
    }

    /// Precision/recall at every threshold `s >= t`, integrated as steps.
    fn brute(scores: &[f64], mask: &[bool]) -> f64 {
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let pos = mask.iter().filter(|&&m| m).count() as f64;
        let mut prev = 0.0;
        let mut acc = 0.0;
        for t in ts {
            let sel: Vec<bool> = scores
                .iter()
                .zip(mask)
                .filter(|(s, _)| **s >= t)
                .map(|(_, &m)| m)
                .collect();
            let tp = sel.iter().filter(|&&m| m).count() as f64;
            let r = tp / pos;
            acc += (r - prev) * tp / sel.len() as f64;
            prev = r;
        }
        acc
    }

    #[test]
    fn separated_constant_and_reversed() {
        let mask: Vec<bool> = (0..20).map(|i| i < 8).collect();
        let good: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        assert_eq!(ap(&good, &mask), 1.0);
        assert!((ap(&[0.3; 20], &mask) - 0.4).abs() < 1e-15);
        let bad: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let r = ap(&bad, &mask);
        assert!(r < 0.4);
        assert!((r - brute(&bad, &mask)).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let scores = [
            0.9, 0.1, 0.5, 0.5, 0.7, 0.2, 0.5, 0.8, 0.1, 0.3, 0.6, 0.6, 0.4, 0.9, 0.2, 0.0, 0.5,
            0.7, 0.3, 0.1,
        ];
        let mask: Vec<bool> = (0..20).map(|i| (i * 7) % 3 == 0 || i == 4).collect();
        assert!((ap(&scores, &mask) - brute(&scores, &mask)).abs() < 1e-12);
    }

    #[test]
    fn empty_positive_set_is_flagged() {
        let r = average_precision_of(&[0.1, 0.2], &[false, false]).unwrap();
        assert!(r.undefined);
        assert!(average_precision_of(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn half_box_half_delta() {
        let (h, w) = (8, 10);
        let basis =
            KernelBasis::from_kernels(&[Kernel::delta(9).unwrap(), Kernel::boxed(9, 9).unwrap()])
                .unwrap();
        let labels: Vec<usize> = (0..h * w).map(|i| usize::from(i % w >= w / 2)).collect();
        let field = MixingField::one_hot(2, h, w, &labels).unwrap();
        let map = blur_map(&basis, &field).unwrap();
        assert_eq!(map.get(0, 0, 0), 1.0);
        assert!((map.get(0, 0, w - 1) - 1.0 / 9.0).abs() < 1e-12);
        let mask: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let r = blur_detection_ap(&basis, &field, &mask).unwrap();
        assert_eq!(r.value, 1.0);
    }
}
