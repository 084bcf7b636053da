//! Training losses and kernel/mask regularizers, evaluated as plain sums.
//!
//! Losses sum over channels without dividing by the channel count.
//! Reductions run per row in parallel and add the row sums in row order, so
//! results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{invalid, mismatch, Result};
use crate::image::Image;
use crate::kernel::{KernelBasis, MixingField, PixelKernels, SegmentMap};

/// Per-pixel weights `1 / |segment(i)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentWeights {
    height: usize,
    width: usize,
    w: Vec<f64>,
}

impl SegmentWeights {
    pub fn from_segments(segments: &SegmentMap) -> Self {
        let sizes = segments.segment_sizes();
        let w = segments
            .labels()
            .iter()
            .map(|&l| 1.0 / sizes[l as usize] as f64)
            .collect();
        Self {
            height: segments.height(),
            width: segments.width(),
            w,
        }
    }

    /// The same weight `value` at every pixel.
    pub fn uniform(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn new(height: usize, width: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != height * width {
            return Err(mismatch(format!(
                "{} weights for a {height}x{width} grid",
                w.len()
            )));
        }
        if let Some(v) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(invalid(format!("weights must be positive, found {v}")));
        }
        Ok(Self { height, width, w })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }
}

fn row_sum(h: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let rows: Vec<f64> = (0..h).into_par_iter().map(f).collect();
    rows.iter().sum()
}

/// `sum_i w_i (v_i^gamma - (v_i^GT)^gamma)^2`, summed over channels.
pub fn reblur_loss(v_pred: &Image, v_gt: &Image, w: &SegmentWeights, gamma: f64) -> Result<f64> {
    v_pred.ensure_same_shape(v_gt, "reblur loss")?;
    if (w.height, w.width) != (v_pred.height(), v_pred.width()) {
        return Err(mismatch("weight grid differs from the image size"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be > 0, got {gamma}")));
    }
    if v_pred.data().iter().chain(v_gt.data()).any(|&v| v < 0.0) {
        return Err(invalid("reblur loss needs non-negative samples"));
    }
    let width = v_pred.width();
    Ok(row_sum(v_pred.height(), |y| {
        let mut acc = 0.0;
        for c in 0..v_pred.channels() {
            let (p, g) = (v_pred.plane(c), v_gt.plane(c));
            for i in y * width..(y + 1) * width {
                let d = p[i].powf(gamma) - g[i].powf(gamma);
                acc += w.w[i] * d * d;
            }
        }
        acc
    }))
}

/// `sum_i w_i || sum_b m^b_i k^b - k_i^GT ||^2`.
pub fn kernel_loss(
    basis: &KernelBasis,
    field: &MixingField,
    gt: &PixelKernels,
    w: &SegmentWeights,
) -> Result<f64> {
    if basis.count() != field.count() {
        return Err(mismatch("basis and field counts differ"));
    }
    if basis.size() != gt.size() {
        return Err(mismatch(format!(
            "kernel size {} differs from reference size {}",
            basis.size(),
            gt.size()
        )));
    }
    let (h, wd) = (field.height(), field.width());
    if (gt.height(), gt.width()) != (h, wd) || (w.height, w.width) != (h, wd) {
        return Err(mismatch(
            "field, reference kernels and weights differ in size",
        ));
    }
    let kk = basis.size() * basis.size();
    Ok(row_sum(h, |y| {
        let mut synth = vec![0.0; kk];
        let mut acc = 0.0;
        for x in 0..wd {
            synth.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..basis.count() {
                let m = field.coeff(b, y, x);
                if m != 0.0 {
                    for (s, t) in synth.iter_mut().zip(basis.kernel_taps(b)) {
                        *s += m * t;
                    }
                }
            }
            let err: f64 = synth
                .iter()
                .zip(gt.kernel_taps(y, x))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            acc += w.w[y * wd + x] * err;
        }
        acc
    }))
}

/// `sum_i (u_i - u_i^GT)^2` over all channels.
pub fn restoration_loss(u_pred: &Image, u_gt: &Image) -> Result<f64> {
    u_pred.ensure_same_shape(u_gt, "restoration loss")?;
    let width = u_pred.width();
    Ok(row_sum(u_pred.height(), |y| {
        let mut acc = 0.0;
        for c in 0..u_pred.channels() {
            let (p, g) = (u_pred.plane(c), u_gt.plane(c));
            for i in y * width..(y + 1) * width {
                let d = p[i] - g[i];
                acc += d * d;
            }
        }
        acc
    }))
}

/// Mean over pixels of the squared L2 norm of the synthesized kernel.
pub fn kernel_l2_reg(basis: &KernelBasis, field: &MixingField) -> Result<f64> {
    let kernels = PixelKernels::from_basis(basis, field)?;
    let (h, w) = (field.height(), field.width());
    let total = row_sum(h, |y| {
        (0..w)
            .map(|x| kernels.kernel_taps(y, x).iter().map(|t| t * t).sum::<f64>())
            .sum()
    });
    Ok(total / (h * w) as f64)
}

/// Anisotropic TV of `count` stacked `h x w` planes: mean `|dx|` over
/// horizontal neighbor pairs plus mean `|dy|` over vertical pairs, averaged
/// over planes. Axes without neighbor pairs contribute 0.
pub fn planes_tv(data: &[f64], count: usize, h: usize, w: usize) -> Result<f64> {
    if data.len() != count * h * w {
        return Err(mismatch(format!(
            "{} values for {count} planes of {h}x{w}",
            data.len()
        )));
    }
    if count == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for plane in data.chunks_exact(h * w) {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if x + 1 < w {
                    gx += (plane[y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    gy += (plane[(y + 1) * w + x] - v).abs();
                }
            }
        }
        let nx = h * w.saturating_sub(1);
        let ny = h.saturating_sub(1) * w;
        if nx > 0 {
            total += gx / nx as f64;
        }
        if ny > 0 {
            total += gy / ny as f64;
        }
    }
    Ok(total / count as f64)
}

/// [`planes_tv`] over the coefficient planes of a mixing field.
pub fn mask_tv_reg(field: &MixingField) -> f64 {
    planes_tv(field.coeffs(), field.count(), field.height(), field.width())
        .expect("field planes are consistent")
}
