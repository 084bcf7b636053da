//! PSNR and SSIM after integer translation and intensity-scale registration.
//!
//! For every shift in `[-r, r]^2` the restored image is compared with the
//! reference on their overlap, after the least-squares gain
//! `s = <gt, x> / <x, x>`. The shift with the highest PSNR wins; `(0, 0)` is
//! tried first and later shifts must be strictly better.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::image::Image;

/// PSNR written to files in place of `+inf`.
pub const PSNR_FILE_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Content of the restored image sits `(dx, dy)` pixels right/down of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Shift {
    pub dx: isize,
    pub dy: isize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registered {
    /// Peak 1; `+inf` for an exact match.
    pub psnr: f64,
    pub ssim: f64,
    pub shift: Shift,
    pub scale: f64,
}

/// Overlap of `gt(y, x)` with `restored(y + dy, x + dx)`: per channel, the
/// reference and restored samples as row-major `(h, w)` crops.
fn overlap(restored: &Image, gt: &Image, s: Shift) -> Option<(usize, usize, Vec<f64>, Vec<f64>)> {
    let (h, w) = (gt.height() as isize, gt.width() as isize);
    let y0 = 0.max(-s.dy);
    let y1 = h.min(h - s.dy);
    let x0 = 0.max(-s.dx);
    let x1 = w.min(w - s.dx);
    if y1 <= y0 || x1 <= x0 {
        return None;
    }
    let (oh, ow) = ((y1 - y0) as usize, (x1 - x0) as usize);
    let mut a = Vec::with_capacity(oh * ow * gt.channels());
    let mut b = Vec::with_capacity(oh * ow * gt.channels());
    for c in 0..gt.channels() {
        for y in y0..y1 {
            for x in x0..x1 {
                a.push(gt.get(c, y as usize, x as usize));
                b.push(restored.get(c, (y + s.dy) as usize, (x + s.dx) as usize));
            }
        }
    }
    Some((oh, ow, a, b))
}

fn gain(gt: &[f64], x: &[f64]) -> f64 {
    let xx: f64 = x.iter().map(|v| v * v).sum();
    if xx > 0.0 {
        gt.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / xx
    } else {
        1.0
    }
}

pub fn psnr_of(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR with peak 1, `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "PSNR")?;
    Ok(psnr_of(a.data(), b.data()))
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-window separable filter of one plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64]) -> (usize, usize, Vec<f64>) {
    let k = g.len();
    let (vh, vw) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * vw];
    for y in 0..h {
        for x in 0..vw {
            tmp[y * vw + x] = (0..k).map(|j| g[j] * p[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            out[y * vw + x] = (0..k).map(|j| g[j] * tmp[(y + j) * vw + x]).sum();
        }
    }
    (vh, vw, out)
}

/// Mean SSIM over valid windows, averaged over planes. Data range 1.
/// Crops smaller than the window shrink it to the largest odd size that fits.
pub fn ssim_planes(a: &[f64], b: &[f64], h: usize, w: usize, channels: usize) -> f64 {
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let g = gaussian_window(size.max(1));
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let n = h * w;
    let mut total = 0.0;
    for c in 0..channels {
        let pa = &a[c * n..(c + 1) * n];
        let pb = &b[c * n..(c + 1) * n];
        let prod = |f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<f64>>();
        let (_, _, mu_a) = filter_valid(pa, h, w, &g);
        let (_, _, mu_b) = filter_valid(pb, h, w, &g);
        let (_, _, aa) = filter_valid(&prod(&|i| pa[i] * pa[i]), h, w, &g);
        let (_, _, bb) = filter_valid(&prod(&|i| pb[i] * pb[i]), h, w, &g);
        let (_, _, ab) = filter_valid(&prod(&|i| pa[i] * pb[i]), h, w, &g);
        let m = mu_a.len() as f64;
        let s: f64 = (0..mu_a.len())
            .map(|i| {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = aa[i] - ma * ma;
                let vb = bb[i] - mb * mb;
                let cov = ab[i] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .sum();
        total += s / m;
    }
    total / channels as f64
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "SSIM")?;
    Ok(ssim_planes(
        a.data(),
        b.data(),
        a.height(),
        a.width(),
        a.channels(),
    ))
}

/// Best-PSNR registration over integer shifts up to `max_shift`.
pub fn registered_psnr_ssim(restored: &Image, gt: &Image, max_shift: usize) -> Result<Registered> {
    restored.ensure_same_shape(gt, "registered metrics")?;
    let r = max_shift as isize;
    if r >= gt.height() as isize || r >= gt.width() as isize {
        return Err(invalid(format!(
            "shift radius {max_shift} leaves no overlap on a {}x{} image",
            gt.height(),
            gt.width()
        )));
    }
    let mut shifts = vec![Shift::default()];
    for dy in -r..=r {
        for dx in -r..=r {
            if dx != 0 || dy != 0 {
                shifts.push(Shift { dx, dy });
            }
        }
    }
    let scored: Vec<(f64, f64)> = shifts
        .par_iter()
        .map(|&s| {
            let (_, _, a, b) = overlap(restored, gt, s).expect("radius checked");
            let k = gain(&a, &b);
            let scaled: Vec<f64> = b.iter().map(|v| k * v).collect();
            (psnr_of(&a, &scaled), k)
        })
        .collect();
    let mut best = 0;
    for (i, &(p, _)) in scored.iter().enumerate() {
        if p > scored[best].0 {
            best = i;
        }
    }
    let shift = shifts[best];
    let (oh, ow, a, b) = overlap(restored, gt, shift).expect("radius checked");
    let scale = scored[best].1;
    let scaled: Vec<f64> = b.iter().map(|v| scale * v).collect();
    Ok(Registered {
        psnr: scored[best].0,
        ssim: ssim_planes(&a, &scaled, oh, ow, gt.channels()),
        shift,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::natural_scene;

    pub(crate) fn translate(img: &Image, dx: isize, dy: isize) -> Image {
        let (h, w) = (img.height() as isize, img.width() as isize);
        Image::from_fn(img.height(), img.width(), img.channels(), |c, y, x| {
            let sy = (y as isize - dy).clamp(0, h - 1) as usize;
            let sx = (x as isize - dx).clamp(0, w - 1) as usize;
            img.get(c, sy, sx)
        })
        .unwrap()
    }

    #[test]
    fn identical_images() {
        let img = natural_scene(32, 32, 1, 1).unwrap();
        let r = registered_psnr_ssim(&img, &img, 3).unwrap();
        assert_eq!(r.psnr, f64::INFINITY);
        assert!((r.ssim - 1.0).abs() < 1e-12);
        assert_eq!(r.shift, Shift::default());
        assert!((r.scale - 1.0).abs() < 1e-15);
    }

    #[test]
    fn recovers_shift_and_scale() {
        let img = natural_scene(48, 40, 3, 2).unwrap();
        let moved = translate(&img, 3, -2);
        let r = registered_psnr_ssim(&moved, &img, 5).unwrap();
        assert_eq!(r.shift, Shift { dx: 3, dy: -2 });
        assert_eq!(r.psnr, f64::INFINITY);

        let half = img.map(|v| 0.5 * v);
        let r = registered_psnr_ssim(&half, &img, 2).unwrap();
        assert_eq!(r.scale, 2.0);
        assert_eq!(r.psnr, f64::INFINITY);
    }

    #[test]
    fn ssim_bounds() {
        let a = natural_scene(24, 24, 1, 3).unwrap();
        let b = a.map(|v| 1.0 - v);
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..1.0).contains(&s));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radius_too_large() {
        let a = Image::filled(4, 4, 1, 0.5).unwrap();
        assert!(registered_psnr_ssim(&a, &a, 4).is_err());
    }
}
