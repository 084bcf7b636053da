//! Small spatial filters on single planes, replicate-edge boundaries.

use crate::error::{invalid, Result};
use crate::image::Image;

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// `out(y, x) = sum_{r,s} k[r][s] * in(clamp(y + r - c), clamp(x + s - c))` with `c = K / 2`.
pub fn correlate_replicate(plane: &[f64], h: usize, w: usize, taps: &[f64], k: usize) -> Vec<f64> {
    let c = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    for r in 0..k {
        for s in 0..k {
            let t = taps[r * k + s];
            if t == 0.0 {
                continue;
            }
            let (dy, dx) = (r as isize - c, s as isize - c);
            for y in 0..h {
                let src = &plane[clamp_index(y as isize + dy, h) * w..][..w];
                let dst = &mut out[y * w..(y + 1) * w];
                // columns whose source index needs no clamping
                let lo = (-dx).clamp(0, w as isize) as usize;
                let hi = (w as isize - dx).clamp(0, w as isize) as usize;
                for x in 0..lo.min(w) {
                    dst[x] += t * src[clamp_index(x as isize + dx, w)];
                }
                if lo < hi {
                    let off = (lo as isize + dx) as usize;
                    for (d, &v) in dst[lo..hi].iter_mut().zip(&src[off..off + (hi - lo)]) {
                        *d += t * v;
                    }
                }
                for x in hi.max(lo)..w {
                    dst[x] += t * src[clamp_index(x as isize + dx, w)];
                }
            }
        }
    }
    out
}

/// Exact adjoint of [`correlate_replicate`]: scatters each sample back
/// through the same clamped taps.
pub fn correlate_replicate_adjoint(
    plane: &[f64],
    h: usize,
    w: usize,
    taps: &[f64],
    k: usize,
) -> Vec<f64> {
    let c = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    for r in 0..k {
        for s in 0..k {
            let t = taps[r * k + s];
            if t == 0.0 {
                continue;
            }
            let (dy, dx) = (r as isize - c, s as isize - c);
            for y in 0..h {
                let ty = clamp_index(y as isize + dy, h);
                let src = &plane[y * w..(y + 1) * w];
                let dst = &mut out[ty * w..(ty + 1) * w];
                for (x, &v) in src.iter().enumerate() {
                    dst[clamp_index(x as isize + dx, w)] += t * v;
                }
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian taps with radius `ceil(4 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable 1-D filter along rows then columns, replicate boundary.
pub fn separable_replicate(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * row[clamp_index(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * tmp[clamp_index(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gaussian blur of every channel. `sigma == 0` returns the input.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("gaussian sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let taps = gaussian_taps(sigma);
    let mut out = img.clone();
    for c in 0..img.channels() {
        let blurred = separable_replicate(img.plane(c), img.height(), img.width(), &taps);
        out.plane_mut(c).copy_from_slice(&blurred);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(plane: &[f64], h: usize, w: usize, taps: &[f64], k: usize) -> Vec<f64> {
        let c = (k / 2) as isize;
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for r in 0..k {
                    for s in 0..k {
                        let yy = clamp_index(y as isize + r as isize - c, h);
                        let xx = clamp_index(x as isize + s as isize - c, w);
                        acc += taps[r * k + s] * plane[yy * w + xx];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    #[test]
    fn fast_path_matches_brute_force_including_wide_kernels() {
        // kernel wider than the image exercises the all-clamped branch
        for &(h, w, k) in &[(6usize, 5usize, 3usize), (4, 3, 7), (9, 11, 5)] {
            let plane: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
            let taps: Vec<f64> = (0..k * k).map(|i| ((i * 13) % 7) as f64).collect();
            let fast = correlate_replicate(&plane, h, w, &taps, k);
            let slow = brute(&plane, h, w, &taps, k);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gaussian_preserves_constants() {
        let img = Image::filled(8, 9, 1, 0.3).unwrap();
        let out = gaussian_blur(&img, 1.5).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-14));
    }
}
