//! Re-blur blur strength in `[0, 1]`; 0 means no blur.
//!
//! Follows the scikit-image `measure.blur_effect` discretization: averaging
//! filter of length `h` per axis, absolute Sobel response along the same
//! axis, symmetric (half-sample) boundaries, and a 2-pixel margin.

use crate::error::{invalid, Result};
use crate::image::Image;

pub const DEFAULT_FILTER_SIZE: usize = 11;

/// Half-sample symmetric index (`d c b a | a b c d`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// 1-D correlation along `axis` (0 = rows, 1 = columns) with symmetric boundary.
pub(crate) fn correlate1d(
    plane: &[f64],
    h: usize,
    w: usize,
    taps: &[f64],
    origin: isize,
    axis: usize,
) -> Vec<f64> {
    let half = (taps.len() / 2) as isize + origin;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                let off = j as isize - half;
                let (yy, xx) = if axis == 0 {
                    (reflect(y as isize + off, h), x)
                } else {
                    (y, reflect(x as isize + off, w))
                };
                acc += t * plane[yy * w + xx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Absolute Sobel response along `axis`.
pub(crate) fn sobel_abs(plane: &[f64], h: usize, w: usize, axis: usize) -> Vec<f64> {
    let edge = correlate1d(plane, h, w, &[1.0, 0.0, -1.0], 0, axis);
    let mut s = correlate1d(&edge, h, w, &[0.25, 0.5, 0.25], 0, 1 - axis);
    s.iter_mut().for_each(|v| *v = v.abs());
    s
}

/// Uniform filter of length `size`, centered as in `scipy.ndimage.uniform_filter1d`.
fn uniform1d(plane: &[f64], h: usize, w: usize, size: usize, axis: usize) -> Vec<f64> {
    let taps = vec![1.0 / size as f64; size];
    // scipy places the extra tap of an even filter on the left
    let origin = if size.is_multiple_of(2) { -1 } else { 0 };
    correlate1d(plane, h, w, &taps, origin, axis)
}

/// Blur strength of `img` (3-channel inputs use their luminance).
///
/// A constant image has no variation to lose and scores 1.
pub fn blur_strength(img: &Image, h: usize) -> Result<f64> {
    if h == 0 {
        return Err(invalid("filter size must be >= 1"));
    }
    let (rows, cols) = (img.height(), img.width());
    if rows < h || cols < h {
        return Err(invalid(format!(
            "image {rows}x{cols} is smaller than the filter size {h}"
        )));
    }
    let gray = if img.channels() == 1 {
        img.clone()
    } else {
        img.luminance()
    };
    let plane = gray.plane(0);
    let mut best: f64 = 0.0;
    for axis in 0..2 {
        let blurred = uniform1d(plane, rows, cols, h, axis);
        let sharp = sobel_abs(plane, rows, cols, axis);
        let soft = sobel_abs(&blurred, rows, cols, axis);
        let (mut m1, mut m2) = (0.0, 0.0);
        for y in 2..rows.saturating_sub(1) {
            for x in 2..cols.saturating_sub(1) {
                let i = y * cols + x;
                m1 += sharp[i];
                m2 += (sharp[i] - soft[i]).max(0.0);
            }
        }
        let score = if m1 > 0.0 { (m1 - m2).abs() / m1 } else { 1.0 };
        best = best.max(score);
    }
    Ok(best)
}
