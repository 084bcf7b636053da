//! Cumulative probability of blur detection.
//!
//! Samples are first rounded to 8-bit levels. Edges come from thresholded, thinned Sobel responses along each axis
//! (threshold `4 * mean` of the squared response). Each edge is measured
//! along its axis as the distance between the enclosing local extrema. The
//! image is tiled into 64x64 blocks (border blocks may be smaller); blocks
//! with enough edges contribute their edges with the block contrast
//! deciding the just-noticeable width.

use crate::image::Image;

pub const BLOCK: usize = 64;
/// Minimum edge fraction for a block to count.
pub const BLOCK_EDGE_FRACTION: f64 = 0.002;
pub const BETA: f64 = 3.6;
pub const P_JNB: f64 = 0.63;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpbdResult {
    pub score: f64,
    /// Edges that entered the pooling.
    pub edges: usize,
}

impl CpbdResult {
    pub fn no_edges(&self) -> bool {
        self.edges == 0
    }
}

/// Just-noticeable blur width for a contrast on the 0..255 scale.
pub fn jnb_width(contrast: f64) -> f64 {
    if contrast <= 50.0 {
        5.0
    } else {
        3.0
    }
}

pub fn blur_probability(width: f64, w_jnb: f64) -> f64 {
    1.0 - (-(width / w_jnb).powf(BETA)).exp()
}

/// Signed Sobel derivative along `axis` with replicate boundaries.
fn sobel(plane: &[f64], h: usize, w: usize, axis: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        plane[yy * w + xx]
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = if axis == 1 {
                (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1))
            } else {
                (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1))
            };
            out[y as usize * w + x as usize] = v / 8.0;
        }
    }
    out
}

/// Thinned edge map along `axis`: squared response above `4 * mean` and a
/// local maximum along the axis (strict on the lower side).
fn edges(grad: &[f64], h: usize, w: usize, axis: usize) -> Vec<bool> {
    let b: Vec<f64> = grad.iter().map(|g| g * g).collect();
    let cutoff = 4.0 * b.iter().sum::<f64>() / b.len() as f64;
    let (step, len) = if axis == 1 { (1, w) } else { (w, h) };
    (0..h * w)
        .map(|i| {
            let pos = if axis == 1 { i % w } else { i / w };
            let v = b[i];
            if !(v > cutoff) {
                return false;
            }
            let before = if pos > 0 {
                b[i - step]
            } else {
                f64::NEG_INFINITY
            };
            let after = if pos + 1 < len {
                b[i + step]
            } else {
                f64::NEG_INFINITY
            };
            v > before && v >= after
        })
        .collect()
}

/// Distance between the local extrema enclosing the edge at `i` along `axis`.
fn edge_width(plane: &[f64], h: usize, w: usize, i: usize, axis: usize, rising: bool) -> usize {
    let (step, len, pos) = if axis == 1 {
        (1isize, w, i % w)
    } else {
        (w as isize, h, i / w)
    };
    let value = |p: usize| plane[(i as isize + (p as isize - pos as isize) * step) as usize];
    // walk down the slope on the low side and up on the high side
    let mut lo = pos;
    let mut hi = pos;
    if rising {
        while lo > 0 && value(lo - 1) < value(lo) {
            lo -= 1;
        }
        while hi + 1 < len && value(hi + 1) > value(hi) {
            hi += 1;
        }
    } else {
        while lo > 0 && value(lo - 1) > value(lo) {
            lo -= 1;
        }
        while hi + 1 < len && value(hi + 1) < value(hi) {
            hi += 1;
        }
    }
    hi - lo
}

/// CPBD of `img` (3-channel inputs use their luminance). Without any
/// qualifying edge the score is 0 and [`CpbdResult::no_edges`] is set.
pub fn cpbd(img: &Image) -> CpbdResult {
    let gray = if img.channels() == 1 {
        img.clone()
    } else {
        img.luminance()
    };
    let (h, w) = (gray.height(), gray.width());
    let plane: Vec<f64> = gray
        .plane(0)
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round())
        .collect();
    let mut axes = Vec::with_capacity(2);
    for axis in 0..2 {
        let g = sobel(&plane, h, w, axis);
        let e = edges(&g, h, w, axis);
        axes.push((g, e));
    }
    let mut total = 0usize;
    let mut sharp = 0usize;
    for by in (0..h).step_by(BLOCK) {
        for bx in (0..w).step_by(BLOCK) {
            let (y1, x1) = ((by + BLOCK).min(h), (bx + BLOCK).min(w));
            let pixels = (y1 - by) * (x1 - bx);
            let mut count = 0usize;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for y in by..y1 {
                for x in bx..x1 {
                    let i = y * w + x;
                    count += axes.iter().filter(|(_, e)| e[i]).count();
                    lo = lo.min(plane[i]);
                    hi = hi.max(plane[i]);
                }
            }
            if (count as f64) <= BLOCK_EDGE_FRACTION * pixels as f64 {
                continue;
            }
            let w_jnb = jnb_width(hi - lo);
            for (axis, (g, e)) in axes.iter().enumerate() {
                for y in by..y1 {
                    for x in bx..x1 {
                        let i = y * w + x;
                        if !e[i] {
                            continue;
                        }
                        let width = edge_width(&plane, h, w, i, axis, g[i] > 0.0);
                        if width == 0 {
                            continue;
                        }
                        total += 1;
                        if blur_probability(width as f64, w_jnb) <= P_JNB {
                            sharp += 1;
                        }
                    }
                }
            }
        }
    }
    CpbdResult {
        score: if total == 0 {
            0.0
        } else {
            sharp as f64 / total as f64
        },
        edges: total,
    }
}
