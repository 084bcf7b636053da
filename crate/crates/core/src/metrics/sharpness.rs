//! Sharpness index from the response of total variation to random phase.
//!
//! ```text
//! SI(u) = -log10 Phi((mu - TV(u)) / sigma)
//! ```
//!
//! where `Phi` is the Gaussian upper tail and `mu`, `sigma` are the mean and
//! standard deviation of `TV(u * W)` for periodic convolution with white
//! noise `W` of variance `1 / (H W)`. The image is first replaced by its
//! periodic component so the wrap-around border carries no artificial edge.
//! The moments are estimated from seeded Monte-Carlo draws; the standard
//! error of the index is the jackknife estimate over draws.

use std::f64::consts::{LN_10, PI};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng::stream_rng;

pub const DEFAULT_REALIZATIONS: usize = 32;

/// Beyond this argument the tail uses its asymptotic series.
const ASYMPTOTIC_SWITCH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessIndex {
    pub value: f64,
    /// Jackknife standard error over realizations; needs at least 3 draws.
    pub standard_error: Option<f64>,
    pub tv: f64,
    pub mean: f64,
    pub std_dev: f64,
}

/// `ln Phi(t)` without underflow for large `t`.
pub fn log_gaussian_tail(t: f64) -> f64 {
    if t < ASYMPTOTIC_SWITCH {
        (0.5 * erfc(t / std::f64::consts::SQRT_2)).ln()
    } else {
        let r = 1.0 / (t * t);
        let series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - 105.0 * r)));
        -0.5 * t * t - t.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Periodic anisotropic total variation of one plane.
pub fn periodic_tv(plane: &[f64], h: usize, w: usize) -> f64 {
    let mut tv = 0.0;
    for y in 0..h {
        let yn = (y + 1) % h;
        for x in 0..w {
            let xn = (x + 1) % w;
            let v = plane[y * w + x];
            tv += (plane[y * w + xn] - v).abs() + (plane[yn * w + x] - v).abs();
        }
    }
    tv
}

struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            col_fwd: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, data: &mut [Complex<f64>], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);
        let mut column = vec![Complex::default(); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                column[y] = data[y * self.w + x];
            }
            col.process(&mut column);
            for y in 0..self.h {
                data[y * self.w + x] = column[y];
            }
        }
    }
}

/// Periodic component of the periodic-plus-smooth decomposition: `u - s`
/// where the smooth part `s` solves a periodic Poisson problem driven by the
/// border jumps.
pub fn periodic_component(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut v = vec![Complex::new(0.0, 0.0); h * w];
    for x in 0..w {
        let jump = plane[(h - 1) * w + x] - plane[x];
        v[x].re += jump;
        v[(h - 1) * w + x].re -= jump;
    }
    for y in 0..h {
        let jump = plane[y * w + w - 1] - plane[y * w];
        v[y * w].re += jump;
        v[y * w + w - 1].re -= jump;
    }
    let fft = Fft2::new(h, w);
    fft.run(&mut v, false);
    for q in 0..h {
        let cy = (2.0 * PI * q as f64 / h as f64).cos();
        for r in 0..w {
            let cx = (2.0 * PI * r as f64 / w as f64).cos();
            let denom = 2.0 * cx + 2.0 * cy - 4.0;
            let i = q * w + r;
            v[i] = if i == 0 {
                Complex::new(0.0, 0.0)
            } else {
                v[i] / denom
            };
        }
    }
    fft.run(&mut v, true);
    let n = (h * w) as f64;
    plane.iter().zip(&v).map(|(u, s)| u - s.re / n).collect()
}

fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn index_from(tv: f64, mean: f64, sd: f64) -> f64 {
    -log_gaussian_tail((mean - tv) / sd) / LN_10
}

/// Sharpness index of `img` (3-channel inputs use their luminance) from
/// `realizations >= 2` noise draws. Draw `i` uses stream `i` of `seed`.
pub fn sharpness_index(img: &Image, realizations: usize, seed: u64) -> Result<SharpnessIndex> {
    if realizations < 2 {
        return Err(invalid("sharpness index needs at least 2 realizations"));
    }
    let gray = if img.channels() == 1 {
        img.clone()
    } else {
        img.luminance()
    };
    let (h, w) = (gray.height(), gray.width());
    let n = h * w;
    let plane = periodic_component(gray.plane(0), h, w);
    let fft = Fft2::new(h, w);
    let mut spectrum: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.run(&mut spectrum, false);
    let normal = Normal::new(0.0, 1.0 / (n as f64).sqrt()).map_err(|e| invalid(e.to_string()))?;
    let samples: Vec<f64> = (0..realizations)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut noise: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(normal.sample(&mut rng), 0.0))
                .collect();
            fft.run(&mut noise, false);
            for (a, b) in noise.iter_mut().zip(&spectrum) {
                *a *= b;
            }
            fft.run(&mut noise, true);
            let real: Vec<f64> = noise.iter().map(|c| c.re / n as f64).collect();
            periodic_tv(&real, h, w)
        })
        .collect();
    let tv = periodic_tv(&plane, h, w);
    let (mean, sd) = moments(&samples);
    if !(sd > 0.0) {
        return Err(invalid(
            "TV of the randomized image does not vary; constant input?",
        ));
    }
    let value = index_from(tv, mean, sd);
    let standard_error = (realizations >= 3).then(|| {
        let m = realizations as f64;
        let loo: Vec<f64> = (0..realizations)
            .map(|k| {
                let rest: Vec<f64> = samples
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &v)| v)
                    .collect();
                let (mu, s) = moments(&rest);
                index_from(tv, mu, s)
            })
            .collect();
        let avg = loo.iter().sum::<f64>() / m;
        ((m - 1.0) / m * loo.iter().map(|v| (v - avg).powi(2)).sum::<f64>()).sqrt()
    });
    Ok(SharpnessIndex {
        value,
        standard_error,
        tv,
        mean,
        std_dev: sd,
    })
}
