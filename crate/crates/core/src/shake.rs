//! Random motion-blur kernels.
//!
//! Camera shake is simulated as a 2-D damped harmonic oscillator per axis,
//! driven by Gaussian increments, with natural frequencies drawn from the
//! physiological tremor band. The trajectory is centered on its center of
//! mass, scaled, and rasterized with bilinear weights.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::kernel::{Kernel, KernelBasis};
use crate::rng::{derive_seed, stream_rng};

/// Draws rejected before the amplitude is shrunk.
const RETRIES_PER_AMPLITUDE: usize = 16;
const AMPLITUDE_SHRINK: f64 = 0.8;
/// Below this amplitude (pixels) the kernel degenerates to a delta.
const MIN_AMPLITUDE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ShakeParams {
    /// Kernel side, odd.
    pub size: usize,
    /// Trajectory samples over the exposure.
    pub exposure_steps: usize,
    /// Exposure duration in seconds.
    pub exposure_s: f64,
    /// Tremor band `[low, high]` in Hz.
    pub tremor_freq_hz: [f64; 2],
    /// Damping ratio in `(0, 1)`.
    pub damping: f64,
    /// RMS trajectory radius in pixels before rejection shrinkage.
    pub amplitude_scale: f64,
    pub seed: u64,
}

impl ShakeParams {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            exposure_steps: 2000,
            exposure_s: 0.25,
            tremor_freq_hz: [2.0, 10.0],
            damping: 0.3,
            amplitude_scale: size as f64 / 8.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size.is_multiple_of(2) {
            return Err(invalid(format!(
                "kernel size must be odd, got {}",
                self.size
            )));
        }
        if self.exposure_steps < 2 {
            return Err(invalid("exposure_steps must be >= 2"));
        }
        if !(self.exposure_s > 0.0) {
            return Err(invalid("exposure duration must be > 0"));
        }
        let [lo, hi] = self.tremor_freq_hz;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid(format!("invalid tremor band [{lo}, {hi}]")));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(invalid(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if !(self.amplitude_scale >= 0.0 && self.amplitude_scale.is_finite()) {
            return Err(invalid("amplitude_scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Unit-RMS, zero-mean trajectory of `steps` points.
fn tremor_trajectory(p: &ShakeParams, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let dt = p.exposure_s / p.exposure_steps as f64;
    let [lo, hi] = p.tremor_freq_hz;
    let mut axes = [[0.0f64; 2]; 2];
    let mut omegas = [0.0f64; 2];
    for (axis, omega) in axes.iter_mut().zip(omegas.iter_mut()) {
        *omega = 2.0 * PI * rng.random_range(lo..=hi);
        let x0: f64 = StandardNormal.sample(rng);
        let v0: f64 = StandardNormal.sample(rng);
        *axis = [x0, v0 * *omega];
    }
    let mut points = Vec::with_capacity(p.exposure_steps);
    for _ in 0..p.exposure_steps {
        points.push([axes[0][0], axes[1][0]]);
        for (axis, &omega) in axes.iter_mut().zip(&omegas) {
            let xi: f64 = StandardNormal.sample(rng);
            let [x, v] = *axis;
            // semi-implicit Euler; forcing scaled so the stationary spread is O(1)
            let v = v
                + dt * (-2.0 * p.damping * omega * v - omega * omega * x)
                + omega.powf(1.5) * dt.sqrt() * xi;
            *axis = [x + dt * v, v];
        }
    }
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold([0.0, 0.0], |m, q| [m[0] + q[0], m[1] + q[1]]);
    let mean = [mean[0] / n, mean[1] / n];
    for q in points.iter_mut() {
        q[0] -= mean[0];
        q[1] -= mean[1];
    }
    let rms = (points
        .iter()
        .map(|q| q[0] * q[0] + q[1] * q[1])
        .sum::<f64>()
        / n)
        .sqrt();
    if rms > 0.0 {
        for q in points.iter_mut() {
            q[0] /= rms;
            q[1] /= rms;
        }
    }
    points
}

/// Whether every bilinear footprint stays in `[1, K - 2]` on both axes.
fn fits_strictly(points: &[[f64; 2]], scale: f64, size: usize) -> bool {
    let c = (size / 2) as f64;
    let hi = size as f64 - 2.0;
    points.iter().all(|q| {
        q.iter().all(|&v| {
            let f = (c + scale * v).floor();
            f >= 1.0 && f + 1.0 <= hi
        })
    })
}

/// Deposits each point with bilinear weights and normalizes to unit mass.
fn rasterize_bilinear(points: &[[f64; 2]], scale: f64, size: usize) -> Result<Kernel> {
    let c = (size / 2) as f64;
    let mut taps = vec![0.0; size * size];
    for q in points {
        let (x, y) = (c + scale * q[0], c + scale * q[1]);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let mut deposit = |yy: usize, xx: usize, w: f64| {
            if w > 0.0 {
                taps[yy * size + xx] += w;
            }
        };
        deposit(y0, x0, (1.0 - fx) * (1.0 - fy));
        deposit(y0, x0 + 1, fx * (1.0 - fy));
        deposit(y0 + 1, x0, (1.0 - fx) * fy);
        deposit(y0 + 1, x0 + 1, fx * fy);
    }
    Kernel::from_mass(size, taps)
}

/// One camera-shake kernel whose support lies strictly inside `K x K`.
///
/// Draws that do not fit are resampled; after a bounded number of retries
/// the amplitude shrinks geometrically, ending at a centered delta.
pub fn generate_shake_kernel(p: &ShakeParams) -> Result<Kernel> {
    p.validate()?;
    if p.amplitude_scale == 0.0 || p.size < 5 {
        return Kernel::delta(p.size);
    }
    let mut rng = stream_rng(p.seed, 0);
    let mut amplitude = p.amplitude_scale;
    while amplitude >= MIN_AMPLITUDE {
        for _ in 0..RETRIES_PER_AMPLITUDE {
            let points = tremor_trajectory(p, &mut rng);
            if fits_strictly(&points, amplitude, p.size) {
                return rasterize_bilinear(&points, amplitude, p.size);
            }
        }
        amplitude *= AMPLITUDE_SHRINK;
    }
    Kernel::delta(p.size)
}

/// `count` kernels; kernel `i` uses the seed derived from `(p.seed, i)`, so
/// the bank does not depend on the thread count.
pub fn generate_bank(p: &ShakeParams, count: usize) -> Result<KernelBasis> {
    let kernels: Result<Vec<Kernel>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut q = p.clone();
            q.seed = derive_seed(p.seed, i as u64);
            generate_shake_kernel(&q)
        })
        .collect();
    KernelBasis::from_kernels(&kernels?)
}

/// Antialiased straight segment of `length` pixels through the center.
///
/// The segment is split into equal sub-intervals whose midpoints are
/// deposited into the nearest tap, i.e. each tap receives the length of the
/// segment inside its cell. Horizontal segments of integer length give
/// exactly `1 / length` per tap.
pub fn line_kernel(length: f64, angle: f64, size: usize) -> Result<Kernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(invalid(format!("kernel size must be odd, got {size}")));
    }
    if !(length >= 0.0) || length > size as f64 {
        return Err(invalid(format!(
            "line length {length} must lie in [0, {size}]"
        )));
    }
    if !angle.is_finite() {
        return Err(invalid("line angle must be finite"));
    }
    let c = (size / 2) as f64;
    let n = ((256.0 * length).ceil() as usize).max(1);
    let step = length / n as f64;
    let (dx, dy) = (angle.cos(), angle.sin());
    let last = size as f64 - 1.0;
    let mut taps = vec![0.0; size * size];
    for j in 0..n {
        // symmetric offsets: t_{n-1-j} == -t_j exactly
        let t = (j as f64 - (n as f64 - 1.0) / 2.0) * step;
        for sign in [1.0, -1.0] {
            let x = (c + sign * t * dx).round().clamp(0.0, last) as usize;
            let y = (c + sign * t * dy).round().clamp(0.0, last) as usize;
            taps[y * size + x] += 0.5;
        }
    }
    Kernel::from_mass(size, taps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_is_delta() {
        let mut p = ShakeParams::new(15, 3);
        p.amplitude_scale = 0.0;
        assert_eq!(
            generate_shake_kernel(&p).unwrap(),
            Kernel::delta(15).unwrap()
        );
    }

    #[test]
    fn deterministic_for_seed_42() {
        let p = ShakeParams::new(33, 42);
        let a = generate_shake_kernel(&p).unwrap();
        let b = generate_shake_kernel(&p).unwrap();
        assert_eq!(a, b);
        assert!((a.sum() - 1.0).abs() < 1e-6);
        assert!(a.taps().iter().all(|&t| t >= 0.0));
        assert!(
            a.support_extent() > 1,
            "default shake should not be a delta"
        );
    }

    #[test]
    fn line_length_one_is_delta() {
        assert_eq!(line_kernel(1.0, 0.7, 7).unwrap(), Kernel::delta(7).unwrap());
    }

    #[test]
    fn horizontal_line_of_three() {
        let k = line_kernel(3.0, 0.0, 5).unwrap();
        let row = &k.taps()[10..15];
        for &v in &row[1..4] {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(row[0], 0.0);
        assert_eq!(row[4], 0.0);
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_is_symmetric_under_half_turn() {
        for &a in &[0.0, 0.3, 1.1, 2.0, -0.75] {
            let k1 = line_kernel(7.5, a, 11).unwrap();
            let k2 = line_kernel(7.5, a + PI, 11).unwrap();
            assert_eq!(k1, k2, "angle {a}");
        }
    }

    #[test]
    fn line_longer_than_support_rejected() {
        assert!(line_kernel(8.0, 0.0, 7).is_err());
    }

    #[test]
    fn bank_is_independent_of_thread_count() {
        let p = ShakeParams::new(13, 9);
        let a = generate_bank(&p, 6).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| generate_bank(&p, 6)).unwrap();
        assert_eq!(a, b);
    }
}
