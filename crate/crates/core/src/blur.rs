//! Spatially-varying blur operator, its adjoint, and the saturating sensor response.
//!
//! The forward operator is
//!
//! ```text
//! (H u)_i = sum_b m^b_i * (k^b ⋆ u)_i        then subsampled by alpha
//! ```
//!
//! which equals the per-pixel inner product of the `K x K` window around `i`
//! with the synthesized kernel `sum_b m^b_i k^b`. Boundaries replicate the
//! edge samples, so unit-mass kernels map constant images to themselves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Result};
use crate::filter::{correlate_replicate, correlate_replicate_adjoint};
use crate::image::{Encoding, Image};
use crate::kernel::{Kernel, KernelBasis, MixingField};

/// Above this value of `a (z - 1)` the response uses its asymptotic form.
const SOFTPLUS_SWITCH: f64 = 30.0;

/// Smooth saturation (`a`) and display gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationParams {
    a: f64,
    gamma: f64,
}

impl Default for SaturationParams {
    fn default() -> Self {
        Self {
            a: 50.0,
            gamma: 2.2,
        }
    }
}

impl SaturationParams {
    pub fn new(a: f64, gamma: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid(format!(
                "saturation smoothness a must be > 0, got {a}"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self { a, gamma })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// `R(z) = z - log(1 + exp(a (z - 1))) / a`, a smooth clip at 1.
pub fn response(z: f64, params: &SaturationParams) -> f64 {
    let a = params.a;
    let t = a * (z - 1.0);
    if t > SOFTPLUS_SWITCH {
        // log(1 + e^t) = t + log(1 + e^-t)
        1.0 - (-t).exp().ln_1p() / a
    } else {
        z - t.exp().ln_1p() / a
    }
}

/// `R'(z) = 1 / (1 + exp(a (z - 1)))`.
pub fn response_prime(z: f64, params: &SaturationParams) -> f64 {
    let t = params.a * (z - 1.0);
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// `R''(z) = -a R'(z) (1 - R'(z))`.
pub fn response_second(z: f64, params: &SaturationParams) -> f64 {
    let p = response_prime(z, params);
    -params.a * p * (1.0 - p)
}

pub fn response_image(img: &Image, params: &SaturationParams) -> Image {
    img.map(|z| response(z, params))
}

pub fn response_prime_image(img: &Image, params: &SaturationParams) -> Image {
    img.map(|z| response_prime(z, params))
}

/// Boundary extension used by all convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Replicate,
}

/// Linear degradation `H`: basis blur, per-pixel mixing, optional subsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurOperator {
    basis: KernelBasis,
    field: MixingField,
    alpha: usize,
    boundary: Boundary,
}

impl BlurOperator {
    pub fn new(basis: KernelBasis, field: MixingField, alpha: usize) -> Result<Self> {
        if basis.count() != field.count() {
            return Err(mismatch(format!(
                "basis has {} elements but mixing field has {}",
                basis.count(),
                field.count()
            )));
        }
        if alpha == 0 {
            return Err(invalid("downsampling factor must be >= 1"));
        }
        if alpha > 1
            && (!field.height().is_multiple_of(alpha) || !field.width().is_multiple_of(alpha))
        {
            return Err(invalid(format!(
                "field {}x{} is not divisible by downsampling factor {alpha}",
                field.height(),
                field.width()
            )));
        }
        Ok(Self {
            basis,
            field,
            alpha,
            boundary: Boundary::Replicate,
        })
    }

    /// Uniform blur by a single kernel.
    pub fn uniform(kernel: Kernel, height: usize, width: usize) -> Result<Self> {
        Self::new(
            KernelBasis::from_kernels(&[kernel])?,
            MixingField::single(height, width)?,
            1,
        )
    }

    pub fn identity(height: usize, width: usize) -> Result<Self> {
        Self::uniform(Kernel::delta(1)?, height, width)
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn field(&self) -> &MixingField {
        &self.field
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// `(height, width)` of the latent image.
    pub fn input_dims(&self) -> (usize, usize) {
        (self.field.height(), self.field.width())
    }

    /// `(height, width)` of the observation.
    pub fn output_dims(&self) -> (usize, usize) {
        (
            self.field.height() / self.alpha,
            self.field.width() / self.alpha,
        )
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        let (h, w) = self.input_dims();
        if (img.height(), img.width()) != (h, w) {
            return Err(mismatch(format!(
                "operator expects a {h}x{w} input, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    fn check_output(&self, img: &Image) -> Result<()> {
        let (h, w) = self.output_dims();
        if (img.height(), img.width()) != (h, w) {
            return Err(mismatch(format!(
                "operator output is {h}x{w}, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    fn apply_plane(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = self.input_dims();
        let k = self.basis.size();
        // per-basis passes run in parallel; the blend below sums in basis order
        let blurred: Vec<Vec<f64>> = (0..self.basis.count())
            .into_par_iter()
            .map(|b| {
                let mut conv = correlate_replicate(plane, h, w, self.basis.kernel_taps(b), k);
                for (v, &m) in conv.iter_mut().zip(self.field.plane(b)) {
                    *v *= m;
                }
                conv
            })
            .collect();
        let mut full = vec![0.0; h * w];
        for conv in &blurred {
            for (f, v) in full.iter_mut().zip(conv) {
                *f += v;
            }
        }
        if self.alpha == 1 {
            return full;
        }
        let (oh, ow) = self.output_dims();
        let mut out = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                out.push(full[y * self.alpha * w + x * self.alpha]);
            }
        }
        out
    }

    fn adjoint_plane(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = self.input_dims();
        let k = self.basis.size();
        let up = if self.alpha == 1 {
            plane.to_vec()
        } else {
            let (oh, ow) = self.output_dims();
            let mut up = vec![0.0; h * w];
            for y in 0..oh {
                for x in 0..ow {
                    up[y * self.alpha * w + x * self.alpha] = plane[y * ow + x];
                }
            }
            up
        };
        let parts: Vec<Vec<f64>> = (0..self.basis.count())
            .into_par_iter()
            .map(|b| {
                let weighted: Vec<f64> = up
                    .iter()
                    .zip(self.field.plane(b))
                    .map(|(v, m)| v * m)
                    .collect();
                correlate_replicate_adjoint(&weighted, h, w, self.basis.kernel_taps(b), k)
            })
            .collect();
        let mut out = vec![0.0; h * w];
        for part in &parts {
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        out
    }

    /// Forward operator `H u`, channel by channel.
    pub fn apply(&self, u: &Image) -> Result<Image> {
        self.check_input(u)?;
        let (oh, ow) = self.output_dims();
        let mut data = Vec::with_capacity(oh * ow * u.channels());
        for plane in u.planes() {
            data.extend(self.apply_plane(plane));
        }
        Ok(Image::from_parts(oh, ow, u.channels(), data, u.encoding()))
    }

    /// Adjoint `H^T y` under the standard inner product.
    pub fn adjoint(&self, y: &Image) -> Result<Image> {
        self.check_output(y)?;
        let (h, w) = self.input_dims();
        let mut data = Vec::with_capacity(h * w * y.channels());
        for plane in y.planes() {
            data.extend(self.adjoint_plane(plane));
        }
        Ok(Image::from_parts(h, w, y.channels(), data, y.encoding()))
    }

    /// Adjoint of the subsampling step alone (zero insertion).
    pub fn upsample_adjoint(&self, y: &Image) -> Result<Image> {
        self.check_output(y)?;
        let (h, w) = self.input_dims();
        let (oh, ow) = self.output_dims();
        let mut data = vec![0.0; h * w * y.channels()];
        for (c, plane) in y.planes().enumerate() {
            for yy in 0..oh {
                for xx in 0..ow {
                    data[c * h * w + yy * self.alpha * w + xx * self.alpha] = plane[yy * ow + xx];
                }
            }
        }
        Ok(Image::from_parts(h, w, y.channels(), data, y.encoding()))
    }

    /// Largest singular value estimate by power iteration on `H^T H`.
    pub fn norm_estimate(&self, iterations: usize) -> f64 {
        let (h, w) = self.input_dims();
        let mut v: Vec<f64> = (0..h * w)
            .map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0)
            .collect();
        let mut sigma2 = 0.0;
        for _ in 0..iterations.max(1) {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            let next = self.adjoint_plane(&self.apply_plane(&v));
            sigma2 = next.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            v = next;
        }
        sigma2.max(0.0).sqrt()
    }
}

/// Full camera degradation: `clip(R(H u^gamma + n)^(1/gamma))`.
///
/// Noise is Gaussian with standard deviation `noise_sigma`, drawn from a
/// ChaCha8 stream seeded by `seed` in storage order. Negative responses
/// (possible with noise) are clamped to 0 before the `1/gamma` power; the
/// result is clipped to `[0, 1]` last.
pub fn degrade(
    op: &BlurOperator,
    u: &Image,
    params: &SaturationParams,
    noise_sigma: f64,
    seed: u64,
) -> Result<Image> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(invalid(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    if let Some(v) = u.data().iter().find(|&&v| v < 0.0) {
        return Err(invalid(format!(
            "degrade expects non-negative samples, found {v}"
        )));
    }
    let gamma = params.gamma();
    let linear = u.map(|v| v.powf(gamma));
    let mut blurred = op.apply(&linear)?.into_data();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in blurred.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let (oh, ow) = op.output_dims();
    let inv = 1.0 / gamma;
    let data = blurred
        .into_iter()
        .map(|z| response(z, params).max(0.0).powf(inv).min(1.0))
        .collect();
    Ok(Image::from_parts(
        oh,
        ow,
        u.channels(),
        data,
        Encoding::Gamma,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_reference_values() {
        let p = SaturationParams::default();
        assert!(response(0.0, &p).abs() < 1e-20);
        // 1 - ln(2)/50
        assert!((response(1.0, &p) - 0.986_137_056_388_801_1).abs() < 1e-15);
        assert!((response(2.0, &p) - 1.0).abs() < 1e-20);
        assert_eq!(response_prime(1.0, &p), 0.5);
        assert!((response_prime(-10.0, &p) - 1.0).abs() < 1e-200);
    }

    #[test]
    fn response_prime_matches_central_differences() {
        let p = SaturationParams::default();
        let h = 1e-5;
        for &z in &[0.2, 0.9, 1.1] {
            let fd = (response(z + h, &p) - response(z - h, &p)) / (2.0 * h);
            assert!((fd - response_prime(z, &p)).abs() < 1e-6, "z={z}");
        }
    }

    #[test]
    fn response_second_matches_differences_of_first() {
        let p = SaturationParams::default();
        let h = 1e-6;
        for &z in &[0.8, 0.97, 1.0, 1.03] {
            let fd = (response_prime(z + h, &p) - response_prime(z - h, &p)) / (2.0 * h);
            assert!((fd - response_second(z, &p)).abs() < 1e-4 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn overflow_safe_branch_is_continuous() {
        let p = SaturationParams::default();
        let z = 1.0 + SOFTPLUS_SWITCH / p.a();
        let below = response(z - 1e-12, &p);
        let above = response(z + 1e-12, &p);
        assert!((below - above).abs() < 1e-11);
        assert!(response(1e300, &p).is_finite());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SaturationParams::new(0.0, 2.2).is_err());
        assert!(SaturationParams::new(50.0, -1.0).is_err());
        let op = BlurOperator::identity(2, 2).unwrap();
        let u = Image::filled(2, 2, 1, 0.5).unwrap();
        assert!(degrade(&op, &u, &SaturationParams::default(), -0.1, 0).is_err());
    }

    #[test]
    fn subsampled_delta_adjoint_is_zero_insertion() {
        let op = BlurOperator::new(
            KernelBasis::from_kernels(&[Kernel::delta(3).unwrap()]).unwrap(),
            MixingField::single(4, 4).unwrap(),
            2,
        )
        .unwrap();
        let y = Image::from_fn(2, 2, 1, |_, r, c| (1 + r * 2 + c) as f64).unwrap();
        let up = op.adjoint(&y).unwrap();
        let expected = [
            1.0, 0.0, 2.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            3.0, 0.0, 4.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(up.data(), &expected);
    }

    #[test]
    fn indivisible_field_rejected() {
        let basis = KernelBasis::from_kernels(&[Kernel::delta(3).unwrap()]).unwrap();
        assert!(BlurOperator::new(basis, MixingField::single(5, 4).unwrap(), 2).is_err());
    }
}
