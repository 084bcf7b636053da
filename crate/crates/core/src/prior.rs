//! Proximal operators used as the prior step of the deconvolver.
//!
//! A prior maps an image and a strength `beta >= 0` to an image and is the
//! identity at `beta == 0`. External denoisers can implement [`Prior`].

use crate::error::{invalid, Result};
use crate::filter::gaussian_blur;
use crate::image::Image;

pub trait Prior: Sync {
    fn name(&self) -> &str;
    fn prox(&self, x: &Image, strength: f64) -> Result<Image>;
}

fn check_strength(strength: f64) -> Result<()> {
    if strength >= 0.0 && strength.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "prior strength must be >= 0, got {strength}"
        )))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPrior;

impl Prior for IdentityPrior {
    fn name(&self) -> &str {
        "identity"
    }

    fn prox(&self, x: &Image, strength: f64) -> Result<Image> {
        check_strength(strength)?;
        Ok(x.clone())
    }
}

/// Isotropic TV denoising, `argmin_p 1/2 ||p - x||^2 + scale * beta * TV(p)`,
/// solved per channel by accelerated projected gradient on the dual.
#[derive(Debug, Clone, Copy)]
pub struct TvPrior {
    pub iterations: usize,
    pub scale: f64,
}

impl Default for TvPrior {
    fn default() -> Self {
        Self {
            iterations: 20,
            scale: 0.2,
        }
    }
}

/// Dual step size, the inverse Lipschitz constant of the dual objective.
const TV_TAU: f64 = 0.125;

impl Prior for TvPrior {
    fn name(&self) -> &str {
        "tv"
    }

    fn prox(&self, x: &Image, strength: f64) -> Result<Image> {
        check_strength(strength)?;
        let lambda = self.scale * strength;
        if lambda == 0.0 {
            return Ok(x.clone());
        }
        let (h, w) = (x.height(), x.width());
        let mut data = Vec::with_capacity(x.data().len());
        for plane in x.planes() {
            data.extend(tv_denoise_plane(plane, h, w, lambda, self.iterations));
        }
        Image::new(h, w, x.channels(), data, x.encoding())
    }
}

/// Forward differences with zero at the last row/column.
fn gradient(u: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut d = 0.0;
            if x + 1 < w {
                d += px[i];
            }
            if x > 0 {
                d -= px[i - 1];
            }
            if y + 1 < h {
                d += py[i];
            }
            if y > 0 {
                d -= py[i - w];
            }
            out[i] = d;
        }
    }
}

fn tv_denoise_plane(f: &[f64], h: usize, w: usize, lambda: f64, iterations: usize) -> Vec<f64> {
    let n = h * w;
    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let (mut rx, mut ry) = (vec![0.0; n], vec![0.0; n]);
    let mut div = vec![0.0; n];
    let mut g = vec![0.0; n];
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut t: f64 = 1.0;
    for _ in 0..iterations {
        divergence(&rx, &ry, h, w, &mut div);
        for i in 0..n {
            g[i] = div[i] - f[i] / lambda;
        }
        gradient(&g, h, w, &mut gx, &mut gy);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        for i in 0..n {
            let qx = rx[i] + TV_TAU * gx[i];
            let qy = ry[i] + TV_TAU * gy[i];
            let scale = (qx * qx + qy * qy).sqrt().max(1.0);
            let (nx, ny) = (qx / scale, qy / scale);
            rx[i] = nx + momentum * (nx - px[i]);
            ry[i] = ny + momentum * (ny - py[i]);
            px[i] = nx;
            py[i] = ny;
        }
        t = t_next;
    }
    divergence(&px, &py, h, w, &mut div);
    f.iter().zip(&div).map(|(v, d)| v - lambda * d).collect()
}

/// Isotropic total variation with the same forward differences, summed over channels.
pub fn total_variation(img: &Image) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    img.planes()
        .map(|p| {
            gradient(p, h, w, &mut gx, &mut gy);
            gx.iter()
                .zip(&gy)
                .map(|(a, b)| (a * a + b * b).sqrt())
                .sum::<f64>()
        })
        .sum()
}

/// Gaussian smoothing with standard deviation `scale * beta` pixels.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPrior {
    pub scale: f64,
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self { scale: 10.0 }
    }
}

impl Prior for GaussianPrior {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn prox(&self, x: &Image, strength: f64) -> Result<Image> {
        check_strength(strength)?;
        gaussian_blur(x, self.scale * strength)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |_, y, x| {
            let base = if x < w / 2 { 0.2 } else { 0.8 };
            base + 0.05 * (((y * 31 + x * 17) % 11) as f64 / 10.0 - 0.5)
        })
        .unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let x = noisy(8, 9);
        for p in [
            &TvPrior::default() as &dyn Prior,
            &GaussianPrior::default(),
            &IdentityPrior,
        ] {
            assert_eq!(p.prox(&x, 0.0).unwrap(), x, "{}", p.name());
        }
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let (h, w) = (5, 7);
        let u: Vec<f64> = (0..h * w).map(|i| ((i * 13) % 7) as f64).collect();
        let px: Vec<f64> = (0..h * w).map(|i| ((i * 5) % 3) as f64 - 1.0).collect();
        let py: Vec<f64> = (0..h * w).map(|i| ((i * 11) % 5) as f64 - 2.0).collect();
        let (mut gx, mut gy, mut div) = (vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]);
        gradient(&u, h, w, &mut gx, &mut gy);
        divergence(&px, &py, h, w, &mut div);
        let lhs: f64 = (0..h * w).map(|i| gx[i] * px[i] + gy[i] * py[i]).sum();
        let rhs: f64 = -(0..h * w).map(|i| u[i] * div[i]).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn tv_prox_reduces_variation_and_keeps_mean() {
        let x = noisy(16, 16);
        let p = TvPrior::default().prox(&x, 0.05).unwrap();
        assert!(total_variation(&p) < total_variation(&x));
        let mean = |i: &Image| i.data().iter().sum::<f64>() / i.data().len() as f64;
        assert!((mean(&p) - mean(&x)).abs() < 1e-12);
    }

    #[test]
    fn tv_prox_beats_random_perturbations() {
        use rand::Rng;
        let x = noisy(12, 12);
        let beta = 0.05;
        let p = TvPrior {
            iterations: 300,
            scale: 1.0,
        }
        .prox(&x, beta)
        .unwrap();
        let objective = |q: &Image| {
            let d: f64 = q
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            0.5 * d + beta * total_variation(q)
        };
        let best = objective(&p);
        let mut rng = crate::rng::stream_rng(7, 0);
        for _ in 0..100 {
            let mut delta: Vec<f64> = (0..144).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            delta.iter_mut().for_each(|v| *v *= 1e-3 / n);
            let q = p
                .zip_map(
                    &Image::new(12, 12, 1, delta, p.encoding()).unwrap(),
                    |a, b| a + b,
                )
                .unwrap();
            assert!(objective(&q) >= best - 1e-12);
        }
    }
}
