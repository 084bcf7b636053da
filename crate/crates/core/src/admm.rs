//! Non-blind deconvolution by unrolled linearized ADMM.
//!
//! The splitting variable lives in the blur output domain, `z = H x`, and
//! `d` is the scaled dual variable. One iteration is
//!
//! ```text
//! x <- P_beta(x - gamma H^T (H x - z + d))
//! z <- (y + alpha (H x + d)) / (alpha + 1)
//! d <- d + H x - z
//! ```
//!
//! with `alpha = sigma^2 mu`. With a saturating sensor the data term becomes
//! `|R(z) - y|^2 / (2 sigma^2)`, linearized around the current `z` with a
//! proximal weight `L_z`.

use crate::blur::{response, response_prime, response_second, BlurOperator, SaturationParams};
use crate::error::{invalid, mismatch, Result};
use crate::image::Image;
use crate::prior::Prior;

/// Per-iteration hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmSchedule {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    sigma: f64,
    l_z: Option<f64>,
}

pub const DEFAULT_ITERATIONS: usize = 8;
pub const DEFAULT_BETA_START: f64 = 0.08;
pub const DEFAULT_BETA_END: f64 = 0.01;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 4.0;

impl AdmmSchedule {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>, sigma: f64) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(invalid("schedule needs at least one iteration"));
        }
        if beta.len() != n || gamma.len() != n {
            return Err(mismatch(format!(
                "schedule lengths differ: alpha {n}, beta {}, gamma {}",
                beta.len(),
                gamma.len()
            )));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !alpha.iter().all(positive) || !beta.iter().all(positive) || !gamma.iter().all(positive)
        {
            return Err(invalid("schedule entries must be finite and > 0"));
        }
        if !positive(&sigma) {
            return Err(invalid(format!("noise sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            sigma,
            l_z: None,
        })
    }

    /// `beta` log-linear from `beta_start` to `beta_end`, constant `gamma`,
    /// `mu_k = lambda / beta_k^2` (a constant prior weight) and
    /// `alpha_k = sigma^2 mu_k`.
    pub fn geometric(
        iterations: usize,
        beta_start: f64,
        beta_end: f64,
        gamma: f64,
        lambda: f64,
        sigma: f64,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(invalid("schedule needs at least one iteration"));
        }
        if !(beta_start > 0.0 && beta_end > 0.0) {
            return Err(invalid("beta bounds must be > 0"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be > 0, got {lambda}")));
        }
        let (l0, l1) = (beta_start.ln(), beta_end.ln());
        let beta: Vec<f64> = (0..iterations)
            .map(|k| {
                let t = if iterations == 1 {
                    0.0
                } else {
                    k as f64 / (iterations - 1) as f64
                };
                (l0 + t * (l1 - l0)).exp()
            })
            .collect();
        let alpha = beta
            .iter()
            .map(|b| sigma * sigma * lambda / (b * b))
            .collect();
        Self::new(alpha, beta, vec![gamma; iterations], sigma)
    }

    /// The default 8-step schedule for noise level `sigma`.
    pub fn default_for(sigma: f64) -> Result<Self> {
        Self::geometric(
            DEFAULT_ITERATIONS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            DEFAULT_GAMMA,
            DEFAULT_LAMBDA,
            sigma,
        )
    }

    /// Fixes `L_z` instead of estimating it at each iteration.
    pub fn with_l_z(mut self, l_z: f64) -> Result<Self> {
        if !(l_z > 0.0 && l_z.is_finite()) {
            return Err(invalid(format!("L_z must be > 0, got {l_z}")));
        }
        self.l_z = Some(l_z);
        Ok(self)
    }

    pub fn iterations(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn l_z(&self) -> Option<f64> {
        self.l_z
    }

    /// Penalty `mu_k = alpha_k / sigma^2`.
    pub fn mu(&self, k: usize) -> f64 {
        self.alpha[k] / (self.sigma * self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Image,
    pub z: Image,
    pub d: Image,
}

impl AdmmState {
    pub fn new(x: Image, z: Image, d: Image) -> Result<Self> {
        z.ensure_same_shape(&d, "splitting and dual variables")?;
        if x.channels() != z.channels() {
            return Err(mismatch(
                "estimate and splitting variable differ in channels",
            ));
        }
        Ok(Self { x, z, d })
    }

    fn check(&self, op: &BlurOperator) -> Result<()> {
        if (self.x.height(), self.x.width()) != op.input_dims() {
            return Err(mismatch("estimate does not match the operator input size"));
        }
        if (self.z.height(), self.z.width()) != op.output_dims() {
            return Err(mismatch(
                "splitting variable does not match the operator output size",
            ));
        }
        Ok(())
    }
}

fn axpy(a: f64, x: &Image, y: &Image) -> Result<Image> {
    x.zip_map(y, |u, v| a * u + v)
}

/// `P_beta(x - gamma H^T (H x - z + d))`.
pub fn x_update(
    state: &AdmmState,
    op: &BlurOperator,
    prior: &dyn Prior,
    beta: f64,
    gamma: f64,
) -> Result<Image> {
    state.check(op)?;
    let hx = op.apply(&state.x)?;
    let r = hx
        .zip_map(&state.z, |a, b| a - b)?
        .zip_map(&state.d, |a, b| a + b)?;
    let step = axpy(-gamma, &op.adjoint(&r)?, &state.x)?;
    prior.prox(&step, beta)
}

/// Closed-form minimizer of `|z - y|^2 / (2 sigma^2) + mu/2 |z - (H x + d)|^2`.
pub fn z_update(hx: &Image, d: &Image, y: &Image, alpha: f64) -> Result<Image> {
    let target = hx.zip_map(d, |a, b| a + b)?;
    y.zip_map(&target, |yv, t| (yv + alpha * t) / (alpha + 1.0))
}

/// Minimizer of the linearized saturated cost
/// `<z - z_k, (R(z_k) - y) R'(z_k)> / sigma^2 + L_z/2 |z - z_k|^2 + beta/2 |z - (H x + d)|^2`.
#[allow(clippy::too_many_arguments)]
pub fn z_update_saturated(
    z_k: &Image,
    hx: &Image,
    d: &Image,
    y: &Image,
    beta: f64,
    l_z: f64,
    sigma: f64,
    params: &SaturationParams,
) -> Result<Image> {
    if !(l_z > 0.0) || !(beta >= 0.0) || !(sigma > 0.0) {
        return Err(invalid(
            "saturated update needs L_z > 0, beta >= 0 and sigma > 0",
        ));
    }
    z_k.ensure_same_shape(hx, "saturated update")?;
    z_k.ensure_same_shape(d, "saturated update")?;
    z_k.ensure_same_shape(y, "saturated update")?;
    let s2 = sigma * sigma;
    let scale = 1.0 / ((l_z + beta) * s2);
    let data = (0..z_k.data().len())
        .map(|i| {
            let z = z_k.data()[i];
            let target = hx.data()[i] + d.data()[i];
            scale
                * ((y.data()[i] - response(z, params)) * response_prime(z, params)
                    + s2 * l_z * z
                    + beta * s2 * target)
        })
        .collect();
    Image::new(
        z_k.height(),
        z_k.width(),
        z_k.channels(),
        data,
        z_k.encoding(),
    )
}

/// Gradient of the linearized saturated cost at `z`.
#[allow(clippy::too_many_arguments)]
pub fn saturated_gradient(
    z: &Image,
    z_k: &Image,
    hx: &Image,
    d: &Image,
    y: &Image,
    beta: f64,
    l_z: f64,
    sigma: f64,
    params: &SaturationParams,
) -> Result<Image> {
    z.ensure_same_shape(z_k, "saturated gradient")?;
    let s2 = sigma * sigma;
    let data = (0..z.data().len())
        .map(|i| {
            let zk = z_k.data()[i];
            (response(zk, params) - y.data()[i]) * response_prime(zk, params) / s2
                + l_z * (z.data()[i] - zk)
                + beta * (z.data()[i] - (hx.data()[i] + d.data()[i]))
        })
        .collect();
    Image::new(z.height(), z.width(), z.channels(), data, z.encoding())
}

/// Curvature bound of the saturated data term around `z`:
/// `2 (max R'^2 + max |R''| max |R - y|) / sigma^2`, floored at `1 / sigma^2`.
pub fn estimate_l_z(z: &Image, y: &Image, sigma: f64, params: &SaturationParams) -> Result<f64> {
    z.ensure_same_shape(y, "L_z estimate")?;
    let mut max_p2: f64 = 0.0;
    let mut max_pp: f64 = 0.0;
    let mut max_res: f64 = 0.0;
    for (&zv, &yv) in z.data().iter().zip(y.data()) {
        let p = response_prime(zv, params);
        max_p2 = max_p2.max(p * p);
        max_pp = max_pp.max(response_second(zv, params).abs());
        max_res = max_res.max((response(zv, params) - yv).abs());
    }
    let s2 = sigma * sigma;
    Ok((2.0 * (max_p2 + max_pp * max_res)).max(1.0) / s2)
}

/// `d + H x - z`.
pub fn d_update(d: &Image, hx: &Image, z: &Image) -> Result<Image> {
    d.zip_map(hx, |a, b| a + b)?.zip_map(z, |a, b| a - b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// `|H x - y|`, or `|R(H x) - y|` with a saturating sensor.
    pub residual: f64,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deconvolution {
    /// Final estimate clipped to `[0, 1]`.
    pub image: Image,
    /// Unclipped final estimate.
    pub raw: Image,
    pub initial_residual: f64,
    pub diagnostics: Vec<IterationDiagnostics>,
}

impl Deconvolution {
    /// Initial followed by per-iteration residuals.
    pub fn residuals(&self) -> Vec<f64> {
        std::iter::once(self.initial_residual)
            .chain(self.diagnostics.iter().map(|d| d.residual))
            .collect()
    }
}

fn data_residual(hx: &Image, y: &Image, saturated: Option<&SaturationParams>) -> Result<f64> {
    let r = match saturated {
        Some(p) => hx.zip_map(y, |a, b| response(a, p) - b)?,
        None => hx.zip_map(y, |a, b| a - b)?,
    };
    Ok(r.norm())
}

/// Initial estimate: `y` itself, or `alpha^2 H^T y` when subsampling.
pub fn initial_estimate(y: &Image, op: &BlurOperator) -> Result<Image> {
    if op.alpha() == 1 {
        if (y.height(), y.width()) != op.output_dims() {
            return Err(mismatch(
                "observation does not match the operator output size",
            ));
        }
        Ok(y.clone())
    } else {
        let s = (op.alpha() * op.alpha()) as f64;
        Ok(op.adjoint(y)?.map(|v| s * v))
    }
}

/// Runs the full schedule from `x = initial_estimate(y)`, `z = y`, `d = 0`.
///
/// With `saturated`, `y` and the estimate are linear-domain intensities and
/// the data term goes through the sensor response.
pub fn deconvolve(
    y: &Image,
    op: &BlurOperator,
    schedule: &AdmmSchedule,
    prior: &dyn Prior,
    saturated: Option<&SaturationParams>,
) -> Result<Deconvolution> {
    if (y.height(), y.width()) != op.output_dims() {
        return Err(mismatch(format!(
            "observation is {}x{} but the operator produces {}x{}",
            y.height(),
            y.width(),
            op.output_dims().0,
            op.output_dims().1
        )));
    }
    let x0 = initial_estimate(y, op)?;
    let zero = Image::zeros(y.height(), y.width(), y.channels())?.with_encoding(y.encoding());
    let mut state = AdmmState::new(x0, y.clone(), zero)?;
    let initial_residual = data_residual(&op.apply(&state.x)?, y, saturated)?;
    let mut diagnostics = Vec::with_capacity(schedule.iterations());
    for k in 0..schedule.iterations() {
        let x = x_update(&state, op, prior, schedule.beta[k], schedule.gamma[k])?;
        let hx = op.apply(&x)?;
        let z = match saturated {
            None => z_update(&hx, &state.d, y, schedule.alpha[k])?,
            Some(p) => {
                let l_z = match schedule.l_z {
                    Some(l) => l,
                    None => estimate_l_z(&state.z, y, schedule.sigma, p)?,
                };
                z_update_saturated(
                    &state.z,
                    &hx,
                    &state.d,
                    y,
                    schedule.mu(k),
                    l_z,
                    schedule.sigma,
                    p,
                )?
            }
        };
        let d = d_update(&state.d, &hx, &z)?;
        diagnostics.push(IterationDiagnostics {
            iteration: k + 1,
            residual: data_residual(&hx, y, saturated)?,
            strength: schedule.beta[k],
        });
        state = AdmmState { x, z, d };
    }
    Ok(Deconvolution {
        image: state.x.clamp01(),
        raw: state.x,
        initial_residual,
        diagnostics,
    })
}
