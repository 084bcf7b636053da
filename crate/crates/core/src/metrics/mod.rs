//! Reference-free sharpness scores and registered distortion metrics.

mod blur_strength;
mod cpbd;
mod fullref;
mod sharpness;

pub use blur_strength::{blur_strength, DEFAULT_FILTER_SIZE};
pub use cpbd::{blur_probability, cpbd, jnb_width, CpbdResult, P_JNB};
pub use fullref::{psnr, registered_psnr_ssim, ssim, Registered, Shift, PSNR_FILE_CAP};
pub use sharpness::{
    log_gaussian_tail, periodic_tv, sharpness_index, SharpnessIndex, DEFAULT_REALIZATIONS,
};

use serde::{Serialize, Serializer};

fn capped_psnr<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(p) => s.serialize_some(&p.min(PSNR_FILE_CAP)),
        None => s.serialize_none(),
    }
}

/// Everything the `metrics` command reports; absent entries were not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    /// In memory `+inf` for an exact match; serialized capped at [`PSNR_FILE_CAP`].
    #[serde(serialize_with = "capped_psnr")]
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub registration: Option<Shift>,
    pub intensity_scale: Option<f64>,
    pub blur_strength: Option<f64>,
    pub cpbd: Option<f64>,
    pub cpbd_no_edges: Option<bool>,
    pub sharpness_index: Option<f64>,
    pub sharpness_index_se: Option<f64>,
}

impl MetricReport {
    pub fn with_registration(mut self, r: &Registered) -> Self {
        self.psnr = Some(r.psnr);
        self.ssim = Some(r.ssim);
        self.registration = Some(r.shift);
        self.intensity_scale = Some(r.scale);
        self
    }

    pub fn with_cpbd(mut self, c: &CpbdResult) -> Self {
        self.cpbd = Some(c.score);
        self.cpbd_no_edges = Some(c.no_edges());
        self
    }

    pub fn with_sharpness(mut self, s: &SharpnessIndex) -> Self {
        self.sharpness_index = Some(s.value);
        self.sharpness_index_se = s.standard_error;
        self
    }
}
