//! Segmentation-based synthetic blur dataset.
//!
//! Each segment (background plus up to three objects) gets its own kernel.
//! Segment masks are blurred by their kernel and renormalized per pixel;
//! the result is the mixing field of a basis blur, so every sample is an
//! exact instance of the spatially-varying model:
//!
//! ```text
//! m~_s = (k_s ⋆ m_s) / sum_t (k_t ⋆ m_t)
//! v    = clip(R(sum_s m~_s (k_s ⋆ u^gamma) + n)^(1/gamma))
//! ```
//!
//! Sample arrays are rounded to `f32` when built so the VBS1 container
//! round-trips bit for bit.
//!
//! ```text
//! VBS1: "VBS1" | u32 version | f64 noise_sigma | f64 a | f64 gamma | u64 seed
//!       | VBI1 sharp | VBI1 blurry | VBK1 basis + field | u32 H | u32 W | u32 labels
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blur::{degrade, BlurOperator, SaturationParams};
use crate::error::{invalid, mismatch, Error, FormatError, Result};
use crate::filter::correlate_replicate;
use crate::image::{Encoding, Image};
use crate::io::{encode_vbi, encode_vbk, put_u32, read_vbi_from, read_vbk_from, Reader};
use crate::kernel::{Kernel, KernelBasis, MixingField, SegmentMap};
use crate::rng::{derive_seed, stream_rng};
use crate::shake::{generate_shake_kernel, ShakeParams};

pub const VBS_MAGIC: [u8; 4] = *b"VBS1";
pub const VBS_VERSION: u32 = 1;

/// Background plus at most three object segments.
pub const MAX_SEGMENTS: usize = 4;

/// Brightness draw range for the value channel.
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.5, 1.5);
/// Default upper bound of the per-sample noise level.
pub const MAX_NOISE_SIGMA: f64 = 0.02;

/// Streak length range (pixels) and peak pre-clip intensity range.
pub const STREAK_LENGTH: (f64, f64) = (3.0, 15.0);
pub const STREAK_PEAK: (f64, f64) = (1.5, 4.0);
/// Gaussian cross-section width range (pixels).
const STREAK_WIDTH: (f64, f64) = (0.9, 1.3);
const STREAK_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub sharp: Image,
    pub blurry: Image,
    pub basis: KernelBasis,
    pub field: MixingField,
    pub segments: SegmentMap,
    pub noise_sigma: f64,
    pub params: SaturationParams,
    /// Seed of the noise stream used by `degrade`.
    pub seed: u64,
}

impl DatasetSample {
    pub fn operator(&self) -> Result<BlurOperator> {
        BlurOperator::new(self.basis.clone(), self.field.clone(), 1)
    }

    /// Recomputes the blurry image from the stored inputs (without `f32` rounding).
    pub fn regenerate_blurry(&self) -> Result<Image> {
        degrade(
            &self.operator()?,
            &self.sharp,
            &self.params,
            self.noise_sigma,
            self.seed,
        )
    }
}

/// Blurred, per-pixel renormalized segment masks.
///
/// Pixels where every blurred mask vanishes keep their own label.
pub fn blend_masks(segments: &SegmentMap, kernels: &[Kernel]) -> Result<MixingField> {
    let s_count = segments.segment_count();
    if kernels.len() != s_count {
        return Err(mismatch(format!(
            "{} kernels for {s_count} segments",
            kernels.len()
        )));
    }
    let (h, w) = (segments.height(), segments.width());
    let n = h * w;
    let mut coeffs = Vec::with_capacity(s_count * n);
    for (s, k) in kernels.iter().enumerate() {
        coeffs.extend(correlate_replicate(
            &segments.mask(s),
            h,
            w,
            k.taps(),
            k.size(),
        ));
    }
    for i in 0..n {
        let total: f64 = (0..s_count).map(|s| coeffs[s * n + i]).sum();
        if total > 1e-12 {
            for s in 0..s_count {
                coeffs[s * n + i] /= total;
            }
        } else {
            let own = segments.label(i);
            for s in 0..s_count {
                coeffs[s * n + i] = if s == own { 1.0 } else { 0.0 };
            }
        }
    }
    MixingField::new(s_count, h, w, coeffs)
}

/// Builds one sample from a sharp image, its segments and one kernel per segment.
pub fn make_sample(
    sharp: &Image,
    segments: &SegmentMap,
    kernels: &[Kernel],
    params: SaturationParams,
    noise_sigma: f64,
    seed: u64,
) -> Result<DatasetSample> {
    if segments.segment_count() > MAX_SEGMENTS {
        return Err(invalid(format!(
            "{} segments exceed the maximum of {MAX_SEGMENTS}",
            segments.segment_count()
        )));
    }
    if kernels.len() != segments.segment_count() {
        return Err(mismatch(format!(
            "{} kernels for {} segments",
            kernels.len(),
            segments.segment_count()
        )));
    }
    if (sharp.height(), sharp.width()) != (segments.height(), segments.width()) {
        return Err(mismatch("sharp image and segment map differ in size"));
    }
    let kernels: Vec<Kernel> = kernels
        .iter()
        .map(Kernel::quantize_f32)
        .collect::<Result<_>>()?;
    let basis = KernelBasis::from_kernels(&kernels)?;
    let field = blend_masks(segments, &kernels)?.quantize_f32()?;
    let sharp = sharp.quantize_f32();
    let op = BlurOperator::new(basis.clone(), field.clone(), 1)?;
    let blurry = degrade(&op, &sharp, &params, noise_sigma, seed)?.quantize_f32();
    Ok(DatasetSample {
        sharp,
        blurry,
        basis,
        field,
        segments: segments.clone(),
        noise_sigma,
        params,
        seed,
    })
}

/// HSV triple `(h in [0, 6), s, v)` of an RGB triple.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let v = r.max(g).max(b);
    let c = v - r.min(g).min(b);
    let s = if v > 0.0 { c / v } else { 0.0 };
    let h = if c == 0.0 {
        0.0
    } else if v == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if v == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    (h, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Scales the HSV value channel by `scale`. No clipping.
pub fn scale_value_channel(sharp: &Image, scale: f64) -> Result<Image> {
    if sharp.channels() != 3 {
        return Err(invalid("brightness augmentation needs a 3-channel image"));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(invalid(format!(
            "brightness scale must be >= 0, got {scale}"
        )));
    }
    let n = sharp.pixels();
    let mut data = vec![0.0; 3 * n];
    let (r, g, b) = (sharp.plane(0), sharp.plane(1), sharp.plane(2));
    for i in 0..n {
        let (h, s, v) = rgb_to_hsv(r[i], g[i], b[i]);
        let (r2, g2, b2) = hsv_to_rgb(h, s, v * scale);
        data[i] = r2;
        data[n + i] = g2;
        data[2 * n + i] = b2;
    }
    Image::new(sharp.height(), sharp.width(), 3, data, sharp.encoding())
}

/// Value-channel scaling by one uniform draw in `[0.5, 1.5]`.
pub fn brightness_augment(sharp: &Image, seed: u64) -> Result<Image> {
    let mut rng = stream_rng(seed, 0);
    let scale = rng.random_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1);
    scale_value_channel(sharp, scale)
}

#[derive(Debug, Clone, Copy)]
struct Streak {
    cx: f64,
    cy: f64,
    dir: (f64, f64),
    half_length: f64,
    width: f64,
    peak: f64,
}

impl Streak {
    /// Radius of the region where the profile exceeds 1.
    fn hot_radius(&self) -> f64 {
        self.width * (2.0 * self.peak.ln()).sqrt()
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        let (px, py) = (x - self.cx, y - self.cy);
        let t = (px * self.dir.0 + py * self.dir.1).clamp(-self.half_length, self.half_length);
        let (qx, qy) = (px - t * self.dir.0, py - t * self.dir.1);
        (qx * qx + qy * qy).sqrt()
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        let d = self.distance(x, y);
        self.peak * (-(d * d) / (2.0 * self.width * self.width)).exp()
    }
}

/// Composites `count` bright elongated blobs (peak above 1) at random
/// non-overlapping positions. Placement is by rejection; on images too small
/// to fit them all, fewer streaks are drawn.
pub fn light_streak_augment(sharp: &Image, count: usize, seed: u64) -> Result<Image> {
    if sharp.channels() != 3 {
        return Err(invalid("light streak augmentation needs a 3-channel image"));
    }
    if count == 0 {
        return Ok(sharp.clone());
    }
    let mut rng = stream_rng(seed, 1);
    let streaks = place_streaks(sharp.height(), sharp.width(), count, &mut rng);
    let (h, w) = (sharp.height(), sharp.width());
    let n = h * w;
    let mut data = sharp.data().to_vec();
    for st in &streaks {
        let reach = st.half_length + 4.0 * st.width + 1.0;
        let y0 = (st.cy - reach).floor().max(0.0) as usize;
        let y1 = ((st.cy + reach).ceil() as usize).min(h - 1);
        let x0 = (st.cx - reach).floor().max(0.0) as usize;
        let x1 = ((st.cx + reach).ceil() as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let v = st.value(x as f64, y as f64);
                for c in 0..3 {
                    let s = &mut data[c * n + y * w + x];
                    *s = s.max(v);
                }
            }
        }
    }
    Image::new(h, w, 3, data, sharp.encoding())
}

fn place_streaks(h: usize, w: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Streak> {
    let mut placed: Vec<Streak> = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..STREAK_ATTEMPTS {
            let length = rng.random_range(STREAK_LENGTH.0..=STREAK_LENGTH.1);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let width = rng.random_range(STREAK_WIDTH.0..=STREAK_WIDTH.1);
            let peak = rng.random_range(STREAK_PEAK.0..=STREAK_PEAK.1);
            let margin = length / 2.0 + 3.0 * width + 1.0;
            if 2.0 * margin >= h as f64 || 2.0 * margin >= w as f64 {
                continue;
            }
            let cx = rng.random_range(margin..w as f64 - margin);
            let cy = rng.random_range(margin..h as f64 - margin);
            let cand = Streak {
                cx,
                cy,
                dir: (angle.cos(), angle.sin()),
                half_length: length / 2.0,
                width,
                peak,
            };
            let clear = placed.iter().all(|p| {
                let d = ((p.cx - cx).powi(2) + (p.cy - cy).powi(2)).sqrt();
                d >= p.half_length + cand.half_length + p.hot_radius() + cand.hot_radius() + 2.0
            });
            if clear {
                placed.push(cand);
                break;
            }
        }
    }
    placed
}

/// Segment map from raw 8-bit labels: value 0 is background, the three
/// largest non-zero labels become objects 1..=3 (ties by label value), the
/// rest fold into the background.
pub fn segments_from_labels(height: usize, width: usize, raw: &[u8]) -> Result<SegmentMap> {
    if raw.len() != height * width {
        return Err(mismatch("label image size differs from its dimensions"));
    }
    let mut counts = [0usize; 256];
    for &l in raw {
        counts[l as usize] += 1;
    }
    let mut objects: Vec<(usize, u8)> = (1..=255u8)
        .filter(|&l| counts[l as usize] > 0)
        .map(|l| (counts[l as usize], l))
        .collect();
    objects.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut remap = [0u32; 256];
    for (i, &(_, l)) in objects.iter().take(MAX_SEGMENTS - 1).enumerate() {
        remap[l as usize] = i as u32 + 1;
    }
    SegmentMap::new(
        height,
        width,
        raw.iter().map(|&l| remap[l as usize]).collect(),
    )
}

/// Parameters of the batch generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub kernel_size: usize,
    pub seed: u64,
    pub light_streaks: bool,
    pub max_noise_sigma: f64,
    pub params: SaturationParams,
}

impl SynthConfig {
    pub fn new(kernel_size: usize, seed: u64) -> Self {
        Self {
            kernel_size,
            seed,
            light_streaks: false,
            max_noise_sigma: MAX_NOISE_SIGMA,
            params: SaturationParams::default(),
        }
    }
}

/// Generates sample `index` from a sharp image and raw labels. All randomness
/// derives from `(config.seed, index)`.
pub fn synthesize(
    sharp: &Image,
    raw_labels: &[u8],
    config: &SynthConfig,
    index: u64,
) -> Result<DatasetSample> {
    let base = derive_seed(config.seed, index);
    let mut rng = stream_rng(base, 0);
    let rgb = if sharp.channels() == 1 {
        sharp.broadcast(3)?
    } else {
        sharp.clone()
    };
    let mut augmented = brightness_augment(&rgb, rng.random())?;
    if config.light_streaks && rng.random_bool(0.5) {
        let count = rng.random_range(1..=5);
        augmented = light_streak_augment(&augmented, count, rng.random())?;
    }
    let segments = segments_from_labels(sharp.height(), sharp.width(), raw_labels)?;
    let kernels: Vec<Kernel> = (0..segments.segment_count())
        .map(|s| {
            let p = ShakeParams::new(config.kernel_size, derive_seed(base, 1000 + s as u64));
            generate_shake_kernel(&p)
        })
        .collect::<Result<_>>()?;
    let sigma = rng.random_range(0.0..=config.max_noise_sigma);
    let noise_seed: u64 = rng.random();
    make_sample(
        &augmented,
        &segments,
        &kernels,
        config.params,
        sigma,
        noise_seed,
    )
}

/// Generates samples `0..count` over `inputs` (cycled), in parallel on the
/// current rayon pool. The output does not depend on the worker count.
pub fn synthesize_batch(
    inputs: &[(Image, Vec<u8>)],
    config: &SynthConfig,
    count: usize,
) -> Result<Vec<DatasetSample>> {
    if inputs.is_empty() {
        return Err(invalid("no input images"));
    }
    (0..count)
        .into_par_iter()
        .map(|n| {
            let (img, labels) = &inputs[n % inputs.len()];
            synthesize(img, labels, config, n as u64)
        })
        .collect()
}

pub fn encode_sample(sample: &DatasetSample) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&VBS_MAGIC);
    put_u32(&mut out, VBS_VERSION);
    out.extend_from_slice(&sample.noise_sigma.to_le_bytes());
    out.extend_from_slice(&sample.params.a().to_le_bytes());
    out.extend_from_slice(&sample.params.gamma().to_le_bytes());
    out.extend_from_slice(&sample.seed.to_le_bytes());
    out.extend(encode_vbi(&sample.sharp)?);
    out.extend(encode_vbi(&sample.blurry)?);
    out.extend(encode_vbk(&sample.basis, Some(&sample.field))?);
    let seg = &sample.segments;
    put_u32(&mut out, seg.height() as u32);
    put_u32(&mut out, seg.width() as u32);
    for &l in seg.labels() {
        put_u32(&mut out, l);
    }
    Ok(out)
}

pub fn decode_sample(bytes: &[u8]) -> Result<DatasetSample> {
    let mut r = Reader::new(bytes, "VBS1");
    r.magic(VBS_MAGIC)?;
    let version = r.u32()?;
    if version != VBS_VERSION {
        return Err(FormatError::VersionMismatch {
            container: "VBS1",
            expected: VBS_VERSION,
            found: version,
        }
        .into());
    }
    let noise_sigma = r.f64()?;
    let a = r.f64()?;
    let gamma = r.f64()?;
    let seed = r.u64()?;
    let sharp = read_vbi_from(&mut r)?;
    let blurry = read_vbi_from(&mut r)?;
    let (basis, field) = read_vbk_from(&mut r)?;
    let field = field.ok_or(FormatError::Malformed {
        container: "VBS1",
        reason: "embedded VBK1 block has no mixing field".into(),
    })?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let labels = r.u32_vec(h.checked_mul(w).ok_or(FormatError::Malformed {
        container: "VBS1",
        reason: "segment dimensions overflow".into(),
    })?)?;
    if r.position() != bytes.len() {
        return Err(FormatError::Malformed {
            container: "VBS1",
            reason: format!("{} trailing bytes", bytes.len() - r.position()),
        }
        .into());
    }
    let segments = SegmentMap::new(h, w, labels)?;
    let params = SaturationParams::new(a, gamma)?;
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "stored noise sigma {noise_sigma}"
        )));
    }
    Ok(DatasetSample {
        sharp: sharp.with_encoding(Encoding::Gamma),
        blurry: blurry.with_encoding(Encoding::Gamma),
        basis,
        field,
        segments,
        noise_sigma,
        params,
        seed,
    })
}

pub fn write_sample(path: impl AsRef<Path>, sample: &DatasetSample) -> Result<()> {
    fs::write(path, encode_sample(sample)?)?;
    Ok(())
}

pub fn read_sample(path: impl AsRef<Path>) -> Result<DatasetSample> {
    decode_sample(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shake::line_kernel;

    fn gradient_rgb(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |c, y, x| {
            (0.1 + 0.6 * (x as f64 / w as f64) + 0.1 * c as f64 + 0.05 * (y % 3) as f64).min(0.9)
        })
        .unwrap()
    }

    #[test]
    fn identity_blur_keeps_sharp() {
        let sharp = gradient_rgb(12, 10);
        let seg = SegmentMap::uniform(12, 10).unwrap();
        let s = make_sample(
            &sharp,
            &seg,
            &[Kernel::delta(5).unwrap()],
            SaturationParams::default(),
            0.0,
            1,
        )
        .unwrap();
        for (a, b) in s.blurry.data().iter().zip(s.sharp.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn half_plane_masks_stay_convex() {
        let (h, w) = (16, 16);
        let labels: Vec<u32> = (0..h * w).map(|i| u32::from(i % w >= w / 2)).collect();
        let seg = SegmentMap::new(h, w, labels).unwrap();
        let kernels = [
            line_kernel(7.0, 0.3, 9).unwrap(),
            line_kernel(5.0, 1.7, 9).unwrap(),
        ];
        let field = blend_masks(&seg, &kernels).unwrap();
        for i in 0..h * w {
            let s: f64 = (0..2).map(|b| field.plane(b)[i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_segments_rejected() {
        let seg = SegmentMap::new(1, 5, vec![0, 1, 2, 3, 4]).unwrap();
        let kernels = vec![Kernel::delta(3).unwrap(); 5];
        let sharp = Image::filled(1, 5, 3, 0.5).unwrap();
        assert!(make_sample(&sharp, &seg, &kernels, SaturationParams::default(), 0.0, 0).is_err());
        let seg = SegmentMap::new(1, 5, vec![0, 1, 1, 0, 0]).unwrap();
        assert!(make_sample(
            &sharp,
            &seg,
            &kernels[..1],
            SaturationParams::default(),
            0.0,
            0
        )
        .is_err());
    }

    #[test]
    fn hsv_roundtrip() {
        for &(r, g, b) in &[
            (0.2, 0.5, 0.9),
            (0.9, 0.1, 0.1),
            (0.3, 0.3, 0.3),
            (0.0, 0.0, 0.0),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_scale_is_identity_and_mid_gray_scales() {
        let img = gradient_rgb(6, 7);
        let same = scale_value_channel(&img, 1.0).unwrap();
        for (a, b) in img.data().iter().zip(same.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let gray = Image::filled(2, 2, 3, 0.5).unwrap();
        let out = scale_value_channel(&gray, 1.5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn augmentations_reject_gray_and_are_deterministic() {
        let gray = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!(brightness_augment(&gray, 1).is_err());
        let rgb = gradient_rgb(8, 8);
        assert_eq!(
            brightness_augment(&rgb, 5).unwrap(),
            brightness_augment(&rgb, 5).unwrap()
        );
        assert_eq!(light_streak_augment(&rgb, 0, 3).unwrap(), rgb);
    }

    #[test]
    fn label_remap_keeps_three_largest() {
        let raw = [0u8, 7, 7, 7, 9, 9, 3, 3, 3, 3, 5];
        let seg = segments_from_labels(1, 11, &raw).unwrap();
        assert_eq!(seg.labels(), &[0, 2, 2, 2, 3, 3, 1, 1, 1, 1, 0]);
    }
}
