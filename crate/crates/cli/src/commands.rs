use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use varblur::admm::{
    deconvolve, AdmmSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_GAMMA,
    DEFAULT_ITERATIONS, DEFAULT_LAMBDA,
};
use varblur::blurmap::{average_precision, blur_map};
use varblur::io::{read_image, read_label_png, write_image, write_vbk, BitDepth};
use varblur::metrics::{
    blur_strength, cpbd, registered_psnr_ssim, sharpness_index, MetricReport, DEFAULT_FILTER_SIZE,
    DEFAULT_REALIZATIONS, PSNR_FILE_CAP,
};
use varblur::prior::{GaussianPrior, IdentityPrior, Prior, TvPrior};
use varblur::sbdd::{decode_sample, synthesize_batch, write_sample, SynthConfig, VBS_MAGIC};
use varblur::shake::{generate_bank, ShakeParams};
use varblur::{degrade, BlurOperator, KernelBasis, MixingField, SaturationParams};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Depth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<Depth> for BitDepth {
    fn from(d: Depth) -> Self {
        match d {
            Depth::Eight => BitDepth::Eight,
            Depth::Sixteen => BitDepth::Sixteen,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriorKind {
    Tv,
    Gaussian,
    Identity,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct GenKernelsArgs {
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Kernel side (odd)
    #[arg(long, default_value_t = 33)]
    pub k: usize,
    #[arg(long, env = "VARBLUR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long)]
    pub sharp_dir: PathBuf,
    /// 8-bit label PNGs matched to sharp images by file stem; missing maps mean one segment
    #[arg(long)]
    pub labels_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 33)]
    pub k: usize,
    #[arg(long, env = "VARBLUR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub light_streaks: bool,
    /// Upper bound of the per-sample noise level
    #[arg(long, default_value_t = varblur::sbdd::MAX_NOISE_SIGMA)]
    pub max_noise: f64,
    #[arg(long, value_enum, default_value = "16")]
    pub depth: Depth,
}

#[derive(Args, Debug)]
pub struct SensorArgs {
    /// Display gamma
    #[arg(long, default_value_t = 2.2)]
    pub gamma: f64,
    /// Saturation smoothness
    #[arg(long, default_value_t = 50.0)]
    pub saturation_a: f64,
}

impl SensorArgs {
    fn params(&self) -> Result<SaturationParams> {
        Ok(SaturationParams::new(self.saturation_a, self.gamma)?)
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct BlurArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// VBK1 kernels (with or without a mixing field) or a VBS1 sample
    #[arg(long)]
    pub kernels: PathBuf,
    /// Basis element used when the container has no mixing field
    #[arg(long, default_value_t = 0)]
    pub kernel_index: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1)]
    pub alpha: usize,
    #[arg(long, env = "VARBLUR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sensor: SensorArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "16")]
    pub depth: Depth,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct DeblurArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub kernels: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub kernel_index: usize,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iters: usize,
    #[arg(long, value_enum, default_value = "tv")]
    pub prior: PriorKind,
    /// Model the saturating sensor response in the data term
    #[arg(long)]
    pub saturated: bool,
    /// Noise level of the observation (linear domain)
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1)]
    pub alpha: usize,
    #[command(flatten)]
    pub sensor: SensorArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration CSV: iteration, residual, strength
    #[arg(long)]
    pub diag: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "16")]
    pub depth: Depth,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct MetricsArgs {
    #[arg(long, requires = "gt")]
    pub restored: Option<PathBuf>,
    #[arg(long, requires = "restored")]
    pub gt: Option<PathBuf>,
    /// Registration search radius in pixels
    #[arg(long, default_value_t = 10)]
    pub shift: usize,
    /// Image scored by the no-reference metrics
    #[arg(long)]
    pub no_ref: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_REALIZATIONS)]
    pub si_realizations: usize,
    #[arg(long, env = "VARBLUR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Print the CSV header line before the values
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct DetectArgs {
    #[arg(long)]
    pub kernels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Mask with blurred pixels > 0.5
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// CSV destination; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub html: Option<PathBuf>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Basis and optional field from a VBK1 container or a VBS1 sample.
fn load_kernels(path: &Path) -> Result<(KernelBasis, Option<MixingField>)> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(&VBS_MAGIC) {
        let sample = decode_sample(&bytes).map_err(CliError::at(path))?;
        return Ok((sample.basis, Some(sample.field)));
    }
    varblur::io::decode_vbk(&bytes).map_err(CliError::at(path))
}

fn operator(path: &Path, index: usize, h: usize, w: usize, alpha: usize) -> Result<BlurOperator> {
    let (basis, field) = load_kernels(path)?;
    match field {
        Some(field) => {
            if (field.height(), field.width()) != (h, w) {
                return Err(varblur::Error::DimensionMismatch(format!(
                    "mixing field is {}x{} but the latent image is {h}x{w}",
                    field.height(),
                    field.width()
                ))
                .into());
            }
            Ok(BlurOperator::new(basis, field, alpha)?)
        }
        None => {
            if index >= basis.count() {
                return Err(CliError::usage(format!(
                    "--kernel-index {index} out of range for {} kernels",
                    basis.count()
                )));
            }
            let single = KernelBasis::from_kernels(&[basis.kernel(index)])?;
            Ok(BlurOperator::new(
                single,
                MixingField::single(h, w)?,
                alpha,
            )?)
        }
    }
}

pub fn gen_kernels(a: &GenKernelsArgs) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be >= 1"));
    }
    let basis = generate_bank(&ShakeParams::new(a.k, a.seed), a.count)?;
    write_vbk(&a.out, &basis, None).map_err(CliError::at(&a.out))?;
    Ok(())
}

fn sorted_files(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && keep(p))
        .collect();
    files.sort();
    Ok(files)
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let sharp_files = sorted_files(&a.sharp_dir, |p| has_ext(p, &["png", "vbi", "vbi1"]))?;
    if sharp_files.is_empty() {
        return Err(CliError::usage(format!(
            "no images in {}",
            a.sharp_dir.display()
        )));
    }
    let mut inputs = Vec::with_capacity(sharp_files.len());
    for path in &sharp_files {
        let img = read_image(path).map_err(CliError::at(path))?;
        let label_path = a.labels_dir.as_ref().map(|d| {
            d.join(path.file_stem().unwrap_or_default())
                .with_extension("png")
        });
        let labels = match label_path {
            Some(lp) if lp.is_file() => {
                let (h, w, labels) = read_label_png(&lp).map_err(CliError::at(&lp))?;
                if (h, w) != (img.height(), img.width()) {
                    return Err(varblur::Error::DimensionMismatch(format!(
                        "{} is {h}x{w} but {} is {}x{}",
                        lp.display(),
                        path.display(),
                        img.height(),
                        img.width()
                    ))
                    .into());
                }
                labels
            }
            _ => vec![0; img.height() * img.width()],
        };
        inputs.push((img, labels));
    }
    let mut config = SynthConfig::new(a.k, a.seed);
    config.light_streaks = a.light_streaks;
    config.max_noise_sigma = a.max_noise;
    let samples = synthesize_batch(&inputs, &config, a.count)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    for (i, s) in samples.iter().enumerate() {
        let stem = a.out_dir.join(format!("sample_{i:05}"));
        write_sample(stem.with_extension("vbs1"), s)
            .map_err(CliError::at(stem.with_extension("vbs1")))?;
        write_vbk(stem.with_extension("vbk1"), &s.basis, Some(&s.field))
            .map_err(CliError::at(stem.with_extension("vbk1")))?;
        let name = |suffix: &str| a.out_dir.join(format!("sample_{i:05}_{suffix}.png"));
        write_image(name("sharp"), &s.sharp, a.depth.into())
            .map_err(CliError::at(name("sharp")))?;
        write_image(name("blurry"), &s.blurry, a.depth.into())
            .map_err(CliError::at(name("blurry")))?;
    }
    Ok(())
}

pub fn blur(a: &BlurArgs) -> Result<()> {
    let u = read_image(&a.input).map_err(CliError::at(&a.input))?;
    let op = operator(&a.kernels, a.kernel_index, u.height(), u.width(), a.alpha)?;
    let v = degrade(&op, &u, &a.sensor.params()?, a.sigma, a.seed)?;
    write_image(&a.out, &v, a.depth.into()).map_err(CliError::at(&a.out))?;
    Ok(())
}

#[derive(Serialize)]
struct DiagRow {
    iteration: usize,
    residual: f64,
    strength: f64,
}

pub fn deblur(a: &DeblurArgs) -> Result<()> {
    let v = read_image(&a.input).map_err(CliError::at(&a.input))?;
    let params = a.sensor.params()?;
    let op = operator(
        &a.kernels,
        a.kernel_index,
        v.height() * a.alpha,
        v.width() * a.alpha,
        a.alpha,
    )?;
    let gamma = params.gamma();
    let y = v.map(|s| s.max(0.0).powf(gamma));
    let schedule = AdmmSchedule::geometric(
        a.iters,
        DEFAULT_BETA_START,
        DEFAULT_BETA_END,
        DEFAULT_GAMMA,
        DEFAULT_LAMBDA,
        a.sigma,
    )?;
    let prior: Box<dyn Prior> = match a.prior {
        PriorKind::Tv => Box::new(TvPrior::default()),
        PriorKind::Gaussian => Box::new(GaussianPrior::default()),
        PriorKind::Identity => Box::new(IdentityPrior),
    };
    let result = deconvolve(
        &y,
        &op,
        &schedule,
        prior.as_ref(),
        a.saturated.then_some(&params),
    )?;
    let out = result
        .image
        .map(|x| x.powf(1.0 / gamma))
        .with_encoding(v.encoding());
    write_image(&a.out, &out, a.depth.into()).map_err(CliError::at(&a.out))?;
    if let Some(path) = &a.diag {
        let mut w = csv::Writer::from_path(path)?;
        for d in &result.diagnostics {
            w.serialize(DiagRow {
                iteration: d.iteration,
                residual: d.residual,
                strength: d.strength,
            })?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Column order of the metrics CSV line and of report rows.
pub const COLUMNS: [&str; 11] = [
    "file",
    "psnr",
    "ssim",
    "dx",
    "dy",
    "intensity_scale",
    "blur_strength",
    "cpbd",
    "cpbd_no_edges",
    "sharpness_index",
    "sharpness_index_se",
];

#[derive(Serialize)]
struct FileReport<'a> {
    file: String,
    #[serde(flatten)]
    metrics: &'a MetricReport,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(file: &str, m: &MetricReport) -> Vec<String> {
    vec![
        file.to_string(),
        cell(m.psnr.map(|p| p.min(PSNR_FILE_CAP))),
        cell(m.ssim),
        m.registration.map(|s| s.dx.to_string()).unwrap_or_default(),
        m.registration.map(|s| s.dy.to_string()).unwrap_or_default(),
        cell(m.intensity_scale),
        cell(m.blur_strength),
        cell(m.cpbd),
        m.cpbd_no_edges.map(|b| b.to_string()).unwrap_or_default(),
        cell(m.sharpness_index),
        cell(m.sharpness_index_se),
    ]
}

fn write_csv<W: std::io::Write>(out: W, header: bool, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::io("<output>", e))?;
    Ok(())
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    if a.restored.is_none() && a.no_ref.is_none() {
        return Err(CliError::usage("give --restored with --gt, or --no-ref"));
    }
    let mut report = MetricReport::default();
    if let (Some(restored), Some(gt)) = (&a.restored, &a.gt) {
        let r = registered_psnr_ssim(
            &read_image(restored).map_err(CliError::at(restored))?,
            &read_image(gt).map_err(CliError::at(gt))?,
            a.shift,
        )?;
        report = report.with_registration(&r);
    }
    if let Some(path) = &a.no_ref {
        let img = read_image(path).map_err(CliError::at(path))?;
        report.blur_strength = Some(blur_strength(&img, DEFAULT_FILTER_SIZE)?);
        report = report.with_cpbd(&cpbd(&img));
        report = report.with_sharpness(&sharpness_index(&img, a.si_realizations, a.seed)?);
    }
    let file = a
        .restored
        .as_ref()
        .or(a.no_ref.as_ref())
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    write_csv(
        std::io::stdout().lock(),
        a.header,
        &[csv_row(&file, &report)],
    )?;
    if let Some(path) = &a.json {
        let doc = FileReport {
            file,
            metrics: &report,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|source| CliError::Json {
            path: path.display().to_string(),
            source,
        })?;
        text.push('\n');
        write_bytes(path, text.as_bytes())?;
    }
    Ok(())
}

pub fn detect(a: &DetectArgs) -> Result<()> {
    let (basis, field) = load_kernels(&a.kernels)?;
    let field =
        field.ok_or_else(|| CliError::usage("detect needs a container with a mixing field"))?;
    let map = blur_map(&basis, &field)?;
    write_image(&a.out, &map, BitDepth::Sixteen).map_err(CliError::at(&a.out))?;
    if let Some(gt) = &a.gt {
        let mask = read_image(gt).map_err(CliError::at(gt))?;
        let mask = if mask.channels() == 1 {
            mask
        } else {
            mask.luminance()
        };
        if (mask.height(), mask.width()) != (map.height(), map.width()) {
            return Err(varblur::Error::DimensionMismatch(format!(
                "mask is {}x{} but the map is {}x{}",
                mask.height(),
                mask.width(),
                map.height(),
                map.width()
            ))
            .into());
        }
        let blurred: Vec<bool> = mask.plane(0).iter().map(|&v| v > 0.5).collect();
        let ap = average_precision(&map, &blurred)?;
        if ap.undefined {
            println!("ap,undefined");
        } else {
            println!("ap,{}", ap.value);
        }
    }
    Ok(())
}

fn json_cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn report_row(doc: &serde_json::Value) -> Vec<String> {
    COLUMNS
        .iter()
        .map(|&c| {
            let v = match c {
                "dx" | "dy" => doc.get("registration").and_then(|r| r.get(c)),
                _ => doc.get(c),
            };
            v.map(json_cell).unwrap_or_default()
        })
        .collect()
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn html_table(rows: &[Vec<String>]) -> String {
    let mut s = String::from(
        "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>varblur report</title>\n\
         <style>table{border-collapse:collapse}td,th{border:1px solid #999;padding:2px 6px}</style>\n\
         </head>\n<body>\n<table>\n<tr>",
    );
    for c in COLUMNS {
        s.push_str(&format!("<th>{c}</th>"));
    }
    s.push_str("</tr>\n");
    for r in rows {
        s.push_str("<tr>");
        for v in r {
            s.push_str(&format!("<td>{}</td>", escape_html(v)));
        }
        s.push_str("</tr>\n");
    }
    s.push_str("</table>\n</body>\n</html>\n");
    s
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let files = sorted_files(&a.dir, |p| has_ext(p, &["json"]))?;
    let mut rows = Vec::with_capacity(files.len());
    for path in &files {
        let doc: serde_json::Value =
            serde_json::from_slice(&read_bytes(path)?).map_err(|source| CliError::Json {
                path: path.display().to_string(),
                source,
            })?;
        rows.push(report_row(&doc));
    }
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            write_csv(f, true, &rows)?;
        }
        None => write_csv(std::io::stdout().lock(), true, &rows)?,
    }
    if let Some(path) = &a.html {
        write_bytes(path, html_table(&rows).as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_rows_follow_column_order() {
        let doc = serde_json::json!({
            "file": "a.png", "psnr": 99.0, "ssim": 1.0,
            "registration": {"dx": -1, "dy": 2}, "cpbd": null
        });
        let row = report_row(&doc);
        assert_eq!(row.len(), COLUMNS.len());
        assert_eq!(&row[..5], &["a.png", "99.0", "1.0", "-1", "2"]);
        assert!(row[5..].iter().all(|c| c.is_empty()));
    }

    #[test]
    fn html_is_escaped() {
        let t = html_table(&[vec!["<x>&".into()]]);
        assert!(t.contains("<td>&lt;x&gt;&amp;</td>"));
    }

    #[test]
    fn infinite_psnr_is_capped_in_csv() {
        let m = MetricReport {
            psnr: Some(f64::INFINITY),
            ..Default::default()
        };
        assert_eq!(csv_row("f", &m)[1], "99");
    }
}
