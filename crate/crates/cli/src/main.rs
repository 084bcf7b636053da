mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use crate::commands::{
    BlurArgs, DeblurArgs, DetectArgs, GenKernelsArgs, MetricsArgs, ReportArgs, SynthArgs,
};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "varblur",
    version,
    about = "Spatially-varying blur synthesis, deblurring and metrics"
)]
struct Cli {
    /// key = value file preloading flags; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bank of camera-shake kernels (VBK1)
    GenKernels(GenKernelsArgs),
    /// Synthesize blurred dataset samples from sharp images and label maps
    Synth(SynthArgs),
    /// Blur an image with a kernel container
    Blur(BlurArgs),
    /// Non-blind deconvolution with known kernels
    Deblur(DeblurArgs),
    /// Reference and no-reference image metrics
    Metrics(MetricsArgs),
    /// Per-pixel sharpness map from kernels, with optional AP against a mask
    Detect(DetectArgs),
    /// Aggregate metric JSON files into CSV and HTML
    Report(ReportArgs),
}

fn run(args: Vec<String>) -> Result<(), CliError> {
    let cmd = Cli::command();
    let args = match config::config_path(&args) {
        Some(path) => {
            let cfg = config::load(path.as_ref())?;
            config::merge(args, &cfg, &cmd)?
        }
        None => args,
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::usage(e.to_string().trim_end().to_string()));
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenKernels(a) => commands::gen_kernels(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Blur(a) => commands::blur(&a),
        Command::Deblur(a) => commands::deblur(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Detect(a) => commands::detect(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if msg.starts_with("error:") {
                eprintln!("{msg}");
            } else {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
