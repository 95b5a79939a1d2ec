use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;


#[derive(Debug, Parser)]
#[command(name = "sic", version, about = "Semantic measures, rate-distortion-perception solvers and a progressive toy image codec")]
pub struct Cli {
    /// Seed for solver restarts and detail sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output file; stdout when omitted for text outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shannon and semantic entropy of a distribution under a partition.
    Measures(MeasuresArgs),
    /// Sweep a rate-distortion(-perception) solver over multiplier settings.
    Rdp(RdpArgs),
    /// Encode a PGM image into a progressive .sic bitstream.
    Encode(EncodeArgs),
    /// Decode a .sic bitstream into one or more sampled reconstructions.
    Decode(DecodeArgs),
    /// Rate, PSNR and stub distance for every level prefix of one image.
    Sweep(SweepArgs),
    /// Write the synthetic test corpus and its fitted static model.
    Corpus(CorpusArgs),
}

#[derive(Debug, Args)]
pub struct MeasuresArgs {
    /// Probability vector, or an object with "probs" and optionally "partition".
    #[arg(long)]
    pub dist: PathBuf,
    /// Partition as a list of index groups; singletons when absent.
    #[arg(long)]
    pub partition: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    /// Blahut–Arimoto; `lambda_d` is the slope, `lambda_p` is ignored.
    Classical,
    /// Descent on the rate-distortion-perception Lagrangian, singleton synsets.
    Perception,
    /// Descent over encoders onto the problem's reconstruction synsets.
    Synonymous,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("multipliers").required(true).args(["sweep", "lambda_d"])))]
pub struct RdpArgs {
    #[arg(value_enum)]
    pub solver: Solver,
    /// Problem document: source, distortion and optional partition.
    #[arg(long)]
    pub problem: PathBuf,
    /// List of {"lambda_d", "lambda_p"} settings.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Single distortion multiplier instead of a sweep file.
    #[arg(long)]
    pub lambda_d: Option<f64>,
    /// Perception multiplier of the single point (default 0).
    #[arg(long, conflicts_with = "sweep")]
    pub lambda_p: Option<f64>,
    /// Solver settings (JSON); missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArg {
    /// Transform settings (JSON) overriding the default 8×8 configuration.
    #[arg(long)]
    pub transform: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Number of leading channel groups to code; all model levels when absent.
    #[arg(long)]
    pub levels: Option<usize>,
    #[command(flatten)]
    pub transform: TransformArg,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Sample j is written to `<prefix>j.pgm`.
    #[arg(long)]
    pub out_prefix: String,
    /// Original image for the metrics; the synonymous-only reconstruction otherwise.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Metrics file; `metrics.json` next to the samples when absent.
    #[arg(long, conflicts_with = "no_metrics")]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub no_metrics: bool,
    #[command(flatten)]
    pub transform: TransformArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub transform: TransformArg,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Level count of the fitted model.
    #[arg(long, default_value_t = sic_core::corpus::DEFAULT_LEVELS)]
    pub levels: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("sic: {f}");
            ExitCode::from(f.code())
        }
    }
}
