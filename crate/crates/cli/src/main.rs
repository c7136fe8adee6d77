//! `edgespot` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgespot::model::Variant;

#[derive(Parser, Debug)]
#[command(name = "edgespot", version, about = "Few-shot keyword spotting runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the 40x101 mel (or PCEN) map of a WAV file into a tensor container.
    Featurize(FeaturizeArgs),
    /// Enroll one prototype per keyword directory into a prototype store.
    Enroll(EnrollArgs),
    /// Score WAV files against a prototype store.
    Detect(DetectArgs),
    /// Run seeded few-shot episodes over a label-directory dataset.
    Evaluate(EvaluateArgs),
    /// Report parameter and MAC counts of a model configuration.
    Count(CountArgs),
    /// DET@FAR and AUROC from a score list.
    Metrics(MetricsArgs),
    /// Write a weight bundle generated from a seed or from the spectral read-out.
    InitWeights(InitArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Tsv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Edgespot,
    Bcresnet,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Edgespot => Variant::EdgeSpot,
            VariantArg::Bcresnet => Variant::BcResNet,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum WeightKind {
    /// Seeded uniform weights in ±0.1.
    Random,
    /// Hand-set weights producing a centered band-energy embedding.
    Spectral,
}

fn parse_far(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("FAR {v} must lie strictly between 0 and 1"))
    }
}

fn parse_tau(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(t) if t >= 1 => Ok(t),
        _ => Err(format!("width multiplier {s:?} must be an integer >= 1")),
    }
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    /// Input WAV (mono, 16 kHz).
    input: PathBuf,
    /// Output tensor container.
    #[arg(short, long)]
    output: PathBuf,
    /// Apply PCEN with default parameters instead of writing raw mel energies.
    #[arg(long)]
    pcen: bool,
}

#[derive(Args, Debug)]
struct EnrollArgs {
    /// Weight bundle.
    #[arg(short, long)]
    weights: PathBuf,
    /// One directory of WAVs per keyword; the directory name is the label.
    #[arg(required_unless_present = "root")]
    keywords: Vec<PathBuf>,
    /// Use every subdirectory of this directory as a keyword.
    #[arg(long, conflicts_with = "keywords")]
    root: Option<PathBuf>,
    /// Enrollment shots per keyword (the first K files in path order).
    #[arg(short = 'k', long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    shots: u32,
    /// Decision threshold stored with the prototypes.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    /// Output prototype store.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(short, long)]
    weights: PathBuf,
    /// Prototype store.
    #[arg(short, long)]
    store: PathBuf,
    /// WAV files or directories of WAVs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Override the stored threshold.
    #[arg(long, conflicts_with = "far", allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Calibrate the threshold to this false-alarm rate on --negatives.
    #[arg(long, requires = "negatives", value_parser = parse_far)]
    far: Option<f64>,
    /// WAV files or directories of non-keyword audio for calibration.
    #[arg(long, requires = "far", num_args = 1..)]
    negatives: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(short, long)]
    weights: PathBuf,
    /// Dataset root with one directory of WAVs per label.
    #[arg(long)]
    root: PathBuf,
    /// Target keywords per episode.
    #[arg(long, default_value_t = 11)]
    targets: usize,
    /// Non-target labels per episode.
    #[arg(long, default_value_t = 25)]
    unknown: usize,
    #[arg(short = 'k', long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    shots: u32,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    /// False-alarm rates at which to report accuracy and detection.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05], value_parser = parse_far)]
    far: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write every positive and negative best-match score as a score list.
    #[arg(long)]
    scores_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::Edgespot)]
    variant: VariantArg,
    #[arg(long, default_value_t = 1, value_parser = parse_tau)]
    tau: usize,
    /// Print the published reference counts and the deviation from them.
    #[arg(long)]
    compare_paper: bool,
    /// Print the per-row shape trace.
    #[arg(long)]
    trace: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Score list: one `label score` pair per line, label pos/neg, target/nontarget or 1/0.
    scores: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05], value_parser = parse_far)]
    far: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::Edgespot)]
    variant: VariantArg,
    #[arg(long, default_value_t = 1, value_parser = parse_tau)]
    tau: usize,
    #[arg(long, value_enum, default_value_t = WeightKind::Random)]
    kind: WeightKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Featurize(a) => commands::featurize(a),
        Command::Enroll(a) => commands::enroll(a),
        Command::Detect(a) => commands::detect(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Count(a) => commands::count(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::InitWeights(a) => commands::init_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
