use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sarval_core::ErrorKind;

mod commands;

#[derive(Parser)]
#[command(name = "sarval", version, about = "SAR amplitude dataset preparation and generated-image evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize every manifest image by mu + k*sigma and clip to [0, 1]
    Normalize(NormalizeArgs),
    /// Cut manifest images into fixed-size tiles
    Tile(TileArgs),
    /// Saturation-aware amplitude histograms
    Histo(HistoArgs),
    /// KL divergence between real and generated amplitude distributions
    Kl(KlArgs),
    /// GLCM / Haralick texture profile
    Glcm(GlcmArgs),
    /// Caption rank and cosine statistics from embedding files
    Align(AlignArgs),
    /// Monte-Carlo moments of offset training noise
    NoiseCheck(NoiseCheckArgs),
    /// Mean absolute weight change between two checkpoints
    Mawc(MawcArgs),
    /// Merge low-rank adapters into a base checkpoint
    LoraMerge(LoraMergeArgs),
    /// Full evaluation run from a config file
    Report(ReportArgs),
}

#[derive(Args)]
pub struct NormalizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub k: f64,
}

#[derive(Args)]
pub struct TileArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub size: usize,
    #[arg(long, default_value_t = 1024)]
    pub stride: usize,
}

#[derive(Args)]
pub struct LabelArgs {
    /// JSON array of label names (default: the 11 built-in categories)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// JSON object mapping label -> keywords
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
}

#[derive(Args)]
pub struct HistoArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long)]
    pub per_category: bool,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// CSV of category, bin_center, density (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct KlArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long)]
    pub per_category: bool,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// JSON report (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-category histogram CSV: set, category, bin_center, density
    #[arg(long)]
    pub hist_csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct GlcmArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub levels: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    pub distances: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0f64, 45.0, 90.0, 135.0])]
    pub angles: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long, default_value = "real")]
    pub set: String,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub img_emb: PathBuf,
    #[arg(long)]
    pub txt_emb: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Per-label cosine means; labels come from --manifest (ids are image paths)
    #[arg(long, requires = "manifest")]
    pub per_label: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct NoiseCheckArgs {
    #[arg(long, default_value_t = 0.035)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Values sharing one offset draw
    #[arg(long, default_value_t = 4096)]
    pub plane_size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args)]
pub struct MawcArgs {
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    #[arg(long, default_value_t = 5e-4)]
    pub threshold: f64,
    /// Grouping rules; switches --out to the per-block table
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Parameter-weighted block means
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-layer table when --groups is given
    #[arg(long)]
    pub layers: Option<PathBuf>,
}

#[derive(Args)]
pub struct LoraMergeArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub lora: PathBuf,
    /// Defaults to rank / 2
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_svg: bool,
    /// Also write unrounded report.full.json
    #[arg(long)]
    pub full_precision: bool,
}

/// Outcome of a command that may have produced partial output.
pub enum Status {
    Ok,
    Partial,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<sarval_core::Error>())
        .map(|e| e.kind());
    match kind {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Metric) => 4,
        _ => 3,
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("SARVAL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| sarval_core::Error::Config(format!("SARVAL_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    init_threads()?;
    match cli.command {
        Command::Normalize(a) => commands::normalize(a),
        Command::Tile(a) => commands::tile(a),
        Command::Histo(a) => commands::histo(a),
        Command::Kl(a) => commands::kl(a),
        Command::Glcm(a) => commands::glcm(a),
        Command::Align(a) => commands::align(a),
        Command::NoiseCheck(a) => commands::noise_check(a),
        Command::Mawc(a) => commands::mawc(a),
        Command::LoraMerge(a) => commands::lora_merge(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
