mod commands;
mod params;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20240;

#[derive(Parser, Debug)]
#[command(name = "xfermetric", version, about = "Transferability metrics and their evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score bundles with transferability metrics.
    Score(ScoreArgs),
    /// Domain distances between source and target bundles.
    Distance(DistanceArgs),
    /// Relative transfer performance (and RTP_P of metric scores) from a perf table.
    Rtp(RtpArgs),
    /// Correlate metric scores with measured performance.
    Evaluate(EvaluateArgs),
    /// k-NN score over a range of k on one split.
    SweepK(SweepArgs),
    /// Per-metric wall times on a bundle or a synthetic one.
    Bench(BenchArgs),
    /// Render a report, sweep or bench file as SVG or Markdown.
    Report(ReportArgs),
}

/// Flags shared by the k-NN protocol.
#[derive(Args, Debug, Clone)]
pub struct KnnArgs {
    /// Neighbors per vote [default: 200].
    #[arg(long)]
    pub k: Option<usize>,
    /// Share of samples in the reference split [default: 0.8].
    #[arg(long)]
    pub split_fraction: Option<f64>,
    /// Use stratified 3-fold cross-validation instead of a single split.
    #[arg(long)]
    pub cv3: bool,
    /// Split without stratifying by class.
    #[arg(long)]
    pub no_stratify: bool,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Bundle directory (repeatable).
    #[arg(long, required = true)]
    pub bundle: Vec<PathBuf>,
    /// Comma-separated metric ids, or `all`.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Model name for the `model` column; defaults to the bundle's `model` provenance entry.
    #[arg(long)]
    pub model: Option<String>,
    #[command(flatten)]
    pub knn: KnnArgs,
    /// Hyperparameter override `metric.name=value` (repeatable).
    #[arg(long = "param", value_name = "ID.NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Record wall times in the output.
    #[arg(long)]
    pub bench: bool,
    /// Fail if any metric fails.
    #[arg(long)]
    pub strict: bool,
    /// Evaluate metrics concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Output file (.csv or .json); stdout CSV when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DistanceArgs {
    /// Source bundle directory; a comma-separated list averages over extractors.
    #[arg(long)]
    pub source: String,
    /// Target bundle directory (repeatable); comma-separated lists as for `--source`.
    #[arg(long, required = true)]
    pub target: Vec<String>,
    /// Comma-separated distance ids (fid, kid, emd, ids, imd) or `all`.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Parameter override `metric.name=value` (repeatable).
    #[arg(long = "param", value_name = "ID.NAME=VALUE")]
    pub params: Vec<String>,
    /// Ground cost for EMD.
    #[arg(long, default_value = "euclidean", value_parser = ["euclidean", "cosine"])]
    pub emd_cost: String,
    /// Also emit mean-dist rows (needs at least two targets).
    #[arg(long)]
    pub mean: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Record wall times in the output.
    #[arg(long)]
    pub bench: bool,
    /// Output file (.csv or .json); stdout CSV when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RtpArgs {
    /// Performance table `candidate,perf_p,perf_ri`.
    #[arg(long)]
    pub perf: PathBuf,
    /// Scores of pretrained extractors `candidate,metric,value`.
    #[arg(long, requires = "scores_ri")]
    pub scores_p: Option<PathBuf>,
    /// Scores of random-init extractors `candidate,metric,value`.
    #[arg(long, requires = "scores_p")]
    pub scores_ri: Option<PathBuf>,
    /// Output for the RTP/TG table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output for RTP_P scores (needs --scores-p and --scores-ri).
    #[arg(long, requires = "scores_p")]
    pub rtp_p_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Scores `candidate,metric,value[,orientation]`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Performance table `candidate,perf_p,perf_ri`.
    #[arg(long)]
    pub perf: PathBuf,
    #[arg(long, default_value = "tau_w", value_parser = ["tau_w", "tau", "pearson", "rel1"])]
    pub measure: String,
    #[arg(long, default_value = "absolute", value_parser = ["absolute", "relative"])]
    pub target: String,
    /// Symmetrize weighted tau over both rankings.
    #[arg(long)]
    pub symmetric: bool,
    /// Break Rel@1 score ties toward the worse candidate.
    #[arg(long)]
    pub pessimistic: bool,
    /// Correlate lower-better columns without negating them.
    #[arg(long)]
    pub no_invert: bool,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a bar chart.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Comma-separated k values.
    #[arg(long, default_value = "25,50,100,200,400", value_delimiter = ',')]
    pub k_values: Vec<usize>,
    #[arg(long)]
    pub split_fraction: Option<f64>,
    #[arg(long)]
    pub cv3: bool,
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output CSV `k,score`; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a line chart.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Bundle to time; a synthetic bundle is generated when omitted.
    #[arg(long, conflicts_with = "synthetic")]
    pub bundle: Option<PathBuf>,
    /// Generate a synthetic bundle (the default without --bundle).
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 512)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Source-head size of the synthetic predictions.
    #[arg(long, default_value_t = 100)]
    pub source_classes: usize,
    #[arg(long, default_value = "all", value_delimiter = ',')]
    pub metrics: Vec<String>,
    #[arg(long = "param", value_name = "ID.NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output file (.csv or .json); stdout CSV when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a wall-time bar chart.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Correlation report (.json), sweep CSV (`k,score`) or score CSV with wall times.
    #[arg(long)]
    pub input: PathBuf,
    /// Output .svg or .md; Markdown on stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("XFERMETRIC_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("XFERMETRIC_THREADS must be a non-negative integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Score(a) => commands::score(a),
        Command::Distance(a) => commands::distance(a),
        Command::Rtp(a) => commands::rtp(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::SweepK(a) => commands::sweep_k(a),
        Command::Bench(a) => commands::bench(a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
