//! `brandalign` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or settings (exit 2).
    Usage(String),
    /// Anything that went wrong while doing the work (exit 1).
    Runtime(anyhow::Error),
    /// `repro` finished but an acceptance check failed (exit 3).
    Acceptance(String),
}

impl From<brandalign::Error> for CliError {
    fn from(e: brandalign::Error) -> Self {
        match e {
            brandalign::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(name = "brandalign", version, about = "Train, align and evaluate multi-brand hotel embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-brand world.
    Gen(GenArgs),
    /// Train one brand's embedding model.
    Train(TrainArgs),
    /// Fit a projection between two embedding spaces.
    Align(AlignArgs),
    /// Score next-click prediction with hits@k and MRR@k.
    Eval(EvalArgs),
    /// Run the full reference experiment and check its outcomes.
    Repro(ReproArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Serialize)]
pub struct GenArgs {
    /// Flat TOML file of settings; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write 8:1:1 train/val/test session files per brand.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub split: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_markets: Option<usize>,
    #[arg(long)]
    pub hotels_per_market: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub d_a_in: Option<usize>,
    #[arg(long)]
    pub d_g_in: Option<usize>,
    #[arg(long = "sessions")]
    pub n_sessions_per_brand: Option<usize>,
    #[arg(long, value_parser = parse_range)]
    pub session_length: Option<(usize, usize)>,
    #[arg(long = "bias")]
    pub brand_bias_strength: Option<f64>,
    /// Fraction of hotels present in the brand mapping.
    #[arg(long = "overlap")]
    pub overlap_fraction: Option<f64>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    Ok((a.parse().map_err(|e| format!("{e}"))?, b.parse().map_err(|e| format!("{e}"))?))
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegArg {
    Norm,
    SquaredNorm,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

/// Model hyperparameters shared by `train`.
#[derive(Args, Serialize)]
pub struct ModelFlags {
    #[arg(long)]
    pub d_click: Option<usize>,
    #[arg(long)]
    pub d_amenity: Option<usize>,
    #[arg(long)]
    pub d_geo: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2_weight: Option<f64>,
    /// Strength of the pull towards the source embeddings.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub reg_variant: Option<RegArg>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Steps between learning-curve checkpoints.
    #[arg(long)]
    pub eval_every: Option<u64>,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Training sessions (JSONL).
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    #[arg(long)]
    pub brand: Option<String>,
    /// Embedding file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frozen source-brand embeddings (needed when lambda > 0).
    #[arg(long)]
    pub source_embeddings: Option<PathBuf>,
    /// Source -> target hotel mapping (TSV).
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Learning-curve file to write; needs --curve-sessions.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Held-out sessions scored (model mode) at each checkpoint.
    #[arg(long)]
    pub curve_sessions: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    /// Unconstrained least squares.
    Lp,
    /// Orthogonal Procrustes.
    Procrustes,
}

#[derive(Args, Serialize)]
pub struct AlignArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub target_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Projection file to write; a JSON fit summary goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Cosine,
    Model,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolArg {
    Market,
    Global,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionArg {
    TargetToSource,
    SourceToTarget,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Test sessions (JSONL).
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    /// Brand of the sessions.
    #[arg(long)]
    pub brand: Option<String>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Projection applied to the embeddings before scoring.
    #[arg(long)]
    pub apply_projection: Option<PathBuf>,
    /// Look hotels up through --mapping (zero-shot, other brand's space).
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub cross_brand: bool,
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    /// Scoring mode; repeat for several.
    #[arg(long, value_enum)]
    pub mode: Option<Vec<ModeArg>>,
    /// Cutoff; repeat for several.
    #[arg(long)]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub pool: Option<PoolArg>,
    /// Highest tolerated fraction of events whose query has no vector.
    #[arg(long)]
    pub max_missing: Option<f64>,
    /// Metrics file (JSONL); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct ReproArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory for tables, curves and the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Small world, finishes in seconds.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub quick: bool,
    /// Seed for both the world and the training runs.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Align(a) => commands::align(a),
        Command::Eval(a) => commands::eval(a),
        Command::Repro(a) => commands::repro(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Acceptance(msg)) => {
            eprintln!("acceptance failure: {msg}");
            ExitCode::from(3)
        }
    }
}
