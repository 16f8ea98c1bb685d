// SPDX-License-Identifier: MIT OR Apache-2.0
#![forbid(unsafe_code)]

//! `kcpd`: segment embedding sequences, score segmentations and run the
//! simulation experiments from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kcpd_core::KcpdError;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "kcpd", version, about = "Kernel change-point detection")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one embedding sequence (JSONL or CSV).
    Segment(SegmentArgs),
    /// Score a hypothesis segmentation against a reference.
    Eval(EvalArgs),
    /// Run the consistency experiment on simulated m-dependent data.
    Simulate(SimulateArgs),
    /// Detected change points across a grid of penalty constants.
    Sweep(SweepArgs),
    /// Fetch embeddings for a text file from an HTTP embedding service.
    Embed(EmbedArgs),
    /// Compare empirical block-cost tails with the concentration bound.
    Concentration(ConcentrationArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Rbf,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Pelt,
    Dp,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct KernelOpts {
    #[arg(long, value_enum, default_value = "rbf")]
    pub kernel: KernelArg,
    /// RBF bandwidth: `median` or a positive number.
    #[arg(long, default_value = "median")]
    pub bandwidth: String,
    /// Penalty constant in beta = C sqrt(T ln T). Defaults to 0.05 (rbf) or 0.088 (cosine).
    #[arg(long = "C")]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub min_size: usize,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct OutputOpts {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// The first CSV row is a header.
    #[arg(long)]
    pub skip_header: bool,
    #[command(flatten)]
    pub kernel: KernelOpts,
    /// Use this penalty instead of C sqrt(T ln T).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Scale rows to unit norm before an RBF kernel (always done for cosine).
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, value_enum, default_value = "pelt")]
    pub solver: Solver,
    #[command(flatten)]
    pub output: OutputOpts,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct EvalArgs {
    /// Reference segmentation: JSON `{"T", "change_points"}` or JSONL with `boundary_after`.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
    /// Location-error scale; defaults to the shortest reference segment.
    #[arg(long)]
    pub ell: Option<usize>,
    #[command(flatten)]
    pub output: OutputOpts,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SimOpts {
    /// Number of change points: `auto` (ceil(2 ln T)) or an integer.
    #[arg(long = "K", default_value = "auto")]
    pub k: String,
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Distance between consecutive block means.
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Minimum segment length; defaults to max(20, T / (4K)), capped to fit.
    #[arg(long)]
    pub ell: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long = "T-grid", alias = "T", value_delimiter = ',', default_value = "200,500,1000,2000")]
    pub t_grid: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[command(flatten)]
    pub sim: SimOpts,
    #[command(flatten)]
    pub kernel: KernelOpts,
    /// Record per-replicate wall-clock time (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Also write the per-replicate CSV here.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputOpts,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SweepArgs {
    /// Embedding sequence to sweep; simulated data when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub skip_header: bool,
    #[arg(long = "C-grid", value_delimiter = ',', default_value = "0.001,0.01,0.1,1,10")]
    pub c_grid: Vec<f64>,
    #[arg(long = "T", default_value_t = 500)]
    pub t: usize,
    /// Average over this many simulated replicates.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[command(flatten)]
    pub sim: SimOpts,
    #[command(flatten)]
    pub kernel: KernelOpts,
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub output: OutputOpts,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct EmbedArgs {
    /// One text per line, or JSONL rows with a `text` field.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "https://api.openai.com/v1/embeddings")]
    pub endpoint: String,
    #[arg(long, default_value = "text-embedding-3-small")]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "EMBEDDING_API_KEY")]
    pub token_env: String,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    #[arg(long, default_value = "data[i].embedding")]
    pub vector_path: String,
    #[arg(long, default_value_t = 1000)]
    pub backoff_ms: u64,
    #[arg(long, default_value_t = 1)]
    pub parallel_connections: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ConcentrationArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value = "rbf")]
    pub kernel: KernelArg,
    #[arg(long, default_value = "median")]
    pub bandwidth: String,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    /// Thresholds; eight multiples of M sqrt(2 (8m + 5) n) by default.
    #[arg(long, value_delimiter = ',')]
    pub x_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputOpts,
}

fn exit_code(err: &KcpdError) -> u8 {
    match err {
        KcpdError::Http(_) | KcpdError::CountMismatch { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    let outcome = std::panic::catch_unwind(|| match &cli.command {
        Command::Segment(a) => commands::segment(a),
        Command::Eval(a) => commands::eval(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Embed(a) => commands::embed(a),
        Command::Concentration(a) => commands::concentration(a),
    });
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(1),
    }
}
