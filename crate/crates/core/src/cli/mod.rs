//! Command-line front end.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use commands::run;

#[derive(Debug, Parser)]
#[command(name = "gcnsim", version, about = "Simulated distributed full-batch GCN training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition a graph and report its communication metrics.
    Partition(PartitionCmd),
    /// Run one distributed SpMM and report its ledger and model check.
    SpmmBench(SpmmBenchCmd),
    /// Train a GCN and write the per-epoch history.
    Train(TrainCmd),
    /// Write a synthetic graph (and features/labels where defined).
    GenGraph(GenGraphCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    MatrixMarket,
    EdgeListTsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionerArg {
    Block,
    Random,
    GreedyTv,
    Gvb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    #[value(name = "1d-oblivious")]
    #[serde(rename = "1d-oblivious")]
    Oblivious1d,
    #[value(name = "1d-sparse")]
    #[serde(rename = "1d-sparse")]
    Sparse1d,
    #[value(name = "15d-oblivious")]
    #[serde(rename = "15d-oblivious")]
    Oblivious15d,
    #[value(name = "15d-sparse")]
    #[serde(rename = "15d-sparse")]
    Sparse15d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationArg {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Sbm,
    Grid,
    Star,
    Cliques,
    StarGrid,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GraphArgs {
    /// Graph file (Matrix Market or TSV edge list).
    #[arg(long)]
    pub graph: PathBuf,
    /// Input format; inferred from the extension when absent (.mtx is Matrix Market).
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Symmetrize the adjacency before use.
    #[arg(long)]
    pub symmetrize: bool,
    /// Skip self-loop symmetric normalization.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PartitionArgs {
    #[arg(long, value_enum, default_value = "gvb")]
    pub partitioner: PartitionerArg,
    /// Load tolerance on per-part nonzeros.
    #[arg(long, default_value_t = 0.10)]
    pub epsilon: f64,
    /// Weight of the maximum send volume in refinement; defaults to the part count.
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PartitionCmd {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub part: PartitionArgs,
    /// Number of parts.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    #[arg(long)]
    pub p: usize,
    /// Replication factor.
    #[arg(long, default_value_t = 1)]
    pub c: usize,
    #[arg(long, value_enum, default_value = "1d-sparse")]
    pub variant: VariantArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpmmBenchCmd {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub part: PartitionArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Width of the random dense operand.
    #[arg(long, default_value_t = 16)]
    pub f: usize,
    /// Latency per message for the cost model, in seconds.
    #[arg(long, default_value_t = 1e-6)]
    pub alpha: f64,
    /// Seconds per communicated scalar for the cost model.
    #[arg(long, default_value_t = 1e-9)]
    pub beta: f64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainCmd {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub part: PartitionArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Feature file; defaults to the graph's `.features.tsv` sidecar.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Label file; defaults to the graph's `.labels.tsv` sidecar.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Generate this many synthetic feature columns instead of reading them.
    #[arg(long)]
    pub synthetic_features: Option<usize>,
    /// Label signal added to synthetic features.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    /// Generate labels as this many contiguous vertex ranges instead of reading them.
    #[arg(long)]
    pub synthetic_labels: Option<usize>,
    /// Fraction of vertices in the training mask.
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = crate::gcn::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationArg,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenGraphCmd {
    #[arg(long, value_enum)]
    pub kind: GraphKind,
    /// Output graph file; `.mtx` writes Matrix Market, anything else a TSV edge list.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Vertices (sbm).
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Communities (sbm).
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0.2)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    /// Lattice side (grid, star-grid).
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    /// Extra hub vertices (star-grid).
    #[arg(long, default_value_t = 6)]
    pub hubs: usize,
    /// Lattice neighbors per hub (star-grid).
    #[arg(long, default_value_t = 40)]
    pub hub_degree: usize,
    /// Leaves (star).
    #[arg(long, default_value_t = 16)]
    pub leaves: usize,
    /// Clique count (cliques).
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Clique size (cliques).
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    /// Feature columns written next to an sbm graph.
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
}
