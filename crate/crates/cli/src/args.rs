//! Command-line definitions. Tunable settings are optional so that a value
//! absent from the command line can come from `--config` or the default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "twotower", version, about = "Two-tower embedding retrieval pipeline")]
pub struct Cli {
    /// JSON object of settings keyed by flag name; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic latent-cluster corpus.
    Synth(SynthArgs),
    /// Build the shared vocabulary from a dataset.
    BuildVocab(BuildVocabArgs),
    /// Train the two towers.
    Train(TrainArgs),
    /// Embed all items and build the search index.
    BuildIndex(BuildIndexArgs),
    /// Serve one model over HTTP.
    Serve(ServeArgs),
    /// Route requests to model servers by model name.
    Proxy(ProxyArgs),
    /// Offline metrics and optional endpoint latency.
    Eval(EvalArgs),
    /// Write item or query embeddings as TSV.
    Export(ExportArgs),
    /// Replay queries against an endpoint and report latency.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub items_per_cluster: Option<usize>,
    #[arg(long)]
    pub queries_per_cluster: Option<usize>,
    #[arg(long)]
    pub words_per_cluster: Option<usize>,
    #[arg(long)]
    pub title_words: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub clicks: Option<usize>,
    #[arg(long)]
    pub heldout: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Power-law exponent of item popularity.
    #[arg(long)]
    pub skew: Option<f64>,
    #[arg(long)]
    pub polysemous_pairs: Option<usize>,
    #[arg(long)]
    pub ambiguous_share: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Where the three input files live: `--data DIR` or each file explicitly.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding users.tsv, items.tsv and interactions.tsv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<PathBuf>,
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub interactions: Option<PathBuf>,
    /// Fail on interactions referencing unknown users or items.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Human supervision file whose queries are added to the corpus.
    #[arg(long)]
    pub supervision: Option<PathBuf>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub supervision: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Embedding dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Query heads m.
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub agg_dim: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub mlp_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Upper bound on optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long)]
    pub n_rand: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub user_features: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub item_features: Option<bool>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Items file, or a data directory holding items.tsv.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected embedding dimension; the checkpoint must match it.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Graph degree M.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub ef_construction: Option<usize>,
    #[arg(long)]
    pub ef_search: Option<usize>,
    #[arg(long)]
    pub exact_threshold: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Model name requests must carry.
    #[arg(long)]
    pub name: Option<String>,
    /// Default number of hits.
    #[arg(long)]
    pub k: Option<usize>,
    /// Candidates per head as a multiple of k.
    #[arg(long)]
    pub fanout: Option<f64>,
    /// Search beam; defaults to the one stored in the index.
    #[arg(long)]
    pub ef_search: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Write the bound address here once listening.
    #[arg(long)]
    pub port_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    /// JSON `{model: [backend urls]}`.
    #[arg(long)]
    pub routes: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub health_interval_ms: Option<u64>,
    #[arg(long)]
    pub strikes: Option<u32>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub port_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory with items.tsv, users.tsv, heldout.tsv and ground-truth maps.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Distractor pool size N.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hits per query for the popularity metric.
    #[arg(long)]
    pub popularity_k: Option<usize>,
    /// Hits per query for the latency measurement.
    #[arg(long)]
    pub latency_k: Option<usize>,
    #[arg(long)]
    pub latency_queries: Option<usize>,
    /// Measure latency through this server or proxy instead of in process.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Metric report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// `items` or `queries`.
    #[arg(long)]
    pub what: Option<String>,
    /// Items file for item export.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// One query per line for query export.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// One query per line.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Stop after this many requests (0 means run for the whole duration).
    #[arg(long)]
    pub max_requests: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
