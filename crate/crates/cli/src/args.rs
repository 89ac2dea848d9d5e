use std::path::PathBuf;

use capcal::baselines::Aggregation;
use capcal::prompting::PlaceholderKind;
use capcal::IdentifierScheme;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::config::{BackendKind, HttpModeArg, InnerMethod, PriorModeArg};

/// Parses a snake_case enum name the same way the config file does.
fn snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "capcal", version, about = "Calibrated listwise reranking with generative language models")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "CAPCAL_CONFIG")]
    pub config: Option<PathBuf>,

    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, env = "CAPCAL_LOG", default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rerank every query in a task file and write a TREC run.
    Rerank(RerankArgs),
    /// Show the content-free prior, step by step, for one query.
    Prior(InspectArgs),
    /// Show the full decoding trace for one query.
    Explain(ExplainArgs),
    /// Score a run file against qrels.
    Eval(EvalArgs),
    /// Compare several run files against the same qrels.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Base,
    Capcal,
    Psc,
}

/// Settings shared by every command that scores prompts.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Backend kind. Inferred from --endpoint / --sim-spec when omitted.
    #[arg(long, env = "CAPCAL_BACKEND", value_enum)]
    pub backend: Option<BackendKind>,
    /// Base URL of the HTTP scoring service.
    #[arg(long, env = "CAPCAL_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Wire protocol of the HTTP service.
    #[arg(long, env = "CAPCAL_HTTP_MODE", value_enum)]
    pub http_mode: Option<HttpModeArg>,
    /// Model name sent in echo mode.
    #[arg(long, env = "CAPCAL_MODEL")]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long, env = "CAPCAL_AUTH_ENV")]
    pub auth_env: Option<String>,
    /// Retries per HTTP request.
    #[arg(long, env = "CAPCAL_RETRIES")]
    pub retries: Option<u32>,
    /// Simulator spec (JSON).
    #[arg(long, env = "CAPCAL_SIM_SPEC")]
    pub sim_spec: Option<PathBuf>,
    /// Prompt template in sectioned text form.
    #[arg(long, env = "CAPCAL_TEMPLATE")]
    pub template: Option<PathBuf>,
    /// Identifier scheme: numeric or alphabetic.
    #[arg(long, env = "CAPCAL_SCHEME", value_parser = snake::<IdentifierScheme>)]
    pub scheme: Option<IdentifierScheme>,
    /// Placeholder for the content-free prompt, e.g. fixed_string, space_x20.
    #[arg(long, env = "CAPCAL_PLACEHOLDER", value_parser = snake::<PlaceholderKind>)]
    pub placeholder: Option<PlaceholderKind>,
    /// Text used by the fixed_string placeholder.
    #[arg(long, env = "CAPCAL_PLACEHOLDER_TEXT")]
    pub placeholder_text: Option<String>,
    /// Calibration strength.
    #[arg(long, env = "CAPCAL_BETA")]
    pub beta: Option<f64>,
    /// When the content-free prompt is scored.
    #[arg(long, env = "CAPCAL_PRIOR_MODE", value_enum)]
    pub prior_mode: Option<PriorModeArg>,
    /// Shuffled passes for PSC.
    #[arg(long, env = "CAPCAL_PSC_K")]
    pub psc_k: Option<usize>,
    /// PSC rank aggregation: mean_rank or median_rank.
    #[arg(long, env = "CAPCAL_PSC_AGGREGATION", value_parser = snake::<Aggregation>)]
    pub psc_aggregation: Option<Aggregation>,
    /// Decoder PSC runs on each pass.
    #[arg(long, env = "CAPCAL_PSC_INNER", value_enum)]
    pub psc_inner: Option<InnerMethod>,
    /// Sliding-window size for lists longer than one prompt.
    #[arg(long, env = "CAPCAL_WINDOW_SIZE")]
    pub window_size: Option<usize>,
    /// Sliding-window stride.
    #[arg(long, env = "CAPCAL_WINDOW_STRIDE")]
    pub window_stride: Option<usize>,
    /// Seed for PSC shuffles and random placeholders.
    #[arg(long, env = "CAPCAL_SEED")]
    pub seed: Option<u64>,
    /// Queries processed in parallel.
    #[arg(long, env = "CAPCAL_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    /// Task file (JSONL).
    #[arg(long)]
    pub tasks: PathBuf,
    /// Output run file.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "capcal")]
    pub method: MethodArg,
    /// Run tag; defaults to the method name.
    #[arg(long)]
    pub tag: Option<String>,
    /// Comma-separated β values. Writes one run per value, named
    /// `<out stem>.beta<β>.<ext>`.
    #[arg(long, value_delimiter = ',')]
    pub sweep_beta: Option<Vec<f64>>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub query: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub inspect: InspectArgs,
    #[arg(long, value_enum, default_value = "capcal")]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Metric, `ndcg@K`.
    #[arg(long, default_value = "ndcg@10")]
    pub metric: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run files; the first is the reference for deltas.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value = "ndcg@10")]
    pub metric: String,
    #[arg(long)]
    pub json: bool,
}
