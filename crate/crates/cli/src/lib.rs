//! Argument definitions and command implementations for the `coknow`
//! binary. Kept in a library so tests can walk the flag registry.

mod commands;
pub mod llm;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use coknow_core::config::{parse_override, RunConfig};
use coknow_core::harness::{Arm, Sweep};
use coknow_core::inference::KnowledgeStrategy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PROTOCOL: i32 = 2;
pub const EXIT_SERVICE: i32 = 3;

/// Knowledge-guided prompt optimization experiments on a toy frozen
/// dual encoder.
///
/// Exit codes: 0 success, 1 usage (bad flags, config keys or missing
/// files), 2 protocol or validation failure, 3 external-service failure.
#[derive(Debug, Parser)]
#[command(name = "coknow", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic benchmark: dataset directory, class list and
    /// offline fixtures for its knowledge bank.
    Synth(SynthArgs),
    /// Generate a VK/NVK/PK knowledge bank from an LLM endpoint or offline
    /// fixtures.
    GenKnowledge(GenKnowledgeArgs),
    /// Train one run and write its checkpoint.
    Train(TrainArgs),
    /// Top-1 accuracy of a checkpoint on a dataset split. Needs no bank.
    Eval(EvalArgs),
    /// Predict classes for a feature file.
    Predict(PredictArgs),
    /// Zero-shot classification with knowledge added to the image embedding.
    ZeroshotDemo(ZeroshotArgs),
    /// One-factor ablation sweep at a single shot setting.
    Ablate(AblateArgs),
    /// Arms x shots x seeds few-shot matrix.
    Matrix(MatrixArgs),
    /// Evaluate trained runs on test splits drawn at larger noise.
    Shift(ShiftArgs),
    /// Export fused image embeddings or class vectors as CSV.
    ExportEmbeddings(ExportArgs),
    /// Print the effective flat config.
    ShowConfig(ConfigArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON config file with flat dotted keys (e.g. {"model.beta": 0.6}).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable (e.g. --set model.beta=0.8).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> coknow_core::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let overrides = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<coknow_core::Result<_>>()?;
        let cfg = base.with_overrides(&overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the JSON report here.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Write the aligned text table here.
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
    /// Worker threads for independent runs (default: available cores).
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output directory (classes.txt, train/test.features, fixtures/, config.json).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Model id the fixtures are recorded under.
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["offline_fixtures", "endpoint"])))]
pub struct GenKnowledgeArgs {
    /// Class list, one name per line.
    #[arg(long, value_name = "FILE")]
    pub classes: PathBuf,
    /// Bank JSON to write (partial banks are written with an incomplete marker).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Offline mode: directory of recorded replies.
    #[arg(long, value_name = "DIR")]
    pub offline_fixtures: Option<PathBuf>,
    /// Chat-completions endpoint (base URL or full URL). The bearer token,
    /// if any, is read from the COKNOW_API_KEY environment variable.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model id sent to the endpoint and recorded in the bank.
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
    /// Bank dataset id (default: class-list file stem).
    #[arg(long)]
    pub dataset_id: Option<String>,
    /// JSON prompt set overriding the default VK/NVK/PK prompts.
    #[arg(long, value_name = "FILE")]
    pub prompts: Option<PathBuf>,
    /// Response cache directory for endpoint mode.
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// Sampling temperature.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Maximum concurrent requests.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Retries after a transient failure.
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    /// First retry delay in milliseconds; doubles per retry.
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout_s: u64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Dataset directory written by `synth` or by hand (default: regenerate
    /// the synthetic dataset from the config).
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Knowledge bank JSON (required with --dataset; default for synthetic
    /// data is its built-in bank).
    #[arg(long, value_name = "FILE")]
    pub bank: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Shots per class (default: largest of train.shots).
    #[arg(long)]
    pub shots: Option<usize>,
    /// Run seed (default: first of train.seeds).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the run report (config, per-epoch loss, test top-1) here.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// Split to score.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Write {dataset, split, n, top1} JSON here.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint to predict with.
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// Feature file (`#dim=<d> classes=<k>` header, then label,f0,... rows).
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Write predictions here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Knowledge added to each image: oracle (true class), avg (all classes) or none.
    #[arg(long, default_value = "oracle")]
    pub strategy: KnowledgeStrategy,
    /// Write the demo report JSON here.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Factor to sweep: beta, ctxlen, position, knowledge or variant.
    #[arg(long)]
    pub sweep: Sweep,
    /// Shots per class.
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Comma-separated arms: coknow, baseline, coknow-i, coknow-le.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "coknow,baseline,coknow-i,coknow-le"
    )]
    pub arms: Vec<Arm>,
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Shots per class.
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
    /// Comma-separated test noise levels.
    #[arg(long, value_delimiter = ',', default_value = "0.7,1.4,2.8")]
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportWhat {
    /// The vectors scored at inference (fused, or concatenated for coknow-le).
    Fused,
    /// Frozen image embeddings I0.
    Image,
    /// Class vectors, labelled by class index.
    Class,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint whose model is applied.
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// Split to export.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Which vectors to export.
    #[arg(long, value_enum, default_value = "fused")]
    pub what: ExportWhat,
    /// CSV to write (label,f0,...).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<coknow_core::Error> for CliError {
    fn from(e: coknow_core::Error) -> Self {
        use coknow_core::Error as E;
        let code = match e {
            E::Input(_) | E::Config(_) | E::Template(_) | E::Io(_) => EXIT_USAGE,
            E::Protocol(_)
            | E::Validation(_)
            | E::Dimension { .. }
            | E::Index { .. }
            | E::Format { .. }
            | E::Json(_) => EXIT_PROTOCOL,
        };
        Self::new(code, e.to_string())
    }
}

/// Runs one parsed command; output goes to stdout, diagnostics to stderr.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::GenKnowledge(a) => commands::gen_knowledge(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::ZeroshotDemo(a) => commands::zeroshot(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Matrix(a) => commands::matrix(a),
        Command::Shift(a) => commands::shift(a),
        Command::ExportEmbeddings(a) => commands::export(a),
        Command::ShowConfig(a) => commands::show_config(a),
    }
}
