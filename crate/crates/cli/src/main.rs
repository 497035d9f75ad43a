mod commands;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use codectrace::corpus::Task;
use codectrace::evaluation::CorrelationMethod;
use codectrace::model::{CoarseInit, Variant};

pub const THREADS_ENV: &str = "CODECTRACE_THREADS";

/// Failures raised by the CLI itself rather than the core library.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Contract(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Contract(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "codectrace", version, about = "Codec-fingerprint source tracing")]
struct Cli {
    /// Worker threads for per-item work.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic codec corpus.
    GenCorpus(GenCorpusArgs),
    /// Pretrain the frozen semantic backbone on bona fide seen content.
    PretrainSemantic(PretrainArgs),
    /// Train one variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test splits.
    Eval(EvalArgs),
    /// Train and evaluate several variants on the same corpus and seed.
    Ablate(AblateArgs),
    /// Export the last-layer SA, AS and Fusion attention maps per utterance.
    Attn(AttnArgs),
    /// Render confusion and attention heatmaps from exported reports.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory; relative paths resolve under $CODECTRACE_OUT_ROOT.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// TOML corpus configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Task whose classes are balanced.
    #[arg(long)]
    pub task: Option<Task>,
    /// Source utterances to synthesize.
    #[arg(long)]
    pub n_utts: Option<u64>,
    /// Utterance ids above this are unseen content.
    #[arg(long)]
    pub id_threshold: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// `desk`, `paper`, or a path to a profile TOML.
    #[arg(long, default_value = "desk")]
    pub profile: String,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Corpus directory from `gen-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// Overrides the profile.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// `vq` (4 classes), `aux` or `dec` (3 classes each).
    #[arg(long, default_value = "aux")]
    pub task: Task,
    /// Overrides the profile.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides the profile.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Overrides the profile.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of patches masked per training step; overrides the profile.
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Reconstruction margin; overrides the profile.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Waveform augmentation on (`true`) or off (`false`); profile default otherwise.
    #[arg(long)]
    pub augment: Option<bool>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initialization of the coarse encoder.
    #[arg(long, default_value = "random")]
    pub coarse_init: CoarseInit,
    /// Baseline checkpoint directory for `--coarse-init tuned`.
    #[arg(long)]
    pub tuned_from: Option<PathBuf>,
    /// Semantic backbone file from `pretrain-semantic`.
    #[arg(long)]
    pub semantic: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Corpus directory from `gen-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// `baseline`, `s_mae`, `m_mae`, `sem_plus_mae`, `coarse_plus_mae` or `sastnet`.
    #[arg(long, default_value = "sastnet")]
    pub variant: Variant,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Run directory of an earlier `train` to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Corpus directory from `gen-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Semantic backbone from `pretrain-semantic`, for semantic variants.
    #[arg(long)]
    pub semantic: Option<PathBuf>,
    /// Evaluate the with/without-silence by seen/unseen grid plus the
    /// unseen-codec cell; otherwise seen content with silence only.
    #[arg(long)]
    pub grid: bool,
    /// Correlation between per-source silence proportion and F1.
    #[arg(long, default_value = "pearson")]
    pub correlation: CorrelationMethod,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Corpus directory from `gen-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', default_value = "s_mae,m_mae,sem_plus_mae,coarse_plus_mae,sastnet")]
    pub variants: Vec<Variant>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Corpus directory from `gen-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint directory of a semantic variant.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Semantic backbone from `pretrain-semantic`, for semantic variants.
    #[arg(long)]
    pub semantic: Option<PathBuf>,
    /// Record keys to export; defaults to the first `--limit` seen-content test items.
    #[arg(long, value_delimiter = ',')]
    pub keys: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Report or attention JSON files, or directories searched for them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Pixels per heatmap cell edge.
    #[arg(long, default_value_t = 24)]
    pub cell: u32,
}

/// Maps a failure to the documented exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => 2,
                CliError::Contract(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<codectrace::Error>() {
            return if e.is_io() { 4 } else { 3 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<toml::de::Error>().is_some() {
            return 3;
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        codectrace::exec::init_threads(n.max(1));
    }
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::PretrainSemantic(a) => commands::pretrain_semantic(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Attn(a) => commands::attn(a),
        Command::Plot(a) => plot::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
