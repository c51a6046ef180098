mod commands;
mod data;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use manifest::{CliError, Recorder};

#[derive(Parser)]
#[command(name = "ridde", version, about = "Retrieval-augmented forecasting with invariant/dynamic decomposition")]
struct Cli {
    /// Worker threads. Outputs do not depend on this; 1 is the default.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Run manifest path (default: next to the command's main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a knowledge base from training windows.
    BuildKb(BuildKbArgs),
    /// Train a model; writes a checkpoint, metrics log and resolved config.
    Train(TrainArgs),
    /// Per-point forecasts with retrieval and gate diagnostics as CSV.
    Forecast(ForecastArgs),
    /// Held-out MSE/MAE in raw units, overall and per trend/seasonal part.
    Eval(EvalArgs),
    /// Monte Carlo check of the retrieval-variance bound.
    VerifyTheory(VerifyArgs),
    /// Train without and with retrieval and compare their errors.
    RagBias(RagBiasArgs),
    /// Train the full model over a K × ρ grid.
    Sweep(SweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildKb(_) => "build-kb",
            Command::Train(_) => "train",
            Command::Forecast(_) => "forecast",
            Command::Eval(_) => "eval",
            Command::VerifyTheory(_) => "verify-theory",
            Command::RagBias(_) => "rag-bias",
            Command::Sweep(_) => "sweep",
        }
    }

    /// Default manifest location: beside the main output if there is one.
    fn manifest_path(&self) -> PathBuf {
        let beside = |p: &PathBuf| manifest::with_suffix(p, ".manifest.json");
        let out = match self {
            Command::BuildKb(a) => Some(beside(&a.out)),
            Command::Train(a) => Some(beside(&a.out)),
            Command::Forecast(a) => Some(beside(&a.out)),
            Command::Eval(a) => a.out.as_ref().map(beside),
            Command::VerifyTheory(a) => a.out.as_ref().map(beside),
            Command::RagBias(a) => Some(a.out_dir.join("manifest.json")),
            Command::Sweep(a) => Some(beside(&a.out)),
        };
        out.unwrap_or_else(|| PathBuf::from(format!("ridde-{}.manifest.json", self.name())))
    }
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// `synthetic`, or a CSV file with a header row and one column per channel.
    #[arg(long, visible_alias = "input", default_value = data::SYNTHETIC)]
    pub data: String,

    /// CSV columns to use, comma-separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Built-in defaults: desk or paper.
    #[arg(long)]
    pub profile: Option<String>,

    /// Seeds both the synthetic generator and the model.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
pub struct TrainOverrides {
    /// full, no_dis, no_idd or no_retrieval.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum KbSplit {
    /// Leading share of each channel, as used for training.
    Train,
    /// Whole channels.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    /// Trailing share of each channel at the evaluation stride.
    HeldOut,
    /// Whole channels at the evaluation stride.
    All,
}

#[derive(Args)]
pub struct BuildKbArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = KbSplit::Train)]
    pub split: KbSplit,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Knowledge base from build-kb (not needed for no_retrieval).
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Config the checkpoint was trained with (default: its .config.toml).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = EvalSplit::HeldOut)]
    pub split: EvalSplit,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Seasonal period for the trend/seasonal split (required for CSV).
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long, value_enum, default_value_t = EvalSplit::HeldOut)]
    pub split: EvalSplit,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Noise {
    Gaussian,
    Uniform,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Number of retrieved horizons with uniform weights [default: 5].
    #[arg(long)]
    pub k: Option<usize>,
    /// Explicit attention weights, comma-separated; must sum to 1.
    #[arg(long, value_delimiter = ',')]
    pub omega: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Noise::Gaussian)]
    pub noise: Noise,
    /// Dimension of each retrieved vector.
    #[arg(long, default_value_t = ridde_core::analysis::variance::DEFAULT_DIM)]
    pub dim: usize,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RagBiasArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// `--ablation` picks the model compared with the no_retrieval baseline
    /// (default no_idd).
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub period: Option<usize>,
    /// Compare the baseline with itself; every delta is zero.
    #[arg(long)]
    pub control: bool,
    /// Receives report.json, baseline_plot.csv and rag_plot.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, value_delimiter = ',', default_values_t = ridde_core::analysis::SWEEP_KS)]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ridde_core::analysis::SWEEP_RHOS)]
    pub rhos: Vec<f64>,
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let manifest_path = cli.manifest.clone().unwrap_or_else(|| cli.command.manifest_path());
    let mut rec = Recorder::new(name, std::env::args().skip(1).collect(), cli.threads);

    let result = setup_threads(cli.threads).and_then(|()| {
        let parallel = cli.threads > 1;
        match &cli.command {
            Command::BuildKb(a) => commands::build_kb(a, &mut rec),
            Command::Train(a) => commands::train(a, parallel, &mut rec),
            Command::Forecast(a) => commands::forecast(a, parallel, &mut rec),
            Command::Eval(a) => commands::eval(a, parallel, &mut rec),
            Command::VerifyTheory(a) => commands::verify_theory(a, &mut rec),
            Command::RagBias(a) => commands::rag_bias(a, parallel, &mut rec),
            Command::Sweep(a) => commands::sweep(a, parallel, &mut rec),
        }
    });

    if let Err(e) = &result {
        eprintln!("error: {}", e.message());
    }
    let code = result.as_ref().map_or_else(CliError::code, |()| manifest::EXIT_OK);
    if let Err(e) = rec.finish(&result, &manifest_path) {
        eprintln!("error: cannot write manifest {}: {e}", manifest_path.display());
        return ExitCode::from(manifest::EXIT_RUNTIME as u8);
    }
    ExitCode::from(code as u8)
}

fn setup_threads(threads: usize) -> manifest::CliResult<()> {
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))
}
