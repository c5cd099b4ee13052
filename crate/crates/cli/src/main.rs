mod commands;
mod config;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tactile_mpc::tactile::DatasetConfig;
use tactile_mpc::Error;

use config::{load, BenchSection, ExportKind, ExportSection, GradcheckSection, SimulateSection, TrainSection};

/// Tactile MPC toolkit: synthetic data, training, gradient checks,
/// grasp simulation and timing.
#[derive(Parser)]
#[command(name = "tactile-mpc", version)]
struct Cli {
    /// TOML file with one table per subcommand, or a run.json to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic slippage dataset.
    GenData(GenDataArgs),
    /// Train the layer parameters on a dataset.
    Train(TrainArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Run one grasp episode, or a suite of them.
    Simulate(SimulateArgs),
    /// Time coupled against decoupled forward passes.
    Bench(BenchArgs),
    /// Write frames, a penalty matrix or a QP to disk.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Half-width of the slippage-opening jitter (mm).
    #[arg(long)]
    slip_jitter: Option<f64>,
    /// Half-width of the initial-opening jitter (mm).
    #[arg(long)]
    init_jitter: Option<f64>,
    /// Replace an existing dataset in `out`.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to start from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// rmsprop or adam.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    terminal_scale: Option<f64>,
    /// Train the decoupled baseline.
    #[arg(long)]
    single_agent: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// multi, single or pd.
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    object: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Episodes per object and controller in suite mode.
    #[arg(long)]
    episodes: Option<usize>,
    /// Episode length (s).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',')]
    batches: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(value_enum)]
    what: Option<ExportKind>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    sample: Option<usize>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::GenData(a) => {
            let mut cfg: DatasetConfig = load(file)?;
            set(&mut cfg.trials, a.trials);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.protocol.slip_jitter, a.slip_jitter);
            set(&mut cfg.protocol.init_jitter, a.init_jitter);
            commands::gen_data(&cfg, &a.out, a.force)
        }
        Command::Train(a) => {
            let mut cfg: TrainSection = load(file)?;
            cfg.data = a.data.or(cfg.data);
            cfg.init = a.init.or(cfg.init);
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.train.learning_rate, a.lr);
            set(&mut cfg.train.batch_size, a.batch_size);
            set(&mut cfg.train.optimizer, a.optimizer);
            set(&mut cfg.train.seed, a.seed);
            set(&mut cfg.train.terminal_scale, a.terminal_scale);
            cfg.train.single_agent |= a.single_agent;
            commands::train_cmd(&mut cfg, &a.out)
        }
        Command::Gradcheck(a) => {
            let mut cfg: GradcheckSection = load(file)?;
            set(&mut cfg.samples, a.samples);
            set(&mut cfg.seed, a.seed);
            cfg.data = a.data.or(cfg.data);
            cfg.params = a.params.or(cfg.params);
            commands::gradcheck(&mut cfg, &a.out)
        }
        Command::Simulate(a) => {
            let mut cfg: SimulateSection = load(file)?;
            cfg.controller = a.controller.or(cfg.controller);
            cfg.object = a.object.or(cfg.object);
            cfg.params = a.params.or(cfg.params);
            set(&mut cfg.suite.seed, a.seed);
            set(&mut cfg.suite.episodes, a.episodes);
            set(&mut cfg.suite.duration, a.duration);
            commands::simulate(&mut cfg, &a.out)
        }
        Command::Bench(a) => {
            let mut cfg: BenchSection = load(file)?;
            set(&mut cfg.bench.batch_sizes, a.batches);
            set(&mut cfg.bench.repetitions, a.repetitions);
            set(&mut cfg.bench.seed, a.seed);
            cfg.params = a.params.or(cfg.params);
            commands::bench(&mut cfg, &a.out)
        }
        Command::Export(a) => {
            let mut cfg: ExportSection = load(file)?;
            set(&mut cfg.what, a.what);
            cfg.data = a.data.or(cfg.data);
            cfg.params = a.params.or(cfg.params);
            set(&mut cfg.sample, a.sample);
            commands::export(&cfg, &a.out)
        }
    }
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;

/// 2 for anything the user can fix in their inputs, 3 when the solver
/// gave up, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::FailureBudget { .. } | Error::SolverFailed { .. } => EXIT_SOLVER,
                Error::Config(_)
                | Error::InvalidProtocol(_)
                | Error::UnknownStrategy { .. }
                | Error::ShapeMismatch(_)
                | Error::MalformedName(_)
                | Error::BadMagic(_)
                | Error::DimensionMismatch { .. }
                | Error::NonPositiveDt(_)
                | Error::NonFinite(_)
                | Error::Json(_) => EXIT_VALIDATION,
                _ => 1,
            };
        }
        if cause.is::<config::ConfigError>() || cause.is::<commands::GradCheckFailed>() {
            return EXIT_VALIDATION;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
