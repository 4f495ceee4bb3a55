//! `lmpgcn`: dataset generation, training, evaluation, benchmarking and
//! plotting for marginal price models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmp_core::bench::{
    cmd_bench, cmd_eval, cmd_gen, cmd_plot, cmd_train, BenchError, EpochRecord, RunConfig,
};
use lmp_core::models::ModelKind;
use lmp_core::pipeline::Mode;

/// Epochs between progress lines during training.
const PROGRESS_EVERY: usize = 100;

#[derive(Parser)]
#[command(
    name = "lmpgcn",
    version,
    about = "Marginal price prediction with graph convolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample load scenarios, solve the OPF for each and write the dataset.
    Gen(RunArgs),
    /// Train one model (or every configured model) on the dataset.
    Train(RunArgs),
    /// Evaluate trained checkpoints on the test split.
    Eval(RunArgs),
    /// Train and evaluate every model on one mode, or both when `--mode` is
    /// absent, and write the comparison table.
    Bench(RunArgs),
    /// Render SVG charts from the CSVs of an evaluated run.
    Plot(PlotArgs),
}

/// Flags override the matching fields of `--config`. Without a config file
/// `--case` and `--seed` are required.
#[derive(Args)]
struct RunArgs {
    /// Run config (TOML); flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid case file; required without --config.
    #[arg(long)]
    case: Option<PathBuf>,
    /// predict or forecast.
    #[arg(long)]
    mode: Option<Mode>,
    /// Restrict to one model: cheb, gcn1 or fcnn.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Seed for scenarios, split, initialization and batching; required without --config.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs [default: 2000].
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory [default: runs].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of load scenarios [default: 2000].
    #[arg(long)]
    scenarios: Option<usize>,
    /// Samples per Adam step [default: full batch].
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Output directory of an evaluated run.
    #[arg(long)]
    out: PathBuf,
    /// predict or forecast.
    #[arg(long, default_value = "predict")]
    mode: Mode,
    /// Bus id for the predicted-versus-actual charts; defaults to the first.
    #[arg(long)]
    bus: Option<u32>,
}

enum Failure {
    Usage(String),
    Bench(BenchError),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Bench(e)
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => match (&self.case, self.seed) {
                (Some(case), Some(seed)) => RunConfig::new(case, seed),
                _ => {
                    return Err(Failure::Usage(
                        "--case and --seed are required without --config".into(),
                    ))
                }
            },
        };
        if let Some(case) = &self.case {
            cfg.case = case.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(epochs) = self.epochs {
            cfg.epochs = epochs;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(n) = self.scenarios {
            cfg.scenarios = n;
        }
        if self.batch_size.is_some() {
            cfg.batch_size = self.batch_size;
        }
        if let Some(kind) = self.model {
            let spec = cfg.spec(kind);
            cfg.models = vec![spec];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn progress(kind: ModelKind, total: usize) -> impl FnMut(&EpochRecord) {
    move |r| {
        if r.epoch % PROGRESS_EVERY == 0 || r.epoch == total {
            eprintln!(
                "{kind} epoch {}/{total}: train {:.6e} test {:.6e}",
                r.epoch, r.train_mse, r.test_mse
            );
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen(args) => {
            let cfg = args.config()?;
            let report = cmd_gen(&cfg)?;
            let m = &report.dataset.meta;
            println!(
                "{}: {} of {} scenarios solved (success rate {:.2}%), {} samples",
                report.dir.display(),
                m.scenarios - m.failed,
                m.scenarios,
                100.0 * report.success_rate(),
                report.dataset.samples.len()
            );
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            for spec in cfg.specs() {
                let report = cmd_train(&cfg, spec.kind, progress(spec.kind, cfg.epochs))?;
                println!(
                    "{}: {} parameters, {} epochs",
                    report.dir.display(),
                    report.model.param_count(),
                    report.log.records.len()
                );
            }
        }
        Command::Eval(args) => {
            let cfg = args.config()?;
            for spec in cfg.specs() {
                let m = cmd_eval(&cfg, spec.kind)?.metrics;
                println!(
                    "{} {}: test MSE {:.6e} ($/MWh)^2, normalized {:.6e}, {} test samples",
                    m.model, m.mode, m.test_mse, m.test_mse_normalized, m.test_samples
                );
            }
        }
        Command::Bench(args) => {
            let modes = match args.mode {
                Some(mode) => vec![mode],
                None => vec![Mode::Predict, Mode::Forecast],
            };
            let cfg = args.config()?;
            let rows = cmd_bench(&cfg, &modes, |msg| eprintln!("{msg}"))?;
            println!("model,mode,test_mse");
            for m in rows {
                println!("{},{},{:.6e}", m.model, m.mode, m.test_mse);
            }
        }
        Command::Plot(args) => {
            for path in cmd_plot(&args.out, args.mode, args.bus)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Bench(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 3 } else { 2 })
        }
    }
}
