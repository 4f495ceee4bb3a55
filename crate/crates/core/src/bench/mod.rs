//! Run configuration, training, evaluation, benchmark tables and charts.
//!
//! Output layout under `out`:
//!
//! ```text
//! bench.csv                       comparison table across models and modes
//! <mode>/dataset.csv, loads.csv, dataset.toml
//! <mode>/mse_table.csv            per-mode MSE bar data
//! <mode>/<model>/checkpoint.txt
//! <mode>/<model>/train_log.csv
//! <mode>/<model>/metrics.toml
//! <mode>/<model>/predictions.csv  one row per test sample and bus
//! ```

mod config;
mod eval;
pub mod plot;
mod train;

pub use config::{default_features, RunConfig};
pub use eval::{
    evaluate, mse_table_csv, parse_mse_table, parse_predictions, predictions_csv, rows_mse,
    Evaluation, Metrics, PredictionRow, MSE_TABLE_HEADER, PREDICTIONS_HEADER,
};
pub use train::{batch_mse, train, EpochRecord, TrainLog, TrainOptions, TRAIN_LOG_HEADER};

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{build_admittance, build_gso, parse_case, GridCase, GridError, Gso};
use crate::models::{build_model, Model, ModelError, ModelKind};
use crate::neural::{Checkpoint, CheckpointError, NeuralError};
use crate::opf::OpfError;
use crate::pipeline::{
    gen_scenarios_with, label_dataset, Dataset, Feature, LabelOptions, Mode, PipelineError,
    DATASET_FILE,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.toml";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MSE_TABLE_FILE: &str = "mse_table.csv";
pub const BENCH_FILE: &str = "bench.csv";

/// Power-iteration tolerance for the spectral bound of the GSO.
const GSO_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {0}")]
    Format(String),
    #[error("dataset has {dataset} buses but the model expects {model}")]
    DatasetModelMismatch { dataset: usize, model: usize },
    #[error("{} not found; run `{}` first", .0.display(), .1)]
    MissingArtifact(PathBuf, &'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// True when the error comes from the OPF solver rather than from the
    /// inputs.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            BenchError::Pipeline(PipelineError::TooManyFailures { .. }) => true,
            BenchError::Pipeline(PipelineError::Opf(e)) => matches!(
                e,
                OpfError::SingularKktSystem { .. }
                    | OpfError::MaxIterations(_)
                    | OpfError::Infeasible(_)
                    | OpfError::ResolveFailed(_)
            ),
            _ => false,
        }
    }
}

pub fn mode_dir(out: &Path, mode: Mode) -> PathBuf {
    out.join(mode.as_str())
}

pub fn model_dir(out: &Path, mode: Mode, kind: ModelKind) -> PathBuf {
    mode_dir(out, mode).join(kind.as_str())
}

pub fn load_case(path: &Path) -> Result<GridCase, BenchError> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    Ok(parse_case(&text)?)
}

/// `|Y|` of the case with its Chebyshev scaling.
pub fn case_gso(case: &GridCase) -> Result<Gso, BenchError> {
    Ok(build_gso(&build_admittance(case)?, GSO_TOL)?)
}

#[derive(Debug, Clone)]
pub struct GenReport {
    pub dataset: Dataset,
    pub dir: PathBuf,
}

impl GenReport {
    pub fn success_rate(&self) -> f64 {
        let m = &self.dataset.meta;
        1.0 - m.failed as f64 / m.scenarios as f64
    }
}

/// Generate and label scenarios, then write the dataset files.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenReport, BenchError> {
    cfg.validate()?;
    let case = load_case(&cfg.case)?;
    let scenarios = gen_scenarios_with(&case, cfg.scenarios, cfg.mode, cfg.seed, &cfg.scenario);
    let opts = LabelOptions {
        max_failure_rate: cfg.max_failure_rate,
        split_seed: cfg.seed,
        ..LabelOptions::default()
    };
    let dataset = label_dataset(&case, &scenarios, cfg.mode, &opts)?;
    let dir = mode_dir(&cfg.out, cfg.mode);
    dataset.save(&dir)?;
    Ok(GenReport { dataset, dir })
}

/// The dataset written by `gen` for the configured mode, checked against
/// the case.
pub fn load_dataset(cfg: &RunConfig, case: &GridCase) -> Result<Dataset, BenchError> {
    let dir = mode_dir(&cfg.out, cfg.mode);
    if !dir.join(DATASET_FILE).is_file() {
        return Err(BenchError::MissingArtifact(dir.join(DATASET_FILE), "gen"));
    }
    let ds = Dataset::load(&dir)?;
    if ds.meta.mode != cfg.mode {
        return Err(BenchError::Config(format!(
            "{} holds a {} dataset",
            dir.display(),
            ds.meta.mode
        )));
    }
    if ds.meta.bus_ids != case.bus_ids() {
        return Err(BenchError::DatasetModelMismatch {
            dataset: ds.n_bus(),
            model: case.n_buses(),
        });
    }
    Ok(ds)
}

fn features_to_str(features: &[Feature]) -> String {
    features
        .iter()
        .map(|f| f.as_str())
        .collect::<Vec<_>>()
        .join(",")
}

fn features_from_str(s: &str) -> Result<Vec<Feature>, BenchError> {
    s.split(',')
        .map(|f| {
            f.parse()
                .map_err(|_| BenchError::Format(format!("feature `{f}` in checkpoint")))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    pub log: TrainLog,
    pub dir: PathBuf,
}

/// Train `kind` on the configured dataset and write its checkpoint and log.
pub fn cmd_train(
    cfg: &RunConfig,
    kind: ModelKind,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport, BenchError> {
    cfg.validate()?;
    let case = load_case(&cfg.case)?;
    let ds = load_dataset(cfg, &case)?;
    let spec = cfg.spec(kind);
    let gso = if kind.needs_gso() {
        Some(case_gso(&case)?)
    } else {
        None
    };
    let mut model = build_model(&spec, ds.n_bus(), gso.as_ref(), cfg.seed)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: cfg.adam,
        seed: cfg.seed,
        features: cfg.features.clone(),
    };
    let log = train(&mut model, &ds, &opts, on_epoch)?;
    let dir = model_dir(&cfg.out, cfg.mode, kind);
    fs::create_dir_all(&dir)?;
    let mut ck = model.to_checkpoint();
    ck.meta.extend([
        ("features".to_string(), features_to_str(&cfg.features)),
        ("seed".to_string(), cfg.seed.to_string()),
        ("epochs".to_string(), cfg.epochs.to_string()),
    ]);
    ck.write(std::io::BufWriter::new(fs::File::create(
        dir.join(CHECKPOINT_FILE),
    )?))?;
    fs::write(dir.join(TRAIN_LOG_FILE), log.to_csv())?;
    Ok(TrainReport { model, log, dir })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, BenchError> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => BenchError::MissingArtifact(path.to_path_buf(), "train"),
        _ => e.into(),
    })?;
    Ok(Checkpoint::read(BufReader::new(file))?)
}

/// Evaluate the trained `kind` on the test split and write its metrics,
/// predictions and the refreshed per-mode MSE table.
pub fn cmd_eval(cfg: &RunConfig, kind: ModelKind) -> Result<Evaluation, BenchError> {
    cfg.validate()?;
    let case = load_case(&cfg.case)?;
    let ds = load_dataset(cfg, &case)?;
    let dir = model_dir(&cfg.out, cfg.mode, kind);
    let ck = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    if ck.meta("kind") != Some(kind.as_str()) {
        return Err(BenchError::Format(format!(
            "{}: not a {kind} checkpoint",
            dir.display()
        )));
    }
    let gso = if kind.needs_gso() {
        Some(case_gso(&case)?)
    } else {
        None
    };
    let model = Model::from_checkpoint(&ck, gso.as_ref())?;
    if model.n_nodes() != ds.n_bus() {
        return Err(BenchError::DatasetModelMismatch {
            dataset: ds.n_bus(),
            model: model.n_nodes(),
        });
    }
    let features = match ck.meta("features") {
        Some(s) => features_from_str(s)?,
        None => cfg.features.clone(),
    };
    let num = |key: &str, default: u64| -> u64 {
        ck.meta(key).and_then(|v| v.parse().ok()).unwrap_or(default)
    };
    let seed = num("seed", cfg.seed);
    let epochs = num("epochs", cfg.epochs as u64) as usize;
    let evaluation = evaluate(&model, &ds, &features, seed, epochs)?;
    fs::write(
        dir.join(METRICS_FILE),
        toml::to_string(&evaluation.metrics).expect("metrics serialize"),
    )?;
    fs::write(
        dir.join(PREDICTIONS_FILE),
        predictions_csv(&evaluation.rows),
    )?;
    let all = collect_metrics(&cfg.out, cfg.mode)?;
    fs::write(
        mode_dir(&cfg.out, cfg.mode).join(MSE_TABLE_FILE),
        mse_table_csv(&all),
    )?;
    Ok(evaluation)
}

/// Metrics of every evaluated model under `out/<mode>`.
pub fn collect_metrics(out: &Path, mode: Mode) -> Result<Vec<Metrics>, BenchError> {
    let mut all = Vec::new();
    for kind in ModelKind::ALL {
        let path = model_dir(out, mode, kind).join(METRICS_FILE);
        if path.is_file() {
            let m: Metrics = toml::from_str(&fs::read_to_string(&path)?)
                .map_err(|e| BenchError::Format(format!("{}: {e}", path.display())))?;
            all.push(m);
        }
    }
    Ok(all)
}

/// Train and evaluate every configured model on every requested mode with
/// the same seed and budget. Missing datasets are generated first. Returns
/// the rows sorted by test MSE and writes them to `bench.csv`.
pub fn cmd_bench(
    cfg: &RunConfig,
    modes: &[Mode],
    mut progress: impl FnMut(&str),
) -> Result<Vec<Metrics>, BenchError> {
    cfg.validate()?;
    if modes.is_empty() {
        return Err(BenchError::Config("no modes requested".into()));
    }
    let mut rows = Vec::new();
    for &mode in modes {
        let cfg = RunConfig {
            mode,
            ..cfg.clone()
        };
        cfg.validate()?;
        if !mode_dir(&cfg.out, mode).join(DATASET_FILE).is_file() {
            progress(&format!("{mode}: generating {} scenarios", cfg.scenarios));
            let report = cmd_gen(&cfg)?;
            progress(&format!(
                "{mode}: solver success rate {:.2}%",
                100.0 * report.success_rate()
            ));
        }
        for spec in cfg.specs() {
            progress(&format!(
                "{mode}: training {} for {} epochs",
                spec.kind, cfg.epochs
            ));
            cmd_train(&cfg, spec.kind, |_| {})?;
            let evaluation = cmd_eval(&cfg, spec.kind)?;
            progress(&format!(
                "{mode}: {} test MSE {:.6e}",
                spec.kind, evaluation.metrics.test_mse
            ));
            rows.push(evaluation.metrics);
        }
    }
    let mut sorted: Vec<&Metrics> = rows.iter().collect();
    eval::sort_metrics(&mut sorted);
    let rows: Vec<Metrics> = sorted.into_iter().cloned().collect();
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(BENCH_FILE), mse_table_csv(&rows))?;
    Ok(rows)
}

/// Render SVG charts from the CSVs under `out/<mode>`: the MSE bars, a
/// predicted-versus-actual series per model for `bus` (default: the first
/// bus), and the training curves. Returns the written paths.
pub fn cmd_plot(out: &Path, mode: Mode, bus: Option<u32>) -> Result<Vec<PathBuf>, BenchError> {
    let dir = mode_dir(out, mode);
    let mut written = Vec::new();
    let table_path = dir.join(MSE_TABLE_FILE);
    if !table_path.is_file() {
        return Err(BenchError::MissingArtifact(table_path, "eval"));
    }
    let table = parse_mse_table(&fs::read_to_string(&table_path)?)?;
    let bars: Vec<(String, f64)> = table.into_iter().map(|(m, _, v)| (m, v)).collect();
    let path = dir.join("mse_bars.svg");
    fs::write(
        &path,
        plot::bar_chart(&format!("Test MSE ({mode})"), "MSE", &bars, true),
    )?;
    written.push(path);

    let mut curves = Vec::new();
    for kind in ModelKind::ALL {
        let mdir = model_dir(out, mode, kind);
        let pred_path = mdir.join(PREDICTIONS_FILE);
        if pred_path.is_file() {
            let rows = parse_predictions(&fs::read_to_string(&pred_path)?)?;
            let target = match bus.or_else(|| rows.first().map(|r| r.bus)) {
                Some(b) => b,
                None => continue,
            };
            let picked: Vec<&PredictionRow> = rows.iter().filter(|r| r.bus == target).collect();
            if picked.is_empty() {
                return Err(BenchError::Config(format!(
                    "bus {target} not in {}",
                    pred_path.display()
                )));
            }
            let series = |name: &str, f: fn(&PredictionRow) -> f64| plot::Series {
                name: name.to_string(),
                points: picked
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (i as f64, f(r)))
                    .collect(),
            };
            let svg = plot::line_chart(
                &format!("{kind} {mode}: bus {target}"),
                "test sample",
                "price ($/MWh)",
                &[
                    series("actual", |r| r.actual),
                    series("predicted", |r| r.predicted),
                ],
                false,
            );
            let path = mdir.join(format!("bus{target}.svg"));
            fs::write(&path, svg)?;
            written.push(path);
        }
        let log_path = mdir.join(TRAIN_LOG_FILE);
        if log_path.is_file() {
            let log = TrainLog::from_csv(&fs::read_to_string(&log_path)?)?;
            for (suffix, f) in [
                (
                    "train",
                    (|r: &EpochRecord| r.train_mse) as fn(&EpochRecord) -> f64,
                ),
                ("test", |r: &EpochRecord| r.test_mse),
            ] {
                curves.push(plot::Series {
                    name: format!("{kind} {suffix}"),
                    points: log.records.iter().map(|r| (r.epoch as f64, f(r))).collect(),
                });
            }
        }
    }
    if !curves.is_empty() {
        let path = dir.join("training.svg");
        let svg = plot::line_chart(
            &format!("Normalized MSE per epoch ({mode})"),
            "epoch",
            "MSE",
            &curves,
            true,
        );
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
