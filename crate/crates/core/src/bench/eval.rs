use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::models::{Model, ModelKind};
use crate::pipeline::{Dataset, Feature, Mode, Split};

/// One row per (test sample, bus): the data behind predicted-versus-actual
/// price plots.
pub const PREDICTIONS_HEADER: &str = "scenario,bus,predicted,actual";
pub const MSE_TABLE_HEADER: &str = "model,mode,test_mse,test_mse_normalized,param_count";

/// Test-split metrics for one trained model. `test_mse` is in ($/MWh)² and
/// equals the mean of `(predicted − actual)²` over the prediction rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub model: ModelKind,
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub param_count: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub test_mse_normalized: f64,
    pub test_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub scenario: usize,
    pub bus: u32,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub rows: Vec<PredictionRow>,
}

/// Denormalized predictions for `idx`, sample-major then bus order, with the
/// normalized MSE.
fn predict_split(
    model: &Model,
    ds: &Dataset,
    idx: &[usize],
    features: &[Feature],
) -> Result<(Vec<PredictionRow>, f64), BenchError> {
    let (x, y) = ds.batch(idx, features);
    let pred = model.predict(&x)?;
    let b = idx.len();
    let mut rows = Vec::with_capacity(b * ds.n_bus());
    let mut sq = 0.0;
    for (s, &i) in idx.iter().enumerate() {
        let sample = &ds.samples[i];
        for (bus, id) in ds.meta.bus_ids.iter().enumerate() {
            let z = pred.data()[bus * b + s];
            let dz = z - y.data()[bus * b + s];
            sq += dz * dz;
            rows.push(PredictionRow {
                scenario: sample.scenario,
                bus: *id,
                predicted: ds.stats.lambda.denormalize(bus, z),
                actual: sample.lambda[bus],
            });
        }
    }
    Ok((rows, sq / (b * ds.n_bus()) as f64))
}

pub fn rows_mse(rows: &[PredictionRow]) -> f64 {
    rows.iter()
        .map(|r| (r.predicted - r.actual) * (r.predicted - r.actual))
        .sum::<f64>()
        / rows.len() as f64
}

pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    features: &[Feature],
    seed: u64,
    epochs: usize,
) -> Result<Evaluation, BenchError> {
    if ds.n_bus() != model.n_nodes() {
        return Err(BenchError::DatasetModelMismatch {
            dataset: ds.n_bus(),
            model: model.n_nodes(),
        });
    }
    let test_idx = ds.indices(Split::Test);
    if test_idx.is_empty() {
        return Err(BenchError::Config("test split is empty".into()));
    }
    let (train_rows, _) = predict_split(model, ds, &ds.indices(Split::Train), features)?;
    let (rows, test_norm) = predict_split(model, ds, &test_idx, features)?;
    let metrics = Metrics {
        model: model.spec().kind,
        mode: ds.meta.mode,
        seed,
        epochs,
        param_count: model.param_count(),
        train_mse: rows_mse(&train_rows),
        test_mse: rows_mse(&rows),
        test_mse_normalized: test_norm,
        test_samples: test_idx.len(),
    };
    Ok(Evaluation { metrics, rows })
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e}",
            r.scenario, r.bus, r.predicted, r.actual
        );
    }
    out
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRow>, BenchError> {
    let mut lines = text.lines();
    if lines.next() != Some(PREDICTIONS_HEADER) {
        return Err(BenchError::Format("predictions header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || BenchError::Format(format!("predictions line {}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(PredictionRow {
                scenario: f[0].parse().map_err(|_| bad())?,
                bus: f[1].parse().map_err(|_| bad())?,
                predicted: f[2].parse().map_err(|_| bad())?,
                actual: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// MSE bar-chart data, sorted by test MSE (ties broken by model name).
pub fn mse_table_csv(metrics: &[Metrics]) -> String {
    let mut sorted: Vec<&Metrics> = metrics.iter().collect();
    sort_metrics(&mut sorted);
    let mut out = format!("{MSE_TABLE_HEADER}\n");
    for m in sorted {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{}",
            m.model, m.mode, m.test_mse, m.test_mse_normalized, m.param_count
        );
    }
    out
}

pub(crate) fn sort_metrics(metrics: &mut [&Metrics]) {
    metrics.sort_by(|a, b| {
        a.test_mse
            .total_cmp(&b.test_mse)
            .then_with(|| a.model.as_str().cmp(b.model.as_str()))
            .then_with(|| a.mode.as_str().cmp(b.mode.as_str()))
    });
}

/// Rows of an MSE table as `(model, mode, test_mse)`.
pub fn parse_mse_table(text: &str) -> Result<Vec<(String, String, f64)>, BenchError> {
    let mut lines = text.lines();
    if lines.next() != Some(MSE_TABLE_HEADER) {
        return Err(BenchError::Format("MSE table header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let mse = f.get(2).and_then(|v| v.parse().ok());
            match (f.len(), mse) {
                (5, Some(mse)) => Ok((f[0].to_string(), f[1].to_string(), mse)),
                _ => Err(BenchError::Format(format!("MSE table line {}", i + 2))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(model: ModelKind, mse: f64) -> Metrics {
        Metrics {
            model,
            mode: Mode::Predict,
            seed: 1,
            epochs: 2,
            param_count: 3,
            train_mse: 0.5,
            test_mse: mse,
            test_mse_normalized: mse / 10.0,
            test_samples: 4,
        }
    }

    #[test]
    fn predictions_round_trip() {
        let rows = vec![
            PredictionRow {
                scenario: 3,
                bus: 7,
                predicted: 0.1 + 0.2,
                actual: -41.25,
            },
            PredictionRow {
                scenario: 3,
                bus: 9,
                predicted: 1e-17,
                actual: 36.723_781_234_5,
            },
        ];
        assert_eq!(parse_predictions(&predictions_csv(&rows)).unwrap(), rows);
        let mse = rows_mse(&rows);
        assert_eq!(
            mse,
            ((0.3f64 + 41.25).powi(2) + 36.723_781_234_5f64.powi(2)) / 2.0
        );
    }

    #[test]
    fn perfect_predictions_have_zero_mse() {
        let rows: Vec<PredictionRow> = (0..5)
            .map(|i| PredictionRow {
                scenario: i,
                bus: 1,
                predicted: 20.0 + i as f64 * 0.37,
                actual: 20.0 + i as f64 * 0.37,
            })
            .collect();
        assert_eq!(rows_mse(&rows), 0.0);
    }

    #[test]
    fn table_is_sorted_by_mse() {
        let m = [
            metrics(ModelKind::Fcnn, 3.0),
            metrics(ModelKind::Cheb, 1.0),
            metrics(ModelKind::Gcn1, 2.0),
        ];
        let table = parse_mse_table(&mse_table_csv(&m)).unwrap();
        let names: Vec<&str> = table.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(names, ["cheb", "gcn1", "fcnn"]);
        assert_eq!(table[2].2, 3.0);
    }

    #[test]
    fn metrics_serialize_to_toml() {
        let m = metrics(ModelKind::Cheb, 1.0 / 3.0);
        let back: Metrics = toml::from_str(&toml::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
