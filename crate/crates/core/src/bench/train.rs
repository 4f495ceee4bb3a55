use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::BenchError;
use crate::models::Model;
use crate::neural::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::pipeline::{Dataset, Feature, Split};

/// Keeps the mini-batch order independent of other streams drawn from the
/// run seed.
const BATCH_STREAM: u64 = 0xb5ad_4ece_da1c_e2a9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Samples per step; `None` is full batch.
    pub batch_size: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    pub features: Vec<Feature>,
}

/// Normalized MSEs after one epoch. `train_mse` averages the losses seen
/// during the epoch's steps; `test_mse` is measured after its last step and
/// is NaN when the test split is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_mse,test_mse";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e}\n", r.epoch, r.train_mse, r.test_mse));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let mut lines = text.lines();
        if lines.next() != Some(TRAIN_LOG_HEADER) {
            return Err(BenchError::Format("train log header".into()));
        }
        let records = lines
            .enumerate()
            .map(|(i, line)| {
                let bad = || BenchError::Format(format!("train log line {}", i + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    train_mse: f[1].parse().map_err(|_| bad())?,
                    test_mse: f[2].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(TrainLog { records })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Loss and gradients for one batch; returns the batch MSE.
fn step(
    tape: &mut Tape,
    model: &mut Model,
    x: &Tensor,
    y: &Tensor,
    adam: &mut AdamState,
) -> Result<f64, BenchError> {
    tape.reset();
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let pred = model.forward(tape, xv)?;
    let loss = tape.mse(pred, yv)?;
    let value = tape.value(loss).data()[0];
    model.params_mut().zero_grad();
    tape.backward(loss, model.params_mut())?;
    adam_step(model.params_mut(), adam);
    Ok(value)
}

/// Normalized MSE of `model` on prepared tensors, using `tape` for the
/// forward pass.
pub fn batch_mse(
    model: &Model,
    tape: &mut Tape,
    x: &Tensor,
    y: &Tensor,
) -> Result<f64, BenchError> {
    let pred = model.predict_with(tape, x)?;
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Adam on the normalized MSE over the training split. `on_epoch` sees each
/// record as it is produced.
pub fn train(
    model: &mut Model,
    ds: &Dataset,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog, BenchError> {
    if ds.n_bus() != model.n_nodes() {
        return Err(BenchError::DatasetModelMismatch {
            dataset: ds.n_bus(),
            model: model.n_nodes(),
        });
    }
    let mut train_idx = ds.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(BenchError::Config("training split is empty".into()));
    }
    let test_idx = ds.indices(Split::Test);
    let test = (!test_idx.is_empty()).then(|| ds.batch(&test_idx, &opts.features));
    let full = ds.batch(&train_idx, &opts.features);
    let batch = opts
        .batch_size
        .unwrap_or(train_idx.len())
        .min(train_idx.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ BATCH_STREAM);
    let mut adam = AdamState::new(opts.adam, model.params());
    let mut log = TrainLog::default();
    let (mut tape, mut eval_tape) = (Tape::new(), Tape::inference());
    for epoch in 1..=opts.epochs {
        let train_mse = if batch == train_idx.len() {
            step(&mut tape, model, &full.0, &full.1, &mut adam)?
        } else {
            train_idx.shuffle(&mut rng);
            let mut weighted = 0.0;
            for chunk in train_idx.chunks(batch) {
                let (x, y) = ds.batch(chunk, &opts.features);
                weighted += step(&mut tape, model, &x, &y, &mut adam)? * chunk.len() as f64;
            }
            weighted / train_idx.len() as f64
        };
        let test_mse = match &test {
            Some((x, y)) => batch_mse(model, &mut eval_tape, x, y)?,
            None => f64::NAN,
        };
        let record = EpochRecord {
            epoch,
            train_mse,
            test_mse,
        };
        on_epoch(&record);
        log.records.push(record);
    }
    Ok(log)
}
