use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mode, PipelineError};
use crate::neural::Tensor;

pub const DATASET_FILE: &str = "dataset.csv";
pub const LOADS_FILE: &str = "loads.csv";
pub const META_FILE: &str = "dataset.toml";
pub const CSV_HEADER: &str = "scenario,bus,v_mag,v_ang,lambda,split";
const LOADS_HEADER: &str = "scenario,bus,p_load,q_load";

/// Standard deviations below this are treated as constant features.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    VMag,
    VAng,
    PLoad,
    QLoad,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::VMag, Feature::VAng, Feature::PLoad, Feature::QLoad];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::VMag => "v_mag",
            Feature::VAng => "v_ang",
            Feature::PLoad => "p_load",
            Feature::QLoad => "q_load",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl FromStr for Feature {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| PipelineError::Invalid(format!("unknown feature `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One (input, target) pair. Inputs come from scenario `scenario`; in
/// forecast mode `lambda` is the price of the following time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scenario: usize,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Sample {
    pub fn feature(&self, f: Feature) -> &[f64] {
        match f {
            Feature::VMag => &self.v_mag,
            Feature::VAng => &self.v_ang,
            Feature::PLoad => &self.p_load,
            Feature::QLoad => &self.q_load,
        }
    }
}

/// Per-bus z-score statistics for one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Buses whose standard deviation fell below [`DEGENERATE_STD`]; their
    /// values are passed through unchanged.
    pub degenerate: Vec<bool>,
}

impl FeatureStats {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, n_bus: usize) -> Self {
        let rows: Vec<&[f64]> = rows.collect();
        let count = rows.len().max(1) as f64;
        let mut mean = vec![0.0; n_bus];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n_bus];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / count).sqrt()).collect();
        let degenerate = std.iter().map(|s| *s < DEGENERATE_STD).collect();
        FeatureStats {
            mean,
            std,
            degenerate,
        }
    }

    pub fn normalize(&self, bus: usize, v: f64) -> f64 {
        if self.degenerate[bus] {
            v
        } else {
            (v - self.mean[bus]) / self.std[bus]
        }
    }

    pub fn denormalize(&self, bus: usize, z: f64) -> f64 {
        if self.degenerate[bus] {
            z
        } else {
            z * self.std[bus] + self.mean[bus]
        }
    }

    pub fn normalize_vec(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, x)| self.normalize(i, *x))
            .collect()
    }

    pub fn denormalize_vec(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, x)| self.denormalize(i, *x))
            .collect()
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|d| *d)
    }
}

/// Statistics of every input channel and of the target, fitted on the
/// training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub v_mag: FeatureStats,
    pub v_ang: FeatureStats,
    pub p_load: FeatureStats,
    pub q_load: FeatureStats,
    pub lambda: FeatureStats,
}

impl Normalization {
    pub fn fit(samples: &[Sample], train: &[usize], n_bus: usize) -> Self {
        let pick = |f: fn(&Sample) -> &[f64]| {
            FeatureStats::fit(train.iter().map(|&i| f(&samples[i])), n_bus)
        };
        Normalization {
            v_mag: pick(|s| &s.v_mag),
            v_ang: pick(|s| &s.v_ang),
            p_load: pick(|s| &s.p_load),
            q_load: pick(|s| &s.q_load),
            lambda: pick(|s| &s.lambda),
        }
    }

    pub fn feature(&self, f: Feature) -> &FeatureStats {
        [&self.v_mag, &self.v_ang, &self.p_load, &self.q_load][f.slot()]
    }
}

/// Provenance recorded next to the CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mode: Mode,
    pub bus_ids: Vec<u32>,
    pub scenarios: usize,
    pub failed: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
    pub split: Vec<Split>,
    pub stats: Normalization,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    dataset: DatasetMeta,
    normalization: Normalization,
}

/// Keeps the split shuffle independent of the scenario stream drawn from
/// the same seed.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// 80/20 split: contiguous in forecast mode, seeded shuffle otherwise.
pub fn split_indices(len: usize, mode: Mode, seed: u64) -> Vec<Split> {
    let n_train = (len as f64 * 0.8).round() as usize;
    let mut order: Vec<usize> = (0..len).collect();
    if mode == Mode::Predict {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
    }
    let mut split = vec![Split::Test; len];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    split
}

impl Dataset {
    /// Assemble a dataset, splitting and fitting normalization statistics on
    /// the training part.
    pub fn new(meta: DatasetMeta, samples: Vec<Sample>) -> Result<Self, PipelineError> {
        if samples.is_empty() {
            return Err(PipelineError::EmptyDataset);
        }
        let split = split_indices(samples.len(), meta.mode, meta.seed);
        let train: Vec<usize> = (0..samples.len())
            .filter(|&i| split[i] == Split::Train)
            .collect();
        let stats = Normalization::fit(&samples, &train, meta.bus_ids.len());
        Ok(Dataset {
            meta,
            samples,
            split,
            stats,
        })
    }

    pub fn n_bus(&self) -> usize {
        self.meta.bus_ids.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.split[i] == which)
            .collect()
    }

    /// Inputs `[N, B, C]` and targets `[N, B]` for the given samples, in
    /// normalized units.
    pub fn batch(&self, idx: &[usize], features: &[Feature]) -> (Tensor, Tensor) {
        let n = self.n_bus();
        let (b, c) = (idx.len(), features.len());
        let mut x = vec![0.0; n * b * c];
        let mut y = vec![0.0; n * b];
        for (s, &i) in idx.iter().enumerate() {
            let sample = &self.samples[i];
            for (ch, &f) in features.iter().enumerate() {
                let stats = self.stats.feature(f);
                for (bus, v) in sample.feature(f).iter().enumerate() {
                    x[(bus * b + s) * c + ch] = stats.normalize(bus, *v);
                }
            }
            for (bus, v) in sample.lambda.iter().enumerate() {
                y[bus * b + s] = self.stats.lambda.normalize(bus, *v);
            }
        }
        (
            Tensor::new(vec![n, b, c], x).expect("batch shape"),
            Tensor::new(vec![n, b], y).expect("batch shape"),
        )
    }

    /// Write `dataset.csv`, `loads.csv` and `dataset.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(DATASET_FILE), self.to_csv())?;
        fs::write(dir.join(LOADS_FILE), self.loads_csv())?;
        let meta = MetaFile {
            dataset: self.meta.clone(),
            normalization: self.stats.clone(),
        };
        let text = toml::to_string(&meta).map_err(|e| PipelineError::Invalid(e.to_string()))?;
        fs::write(dir.join(META_FILE), text)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (s, split) in self.samples.iter().zip(&self.split) {
            for (b, id) in self.meta.bus_ids.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{:.16e},{:.16e},{:.16e},{}",
                    s.scenario,
                    id,
                    s.v_mag[b],
                    s.v_ang[b],
                    s.lambda[b],
                    split.as_str()
                );
            }
        }
        out
    }

    fn loads_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(LOADS_HEADER);
        out.push('\n');
        for s in &self.samples {
            for (b, id) in self.meta.bus_ids.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{:.16e},{:.16e}",
                    s.scenario, id, s.p_load[b], s.q_load[b]
                );
            }
        }
        out
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let meta_text = fs::read_to_string(dir.join(META_FILE))?;
        let meta: MetaFile = toml::from_str(&meta_text).map_err(|e| PipelineError::Parse {
            file: META_FILE,
            line: 0,
            message: e.to_string(),
        })?;
        let n = meta.dataset.bus_ids.len();
        let main = fs::read_to_string(dir.join(DATASET_FILE))?;
        let loads = fs::read_to_string(dir.join(LOADS_FILE))?;
        let rows = parse_rows(&main, DATASET_FILE, CSV_HEADER, 6)?;
        let load_rows = parse_rows(&loads, LOADS_FILE, LOADS_HEADER, 4)?;
        if rows.len() % n != 0 || load_rows.len() != rows.len() {
            return Err(PipelineError::Parse {
                file: DATASET_FILE,
                line: 0,
                message: format!("row count {} is not a multiple of {n} buses", rows.len()),
            });
        }
        let mut samples = Vec::with_capacity(rows.len() / n);
        let mut split = Vec::with_capacity(rows.len() / n);
        for (chunk_no, (chunk, lchunk)) in rows.chunks(n).zip(load_rows.chunks(n)).enumerate() {
            let mut s = Sample {
                scenario: 0,
                v_mag: vec![0.0; n],
                v_ang: vec![0.0; n],
                p_load: vec![0.0; n],
                q_load: vec![0.0; n],
                lambda: vec![0.0; n],
            };
            let line_of = |b: usize| chunk_no * n + b + 2;
            for (b, ((line, fields), (_, lf))) in chunk.iter().zip(lchunk).enumerate() {
                let bad = |message: String| PipelineError::Parse {
                    file: DATASET_FILE,
                    line: *line,
                    message,
                };
                let scenario: usize = fields[0].parse().map_err(|_| bad("bad scenario".into()))?;
                let bus: u32 = fields[1].parse().map_err(|_| bad("bad bus id".into()))?;
                if bus != meta.dataset.bus_ids[b] || lf[1] != fields[1] || lf[0] != fields[0] {
                    return Err(bad(format!("unexpected bus {bus} at row {}", line_of(b))));
                }
                if b == 0 {
                    s.scenario = scenario;
                    split.push(match fields[5].as_str() {
                        "train" => Split::Train,
                        "test" => Split::Test,
                        other => return Err(bad(format!("unknown split `{other}`"))),
                    });
                } else if scenario != s.scenario {
                    return Err(bad("scenario changes inside a block".into()));
                }
                let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{v}: {e}")));
                s.v_mag[b] = num(&fields[2])?;
                s.v_ang[b] = num(&fields[3])?;
                s.lambda[b] = num(&fields[4])?;
                s.p_load[b] = num(&lf[2])?;
                s.q_load[b] = num(&lf[3])?;
            }
            samples.push(s);
        }
        Ok(Dataset {
            meta: meta.dataset,
            samples,
            split,
            stats: meta.normalization,
        })
    }
}

fn parse_rows(
    text: &str,
    file: &'static str,
    header: &str,
    width: usize,
) -> Result<Vec<(usize, Vec<String>)>, PipelineError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(PipelineError::Parse {
                file,
                line: 1,
                message: format!("expected header `{header}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, l)| {
            let fields: Vec<String> = l.split(',').map(|f| f.trim().to_string()).collect();
            if fields.len() != width {
                return Err(PipelineError::Parse {
                    file,
                    line: no + 1,
                    message: format!("expected {width} fields, found {}", fields.len()),
                });
            }
            Ok((no + 1, fields))
        })
        .collect()
}
