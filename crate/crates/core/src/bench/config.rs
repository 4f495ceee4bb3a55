use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::models::{ModelKind, ModelSpec};
use crate::neural::AdamConfig;
use crate::pipeline::{Feature, Mode, ScenarioConfig};

/// Everything a gen/train/eval/bench run needs. Relative paths in a config
/// file are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Drives scenarios, the predict-mode split, initialization and batching.
    pub seed: u64,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    /// Input channels, in order. Every model's `in_channels` follows this.
    #[serde(default = "default_features")]
    pub features: Vec<Feature>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Samples per Adam step; absent means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_mode() -> Mode {
    Mode::Predict
}

fn default_scenarios() -> usize {
    2000
}

pub fn default_features() -> Vec<Feature> {
    vec![Feature::VMag, Feature::VAng]
}

fn default_models() -> Vec<ModelSpec> {
    ModelKind::ALL.iter().map(|k| ModelSpec::new(*k)).collect()
}

fn default_epochs() -> usize {
    2000
}

fn default_failure_rate() -> f64 {
    0.05
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Defaults for everything except the two mandatory fields.
    pub fn new(case: impl Into<PathBuf>, seed: u64) -> Self {
        RunConfig {
            case: case.into(),
            mode: default_mode(),
            seed,
            scenarios: default_scenarios(),
            features: default_features(),
            models: default_models(),
            epochs: default_epochs(),
            batch_size: None,
            adam: AdamConfig::default(),
            scenario: ScenarioConfig::default(),
            max_failure_rate: default_failure_rate(),
            out: default_out(),
        }
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, BenchError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.case = base.join(&cfg.case);
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// The configured spec for `kind`, or its default.
    pub fn spec(&self, kind: ModelKind) -> ModelSpec {
        let mut spec = self
            .models
            .iter()
            .find(|s| s.kind == kind)
            .cloned()
            .unwrap_or_else(|| ModelSpec::new(kind));
        spec.in_channels = self.features.len();
        spec
    }

    pub fn specs(&self) -> Vec<ModelSpec> {
        self.models.iter().map(|s| self.spec(s.kind)).collect()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if !self.case.is_file() {
            return bad(format!("case file {} does not exist", self.case.display()));
        }
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        let min = if self.mode == Mode::Forecast { 2 } else { 1 };
        if self.scenarios < min {
            return bad(format!("{} mode needs at least {min} scenarios", self.mode));
        }
        if self.features.is_empty() {
            return bad("at least one input feature is required".into());
        }
        if self.features.iter().collect::<HashSet<_>>().len() != self.features.len() {
            return bad("input features must be distinct".into());
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        let kinds: HashSet<_> = self.models.iter().map(|s| s.kind).collect();
        if kinds.len() != self.models.len() {
            return bad("each model kind may appear once".into());
        }
        for s in &self.models {
            if s.kind == ModelKind::Cheb && s.k == 0 {
                return bad("Chebyshev order k must be at least 1".into());
            }
            if s.hidden_widths().contains(&0) {
                return bad(format!("{}: hidden widths must be positive", s.kind));
            }
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0
            && a.eps > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2))
        {
            return bad("adam needs lr > 0, eps > 0 and betas in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad("max_failure_rate must lie in [0, 1]".into());
        }
        let s = &self.scenario;
        if !(s.low >= 0.0 && s.low <= s.high && s.period > 0.0 && s.noise_std >= 0.0) {
            return bad("scenario needs 0 <= low <= high, period > 0, noise_std >= 0".into());
        }
        Ok(())
    }
}
