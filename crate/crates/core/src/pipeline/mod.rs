//! Load scenarios, OPF labelling and dataset files.

mod dataset;
mod label;
mod scenario;

pub use dataset::{
    split_indices, Dataset, DatasetMeta, Feature, FeatureStats, Normalization, Sample, Split,
    CSV_HEADER, DATASET_FILE, DEGENERATE_STD, LOADS_FILE, META_FILE,
};
pub use label::{label_dataset, LabelOptions};
pub use scenario::{gen_scenarios, gen_scenarios_with, Scenario, ScenarioConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridError;
use crate::opf::OpfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Predict,
    Forecast,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Predict => "predict",
            Mode::Forecast => "forecast",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "predict" => Ok(Mode::Predict),
            "forecast" => Ok(Mode::Forecast),
            other => Err(PipelineError::Invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{failed} of {total} OPF solves failed (more than the tolerated share)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("{0}")]
    Invalid(String),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
