//! Network data: case files, the bus admittance matrix and the graph shift
//! operator derived from it.

mod admittance;
mod case;
mod gso;

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use case::{parse_case, Branch, Bus, BusKind, CostCurve, Generator, GridCase};
pub use gso::{build_gso, Gso, POWER_ITER_CAP};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("line {line}, column {column}: {message}")]
    MalformedField {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("branch {branch} references unknown bus {bus}")]
    DanglingBranch {
        branch: usize,
        line: Option<usize>,
        bus: u32,
    },
    #[error("generator {generator} references unknown bus {bus}")]
    UnknownGeneratorBus { generator: usize, bus: u32 },
    #[error("case has no slack bus")]
    NoSlackBus,
    #[error("case has {0} slack buses, expected exactly one")]
    MultipleSlackBuses(usize),
    #[error("duplicate bus id {0}")]
    DuplicateBusId(u32),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("branch {branch} has zero series impedance")]
    ZeroImpedanceBranch { branch: usize },
    #[error("admittance matrix is identically zero")]
    ZeroAdmittance,
    #[error("power iteration did not converge after {iterations} iterations")]
    PowerIterationDiverged { iterations: usize },
}
