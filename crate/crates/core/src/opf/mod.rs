//! AC optimal power flow and its marginal prices.
//!
//! The Lagrangian is `L = f − Σ λ_i·g_P,i − Σ ν_i·g_Q,i + Σ μ_m·h_m` with
//! `g_P,i = P_G,i − P_L,i − Re{V_i·conj(I_i)}` (reactive rows analogous), so
//! that `λ_i = ∂f/∂P_L,i` is the locational marginal price at bus `i`.

mod ipm;
mod problem;
mod sensitivity;

pub use ipm::{solve_opf, IpmOptions};
pub use problem::{eval_balance, BoundSide, OperatingPoint, OpfProblem, VarBound, VarLayout};
pub use sensitivity::{perturbation_options, verify_lmp_by_perturbation};

use thiserror::Error;

use crate::grid::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// Residuals are in the solver's scaled units: the objective is divided by
/// `cost_scale` ($/h per per-unit), constraints are in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub cost_scale: f64,
    pub status: SolveStatus,
}

/// Primal and dual OPF solution in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfSolution {
    /// p.u. per bus.
    pub v_mag: Vec<f64>,
    /// Radians per bus, slack at zero.
    pub v_ang: Vec<f64>,
    /// MW per generator.
    pub p_gen: Vec<f64>,
    /// MVAr per generator.
    pub q_gen: Vec<f64>,
    /// $/MWh per bus.
    pub lambda: Vec<f64>,
    /// $/MVArh per bus.
    pub nu: Vec<f64>,
    /// One multiplier per inequality in [`OpfProblem::bounds`] order:
    /// $/MWh (or $/MVArh) for generator limits, $/h per p.u. for voltage limits.
    pub mu: Vec<f64>,
    /// Distance to each bound in the same physical units (MW, MVAr, p.u.).
    pub slack: Vec<f64>,
    /// Inequalities whose multiplier dominates their slack at the solution.
    pub active: Vec<bool>,
    /// $/h.
    pub objective: f64,
    pub diagnostics: SolveDiagnostics,
}

impl OpfSolution {
    pub fn converged(&self) -> bool {
        self.diagnostics.status == SolveStatus::Converged
    }

    /// Largest `|μ_m·h_m|` in $/h.
    pub fn complementarity_physical(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.slack)
            .fold(0.0, |m, (mu, s)| m.max((mu * s).abs()))
    }
}

#[derive(Debug, Error)]
pub enum OpfError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    #[error("KKT system singular at iteration {iteration}")]
    SingularKktSystem { iteration: usize },
    #[error("no convergence within {} iterations (residual {:.3e})", .0.diagnostics.iterations, .0.diagnostics.kkt_residual)]
    MaxIterations(Box<OpfSolution>),
    #[error("solver diverged (residual {:.3e})", .0.diagnostics.kkt_residual)]
    Infeasible(Box<OpfSolution>),
    #[error("unknown bus id {0}")]
    UnknownBus(u32),
    #[error("perturbed re-solve failed: {0}")]
    ResolveFailed(Box<OpfError>),
    #[error("active set changed between perturbed solves ({changed} constraints)")]
    ActiveSetChanged { changed: usize, estimate: f64 },
}

impl OpfError {
    /// Best iterate carried by a non-converged solve.
    pub fn partial_solution(&self) -> Option<&OpfSolution> {
        match self {
            OpfError::MaxIterations(s) | OpfError::Infeasible(s) => Some(s),
            _ => None,
        }
    }
}
