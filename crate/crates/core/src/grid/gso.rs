use super::{AdmittanceMatrix, GridError};
use crate::linalg::Matrix;

pub const POWER_ITER_CAP: usize = 10_000;

/// Inflation applied to the power-iteration estimate so the scaled
/// operator's spectrum sits strictly inside [−1, 1].
const LAMBDA_INFLATION: f64 = 1.0 + 1e-6;

/// Graph shift operator `L = |Y|` with its spectral bound and the scaled
/// operator `L̃ = 2L/λ_max − I` used by the Chebyshev recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct Gso {
    l: Matrix,
    lambda_max: f64,
    l_tilde: Matrix,
}

impl Gso {
    /// Builds the operator from an arbitrary nonnegative symmetric matrix.
    /// Eigenvalues of `l` are assumed nonnegative, as for `|Y|` and graph
    /// Laplacians; the bound is then the top eigenvalue.
    pub fn from_matrix(l: Matrix, tol: f64) -> Result<Gso, GridError> {
        assert_eq!(l.rows(), l.cols(), "GSO must be square");
        if l.max_abs() == 0.0 {
            return Err(GridError::ZeroAdmittance);
        }
        let lambda_max = power_iteration(&l, tol, POWER_ITER_CAP)? * LAMBDA_INFLATION;
        Ok(Gso::with_bound(l, lambda_max))
    }

    /// Uses a caller-provided spectral bound, no inflation applied.
    pub fn with_bound(l: Matrix, lambda_max: f64) -> Gso {
        let n = l.rows();
        let l_tilde = Matrix::from_fn(n, n, |i, j| {
            2.0 * l[(i, j)] / lambda_max - if i == j { 1.0 } else { 0.0 }
        });
        Gso {
            l,
            lambda_max,
            l_tilde,
        }
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn l_tilde(&self) -> &Matrix {
        &self.l_tilde
    }
}

/// Elementwise modulus of `Y`, spectrally scaled.
pub fn build_gso(y: &AdmittanceMatrix, power_iter_tol: f64) -> Result<Gso, GridError> {
    let n = y.dim();
    let l = Matrix::from_fn(n, n, |i, j| y.get(i, j).norm());
    Gso::from_matrix(l, power_iter_tol)
}

/// Dominant eigenvalue by power iteration from the all-ones vector, stopping
/// when the Rayleigh quotient changes by less than `tol` relative.
fn power_iteration(l: &Matrix, tol: f64, cap: usize) -> Result<f64, GridError> {
    let n = l.rows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut estimate = 0.0;
    for it in 0..cap {
        let w = l.matvec(&v);
        let rayleigh: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GridError::PowerIterationDiverged { iterations: it });
        }
        v = w.into_iter().map(|x| x / norm).collect();
        if it > 0 && (rayleigh - estimate).abs() <= tol * rayleigh.abs() {
            return Ok(rayleigh);
        }
        estimate = rayleigh;
    }
    Err(GridError::PowerIterationDiverged { iterations: cap })
}
