//! Row-major dense matrices and an LU factorization with partial pivoting.
//!
//! The LU is right-looking and blocked: panels are factored column by column
//! and the trailing submatrix is updated with a single GEMM per panel.

use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · x`
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `c = alpha·a·b + beta·c` on row-major slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * lda + k || k == 0);
    assert!(b.len() >= k.saturating_sub(1) * ldb + n || k == 0);
    assert!(c.len() >= (m - 1) * ldc + n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            lda as isize,
            1,
            b.as_ptr(),
            ldb as isize,
            1,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularMatrix {
    pub column: usize,
}

const PANEL: usize = 48;

/// Packed LU factors of a square matrix, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factors `a` in place. A pivot with magnitude at or below `pivot_tol`
    /// is reported as singular.
    pub fn factor(a: Matrix, pivot_tol: f64) -> Result<Lu, SingularMatrix> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.data;
        let mut perm: Vec<usize> = (0..n).collect();

        let mut j0 = 0;
        while j0 < n {
            let nb = PANEL.min(n - j0);
            // Unblocked factorization of the panel lu[j0.., j0..j0+nb],
            // applying row swaps across the full row.
            for j in j0..j0 + nb {
                let mut p = j;
                let mut best = lu[j * n + j].abs();
                for i in j + 1..n {
                    let v = lu[i * n + j].abs();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
                if best <= pivot_tol || !best.is_finite() {
                    return Err(SingularMatrix { column: j });
                }
                if p != j {
                    perm.swap(p, j);
                    for c in 0..n {
                        lu.swap(p * n + c, j * n + c);
                    }
                }
                let pivot = lu[j * n + j];
                for i in j + 1..n {
                    let l = lu[i * n + j] / pivot;
                    lu[i * n + j] = l;
                    if l != 0.0 {
                        for c in j + 1..j0 + nb {
                            lu[i * n + c] -= l * lu[j * n + c];
                        }
                    }
                }
            }
            let jend = j0 + nb;
            if jend < n {
                // U12 = L11⁻¹ A12 (unit lower triangular solve).
                for r in j0..jend {
                    for i in j0..r {
                        let l = lu[r * n + i];
                        if l != 0.0 {
                            let (head, tail) = lu.split_at_mut(r * n);
                            let src = &head[i * n + jend..i * n + n];
                            for (d, s) in tail[jend..n].iter_mut().zip(src) {
                                *d -= l * s;
                            }
                        }
                    }
                }
                // A22 -= L21 · U12
                let m = n - jend;
                let (top, bottom) = lu.split_at_mut(jend * n);
                let l21: Vec<f64> = (0..m)
                    .flat_map(|r| bottom[r * n + j0..r * n + jend].iter().copied())
                    .collect();
                let u12 = &top[j0 * n + jend..];
                gemm(
                    m,
                    nb,
                    m,
                    -1.0,
                    &l21,
                    nb,
                    u12,
                    n,
                    1.0,
                    &mut bottom[jend..],
                    n,
                );
            }
            j0 = jend;
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(u, v)| u * v).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn lu_solves_across_panel_boundaries() {
        for &n in &[1, 3, 47, 48, 49, 130] {
            let a = random(n, n as u64);
            let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let b = a.matvec(&x_true);
            let lu = Lu::factor(a, 0.0).unwrap();
            let x = lu.solve(&b);
            let err = x
                .iter()
                .zip(&x_true)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "n={n} err={err}");
        }
    }

    #[test]
    fn lu_pivots_on_zero_diagonal() {
        let a = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let lu = Lu::factor(a, 0.0).unwrap();
        assert_eq!(lu.solve(&[2.0, 3.0]), vec![3.0, 2.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(Lu::factor(a, 1e-12).is_err());
    }

    #[test]
    fn gemm_matches_loops() {
        let a = random(5, 1);
        let b = random(5, 2);
        let mut c = vec![0.0; 25];
        gemm(
            5,
            5,
            5,
            1.0,
            a.as_slice(),
            5,
            b.as_slice(),
            5,
            0.0,
            &mut c,
            5,
        );
        for i in 0..5 {
            for j in 0..5 {
                let r: f64 = (0..5).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[i * 5 + j] - r).abs() < 1e-14);
            }
        }
    }
}
