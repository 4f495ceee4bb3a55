use super::NeuralError;

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NeuralError> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(NeuralError::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, NeuralError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NeuralError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Outputs up to this many elements stay in a local accumulator while a
/// long inner dimension streams past.
const SMALL_OUT: usize = 256;
/// Inner or output widths up to this use direct loops; packed kernels spend
/// more time packing than multiplying at such widths.
const THIN: usize = 8;

/// `c = a·b + beta·c` for row-major `a` (m×k) and `b` (k×n), each operand
/// optionally read transposed through its strides. With `beta = 0` the
/// previous contents of `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        scale_out(&mut c[..m * n], beta);
        return;
    }
    let a_extent = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
    let b_extent = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
    assert!(a_extent < a.len() && b_extent < b.len());
    let c = &mut c[..m * n];
    if m * n <= SMALL_OUT && k > THIN {
        return gemm_small_out(m, k, n, a, a_strides, b, b_strides, beta, c);
    }
    if k <= THIN {
        return gemm_thin_inner(m, k, n, a, a_strides, b, b_strides, beta, c);
    }
    if n <= THIN {
        return gemm_few_cols(m, k, n, a, a_strides, b, b_strides, beta, c);
    }
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn scale_out(c: &mut [f64], beta: f64) {
    if beta == 0.0 {
        c.fill(0.0);
    } else if beta != 1.0 {
        c.iter_mut().for_each(|v| *v *= beta);
    }
}

/// `y += alpha·x` over a strided `x`.
#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64], start: usize, stride: usize) {
    if stride == 1 {
        let len = y.len();
        for (y, x) in y.iter_mut().zip(&x[start..start + len]) {
            *y += alpha * x;
        }
    } else {
        for (j, y) in y.iter_mut().enumerate() {
            *y += alpha * x[start + j * stride];
        }
    }
}

/// Sum of rank-1 updates `a[:, p] ⊗ b[p, :]` into a cache-resident
/// accumulator; the loop runs along whichever output axis is longer.
#[allow(clippy::too_many_arguments)]
fn gemm_small_out(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (ars, acs): (usize, usize),
    b: &[f64],
    (brs, bcs): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    let mut acc = [0.0; SMALL_OUT];
    if n >= m {
        let acc = &mut acc[..m * n];
        for p in 0..k {
            for (i, row) in acc.chunks_exact_mut(n).enumerate() {
                axpy(row, a[i * ars + p * acs], b, p * brs, bcs);
            }
        }
    } else {
        // Column-major accumulator so the update runs along `i`.
        let acc = &mut acc[..m * n];
        for p in 0..k {
            for (j, col) in acc.chunks_exact_mut(m).enumerate() {
                axpy(col, b[p * brs + j * bcs], a, p * acs, ars);
            }
        }
        let mut t = [0.0; SMALL_OUT];
        for i in 0..m {
            for j in 0..n {
                t[i * n + j] = acc[j * m + i];
            }
        }
        acc.copy_from_slice(&t[..m * n]);
    }
    scale_out(c, beta);
    for (c, v) in c.iter_mut().zip(&acc[..m * n]) {
        *c += v;
    }
}

/// Each output row is a combination of at most `THIN` rows of `b`.
#[allow(clippy::too_many_arguments)]
fn gemm_thin_inner(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (ars, acs): (usize, usize),
    b: &[f64],
    (brs, bcs): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    scale_out(c, beta);
    for (i, row) in c.chunks_exact_mut(n).enumerate().take(m) {
        for p in 0..k {
            axpy(row, a[i * ars + p * acs], b, p * brs, bcs);
        }
    }
}

/// Dot products against at most `THIN` columns of `b`, copied out
/// contiguously first.
#[allow(clippy::too_many_arguments)]
fn gemm_few_cols(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (ars, acs): (usize, usize),
    b: &[f64],
    (brs, bcs): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    let cols: Vec<f64> = (0..n)
        .flat_map(|j| (0..k).map(move |p| b[p * brs + j * bcs]))
        .collect();
    let mut row = vec![0.0; k];
    for i in 0..m {
        let a_row: &[f64] = if acs == 1 {
            &a[i * ars..i * ars + k]
        } else {
            for (p, r) in row.iter_mut().enumerate() {
                *r = a[i * ars + p * acs];
            }
            &row
        };
        for j in 0..n {
            let d = dot(a_row, &cols[j * k..(j + 1) * k]);
            let out = &mut c[i * n + j];
            *out = if beta == 0.0 { d } else { beta * *out + d };
        }
    }
}

/// Dot product with four interleaved partial sums.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(a, b)| a * b)
        .sum();
    for (x, y) in xc.zip(yc) {
        for l in 0..4 {
            s[l] += x[l] * y[l];
        }
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Swap the first two axes of a `[d0, d1, rest]` block layout.
pub(crate) fn swap01(src: &[f64], d0: usize, d1: usize, rest: usize, dst: &mut [f64]) {
    for i in 0..d0 {
        for j in 0..d1 {
            let s = (i * d1 + j) * rest;
            let d = (j * d0 + i) * rest;
            dst[d..d + rest].copy_from_slice(&src[s..s + rest]);
        }
    }
}
