use crate::linalg::Matrix;
use crate::neural::{ParamId, ParamStore, Tape, Var};

use super::cheb::dims3;
use super::ModelError;

/// First-order graph convolution `Â·X·W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// `D̃^{-1/2}(L + I)D̃^{-1/2}` with `D̃` the row sums of `L + I`.
pub fn gcn_operator(l: &Matrix) -> Matrix {
    let n = l.rows();
    let with_loops = Matrix::from_fn(n, n, |i, j| l[(i, j)] + if i == j { 1.0 } else { 0.0 });
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / with_loops.row(i).iter().sum::<f64>().sqrt())
        .collect();
    Matrix::from_fn(n, n, |i, j| inv_sqrt[i] * with_loops[(i, j)] * inv_sqrt[j])
}

/// `x` is `[N, B, C_in]`, `a_hat` is `[N, N]`; the cheaper association of
/// `Â·X·W` is chosen from the channel counts.
pub fn gcn1_layer_forward(
    tape: &mut Tape,
    layer: &GcnLayer,
    a_hat: Var,
    x: Var,
    params: &ParamStore,
) -> Result<Var, ModelError> {
    let (n, b, c) = dims3(tape, x)?;
    if c != layer.c_in {
        return Err(ModelError::DimensionMismatch {
            what: "input channels",
            expected: layer.c_in,
            got: c,
        });
    }
    let (c_in, c_out) = (layer.c_in, layer.c_out);
    let w = tape.param(params, layer.weight);
    let bias = tape.param(params, layer.bias);
    let mixed = if c_in <= c_out {
        let x2 = tape.reshape(x, vec![n, b * c_in])?;
        let ax = tape.matmul(a_hat, x2)?;
        let ax = tape.reshape(ax, vec![n * b, c_in])?;
        tape.matmul(ax, w)?
    } else {
        let flat = tape.reshape(x, vec![n * b, c_in])?;
        let xw = tape.matmul(flat, w)?;
        let xw = tape.reshape(xw, vec![n, b * c_out])?;
        let axw = tape.matmul(a_hat, xw)?;
        tape.reshape(axw, vec![n * b, c_out])?
    };
    let out = tape.add(mixed, bias)?;
    Ok(tape.reshape(out, vec![n, b, c_out])?)
}
