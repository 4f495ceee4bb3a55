use crate::grid::Gso;
use crate::linalg::Matrix;
use crate::neural::{ParamId, Tape, Tensor, Var};

use super::{GraphSignal, ModelError};

/// Chebyshev filter bank with `theta` of shape `[K, C_in, C_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChebLayer {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub theta: ParamId,
    pub bias: ParamId,
}

/// `[T_0(L̃)x, …, T_{K−1}(L̃)x]` by the three-term recurrence.
pub fn cheb_basis(gso: &Gso, x: &GraphSignal, k: usize) -> Result<Vec<GraphSignal>, ModelError> {
    let n = gso.dim();
    if x.nodes() != n {
        return Err(ModelError::DimensionMismatch {
            what: "graph signal nodes",
            expected: n,
            got: x.nodes(),
        });
    }
    if k == 0 {
        return Err(ModelError::InvalidSpec(
            "Chebyshev order must be at least 1".into(),
        ));
    }
    let lt = gso.l_tilde();
    let apply = |v: &Matrix| {
        let mut out = Matrix::zeros(n, v.cols());
        crate::linalg::gemm(
            n,
            n,
            v.cols(),
            1.0,
            lt.as_slice(),
            n,
            v.as_slice(),
            v.cols(),
            0.0,
            out.as_mut_slice(),
            v.cols(),
        );
        out
    };
    let mut out: Vec<Matrix> = vec![x.values().clone()];
    if k > 1 {
        out.push(apply(&out[0]));
    }
    for i in 2..k {
        let mut next = apply(&out[i - 1]);
        for (t, prev) in next.as_mut_slice().iter_mut().zip(out[i - 2].as_slice()) {
            *t = 2.0 * *t - prev;
        }
        out.push(next);
    }
    Ok(out.into_iter().map(GraphSignal::new).collect())
}

/// Apply the layer to `x` of shape `[N, B, C_in]`, giving `[N, B, C_out]`.
///
/// `l_tilde` is the `[N, N]` scaled operator. When the layer narrows the
/// channel count, inputs are first projected onto each `θ_k` and the
/// polynomial is evaluated with Clenshaw's recurrence, so every product with
/// `L̃` acts on `C_out` rather than `C_in` channels.
pub fn cheb_layer_forward(
    tape: &mut Tape,
    layer: &ChebLayer,
    l_tilde: Var,
    x: Var,
    params: &crate::neural::ParamStore,
) -> Result<Var, ModelError> {
    let (n, b, c) = dims3(tape, x)?;
    if c != layer.c_in {
        return Err(ModelError::DimensionMismatch {
            what: "input channels",
            expected: layer.c_in,
            got: c,
        });
    }
    let (k, c_in, c_out) = (layer.k, layer.c_in, layer.c_out);
    let theta = tape.param(params, layer.theta);
    let bias = tape.param(params, layer.bias);
    let mixed = if c_in <= c_out {
        let x2 = tape.reshape(x, vec![n, b * c_in])?;
        let mut basis = vec![x2];
        if k > 1 {
            basis.push(tape.matmul(l_tilde, x2)?);
        }
        for i in 2..k {
            let lx = tape.matmul(l_tilde, basis[i - 1])?;
            let lx = tape.scale(lx, 2.0);
            basis.push(tape.sub(lx, basis[i - 2])?);
        }
        let cols = basis
            .iter()
            .map(|&t| tape.reshape(t, vec![n * b, c_in]))
            .collect::<Result<Vec<_>, _>>()?;
        let stacked = if k == 1 {
            cols[0]
        } else {
            tape.concat_cols(&cols)?
        };
        let w = tape.reshape(theta, vec![k * c_in, c_out])?;
        tape.matmul(stacked, w)?
    } else {
        let flat = tape.reshape(x, vec![n * b, c_in])?;
        // One pass over the input for all K projections: [C_in, K·C_out].
        let th = tape.transpose01(theta)?;
        let th = tape.reshape(th, vec![c_in, k * c_out])?;
        let all = tape.matmul(flat, th)?;
        let all = tape.reshape(all, vec![n * b, k, c_out])?;
        let all = tape.transpose01(all)?;
        let mut z = Vec::with_capacity(k);
        for i in 0..k {
            let zi = tape.index0(all, i)?;
            z.push(tape.reshape(zi, vec![n, b * c_out])?);
        }
        // b_i = z_i + 2·L̃·b_{i+1} − b_{i+2};  y = z_0 + L̃·b_1 − b_2
        let (mut b1, mut b2): (Option<Var>, Option<Var>) = (None, None);
        for i in (1..k).rev() {
            let mut next = z[i];
            if let Some(prev) = b1 {
                let lb = tape.matmul(l_tilde, prev)?;
                let lb = tape.scale(lb, 2.0);
                next = tape.add(next, lb)?;
            }
            if let Some(prev2) = b2 {
                next = tape.sub(next, prev2)?;
            }
            b2 = b1;
            b1 = Some(next);
        }
        let mut y = z[0];
        if let Some(prev) = b1 {
            let lb = tape.matmul(l_tilde, prev)?;
            y = tape.add(y, lb)?;
        }
        if let Some(prev2) = b2 {
            y = tape.sub(y, prev2)?;
        }
        tape.reshape(y, vec![n * b, c_out])?
    };
    let out = tape.add(mixed, bias)?;
    Ok(tape.reshape(out, vec![n, b, c_out])?)
}

pub(crate) fn dims3(tape: &Tape, x: Var) -> Result<(usize, usize, usize), ModelError> {
    match *tape.shape(x) {
        [n, b, c] => Ok((n, b, c)),
        ref other => Err(ModelError::InputShape(other.to_vec())),
    }
}

pub(crate) fn operator_tensor(m: &Matrix) -> Tensor {
    Tensor::new(vec![m.rows(), m.cols()], m.as_slice().to_vec()).expect("square operator")
}
