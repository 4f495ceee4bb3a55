use std::collections::HashMap;

use super::tensor::{gemm_strided, swap01};
use super::{NeuralError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// Second operand repeated over the leading axes of the first.
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Reshape(Var),
    /// `[d0, d1, rest] -> [d1, d0, rest]`.
    Transpose01(Var, usize, usize, usize),
    ConcatCols(Vec<Var>),
    Index0(Var, usize),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Buffers below this length are not worth recycling.
const MIN_POOLED: usize = 1024;

/// Recycled buffers keyed by exact length. A training loop replays the same
/// shapes every step, so reuse avoids faulting in fresh pages for every
/// large intermediate.
///
/// Each length keeps at most as many free buffers as were ever taken at
/// once. Buffers that enter from outside (constants built by the caller)
/// would otherwise pile up one step at a time.
#[derive(Debug, Default)]
struct Pool {
    free: HashMap<usize, Vec<Vec<f64>>>,
    /// Per length: buffers currently handed out, and the most ever at once.
    usage: HashMap<usize, (usize, usize)>,
}

impl Pool {
    /// A buffer of length `n` with unspecified contents.
    fn take(&mut self, n: usize) -> Vec<f64> {
        if n < MIN_POOLED {
            return vec![0.0; n];
        }
        let (live, peak) = self.usage.entry(n).or_default();
        *live += 1;
        *peak = (*peak).max(*live);
        match self.free.get_mut(&n).and_then(Vec::pop) {
            Some(v) => v,
            None => vec![0.0; n],
        }
    }

    fn give(&mut self, v: Vec<f64>) {
        let n = v.len();
        if n < MIN_POOLED {
            return;
        }
        let (live, peak) = self.usage.entry(n).or_default();
        *live = live.saturating_sub(1);
        let free = self.free.entry(n).or_default();
        if free.len() < *peak {
            free.push(v);
        }
    }
}

/// Reverse-mode tape. Every op appends a node whose parents precede it, so
/// the backward pass is a single sweep in reverse insertion order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    frozen: bool,
    pool: Pool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NeuralError {
    NeuralError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that never tracks gradients, for inference.
    pub fn inference() -> Self {
        Tape {
            frozen: true,
            ..Self::default()
        }
    }

    /// Drop the recording so a new forward pass can be taped. Buffers are
    /// kept for reuse; variables from the old recording become invalid.
    pub fn reset(&mut self) {
        for node in self.nodes.drain(..) {
            self.pool.give(node.value.into_data());
        }
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && !self.frozen,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let mut data = self.pool.take(t.numel());
        data.copy_from_slice(t.data());
        let value = Tensor::new(t.shape().to_vec(), data).expect("valid tensor");
        self.push(value, Op::Param(id), true)
    }

    /// `a` (m×k) times `b` (k×n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        // beta = 0: the output is written without being read.
        let mut out = self.pool.take(m * n);
        gemm_strided(m, k, n, ta.data(), (k, 1), tb.data(), (n, 1), 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a + b` where `b` has either the shape of `a` or of its trailing axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.shape().ends_with(tb.shape()) || tb.numel() == 0 {
            return Err(mismatch("add", ta, tb));
        }
        let bd = tb.data();
        let mut out = self.pool.take(ta.numel());
        for (o, x) in out
            .chunks_exact_mut(bd.len())
            .zip(ta.data().chunks_exact(bd.len()))
        {
            for ((o, x), y) in o.iter_mut().zip(x).zip(bd) {
                *o = x + y;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NeuralError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let mut out = self.pool.take(ta.numel());
        for ((o, x), y) in out.iter_mut().zip(ta.data()).zip(tb.data()) {
            *o = f(*x, *y);
        }
        Tensor::new(ta.shape().to_vec(), out)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[a.0].value;
        let mut out = self.pool.take(t.numel());
        for (o, x) in out.iter_mut().zip(t.data()) {
            *o = f(*x);
        }
        Tensor::new(t.shape().to_vec(), out).expect("same shape")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let value = self.zip_same("hadamard", a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Hadamard(a, b), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.map(a, |x| x * s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NeuralError> {
        let t = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != t.numel() {
            return Err(NeuralError::ShapeMismatch {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape,
            });
        }
        let mut out = self.pool.take(t.numel());
        out.copy_from_slice(t.data());
        let value = Tensor::new(shape, out)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Swap the first two axes of a rank-2 or rank-3 tensor.
    pub fn transpose01(&mut self, a: Var) -> Result<Var, NeuralError> {
        let t = &self.nodes[a.0].value;
        let s = t.shape();
        let (d0, d1, rest) = match *s {
            [d0, d1] => (d0, d1, 1),
            [d0, d1, r] => (d0, d1, r),
            _ => {
                return Err(NeuralError::ShapeMismatch {
                    op: "transpose01",
                    left: s.to_vec(),
                    right: vec![],
                })
            }
        };
        let mut out = self.pool.take(t.numel());
        swap01(t.data(), d0, d1, rest, &mut out);
        let mut shape = s.to_vec();
        shape.swap(0, 1);
        let value = Tensor::new(shape, out)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Transpose01(a, d0, d1, rest), ng))
    }

    /// Join rank-2 tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let first = *parts.first().ok_or(NeuralError::ShapeMismatch {
            op: "concat_cols",
            left: vec![],
            right: vec![],
        })?;
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = self.pool.take(rows * total);
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.nodes[p.0].value.data();
            for (dst, s) in out.chunks_exact_mut(total).zip(src.chunks_exact(w)) {
                dst[offset..offset + w].copy_from_slice(s);
            }
            offset += w;
        }
        let value = Tensor::new(vec![rows, total], out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Slice `i` of the leading axis.
    pub fn index0(&mut self, a: Var, i: usize) -> Result<Var, NeuralError> {
        let t = &self.nodes[a.0].value;
        let s = t.shape();
        if s.len() < 2 || i >= s[0] {
            return Err(NeuralError::ShapeMismatch {
                op: "index0",
                left: s.to_vec(),
                right: vec![i],
            });
        }
        let inner: usize = s[1..].iter().product();
        let mut out = self.pool.take(inner);
        out.copy_from_slice(&t.data()[i * inner..(i + 1) * inner]);
        let value = Tensor::new(s[1..].to_vec(), out)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Index0(a, i), ng))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NeuralError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(mismatch("mse", tp, tt));
        }
        let n = tp.numel().max(1) as f64;
        let sum: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(sum / n), Op::Mse(pred, target), ng))
    }

    /// Accumulate `∂loss/∂param` into the store and clear the tape. A second
    /// call without recording a new forward pass fails.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), NeuralError> {
        if self.consumed || loss.0 >= self.nodes.len() {
            return Err(NeuralError::TapeConsumed);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(NeuralError::NotScalarLoss(lt.shape().to_vec()));
        }
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).grad_mut();
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                propagate(&self.nodes, idx, g, &mut grads, store, &mut self.pool);
            } else {
                self.pool.give(g);
            }
        }
        self.reset();
        self.consumed = true;
        Ok(())
    }
}

/// Adds `g` into the gradient slot of `v`, moving it in when the slot is empty.
fn pass(grads: &mut [Option<Vec<f64>>], pool: &mut Pool, v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(slot) => {
            slot.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
            pool.give(g);
        }
        empty => *empty = Some(g),
    }
}

/// `*d = s` on a fresh slot, `*d += s` otherwise.
fn put(d: &mut f64, s: f64, fresh: bool) {
    if fresh {
        *d = s;
    } else {
        *d += s;
    }
}

fn propagate(
    nodes: &[Node],
    idx: usize,
    g: Vec<f64>,
    grads: &mut [Option<Vec<f64>>],
    store: &mut ParamStore,
    pool: &mut Pool,
) {
    let node = &nodes[idx];
    let wants = |v: &Var| nodes[v.0].needs_grad;
    match node.op {
        Op::Transpose01(a, d0, d1, rest) => {
            if wants(&a) {
                let mut back = pool.take(g.len());
                swap01(&g, d1, d0, rest, &mut back);
                pass(grads, pool, a, back);
            }
            pool.give(g);
            return;
        }
        Op::Reshape(a) => {
            if wants(&a) {
                pass(grads, pool, a, g);
            } else {
                pool.give(g);
            }
            return;
        }
        _ => {}
    }
    let data = |v: &Var| nodes[v.0].value.data();
    // The closure gets the slot and whether it is fresh, i.e. holds
    // unspecified values that must be overwritten rather than added to.
    let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64], bool)| {
        if !nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(slot) => f(slot, false),
            empty => {
                let mut slot = pool.take(nodes[v.0].value.numel());
                f(&mut slot, true);
                *empty = Some(slot);
            }
        }
    };
    let gs = g.as_slice();
    match &node.op {
        Op::Constant => {}
        Op::Param(id) => {
            let dst = store.get_mut(*id).grad_mut();
            dst.iter_mut().zip(gs).for_each(|(d, s)| *d += s);
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let beta = |fresh: bool| if fresh { 0.0 } else { 1.0 };
            // dA = dC·Bᵀ, dB = Aᵀ·dC
            acc(*a, &mut |da, fresh| {
                gemm_strided(m, n, k, gs, (n, 1), tb.data(), (1, n), beta(fresh), da)
            });
            acc(*b, &mut |db, fresh| {
                gemm_strided(k, m, n, ta.data(), (1, k), gs, (n, 1), beta(fresh), db)
            });
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Add(..)) {
                1.0
            } else {
                -1.0
            };
            acc(*b, &mut |db, fresh| {
                if db.len() == gs.len() {
                    db.iter_mut()
                        .zip(gs)
                        .for_each(|(d, s)| put(d, sign * s, fresh));
                    return;
                }
                if fresh {
                    db.fill(0.0);
                }
                // A broadcast operand sums over the repeated leading axes.
                for row in gs.chunks_exact(db.len()) {
                    db.iter_mut().zip(row).for_each(|(d, s)| *d += sign * s);
                }
            });
            if wants(a) {
                pass(grads, pool, *a, g);
                return;
            }
        }
        Op::Hadamard(a, b) => {
            let (xa, xb) = (data(a), data(b));
            acc(*a, &mut |da, fresh| {
                for ((d, s), y) in da.iter_mut().zip(gs).zip(xb) {
                    put(d, s * y, fresh);
                }
            });
            acc(*b, &mut |db, fresh| {
                for ((d, s), x) in db.iter_mut().zip(gs).zip(xa) {
                    put(d, s * x, fresh);
                }
            });
        }
        Op::Relu(a) => {
            let x = data(a);
            acc(*a, &mut |da, fresh| {
                for ((d, s), x) in da.iter_mut().zip(gs).zip(x) {
                    put(d, if *x > 0.0 { *s } else { 0.0 }, fresh);
                }
            });
        }
        Op::Scale(a, c) => {
            acc(*a, &mut |da, fresh| {
                da.iter_mut()
                    .zip(gs)
                    .for_each(|(d, s)| put(d, c * s, fresh))
            });
        }
        Op::Transpose01(..) | Op::Reshape(_) => unreachable!("handled above"),
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let mut offset = 0;
            for p in parts {
                let w = nodes[p.0].value.shape()[1];
                acc(*p, &mut |dp, fresh| {
                    for (d, src) in dp.chunks_exact_mut(w).zip(gs.chunks_exact(total)) {
                        d.iter_mut()
                            .zip(&src[offset..offset + w])
                            .for_each(|(d, s)| put(d, *s, fresh));
                    }
                });
                offset += w;
            }
        }
        Op::Index0(a, i) => {
            let inner = gs.len();
            acc(*a, &mut |da, fresh| {
                if fresh {
                    da.fill(0.0);
                }
                da[i * inner..(i + 1) * inner]
                    .iter_mut()
                    .zip(gs)
                    .for_each(|(d, s)| *d += s);
            });
        }
        Op::Mse(p, t) => {
            let (xp, xt) = (data(p), data(t));
            let c = 2.0 * gs[0] / xp.len().max(1) as f64;
            acc(*p, &mut |dp, fresh| {
                for ((d, a), b) in dp.iter_mut().zip(xp).zip(xt) {
                    put(d, c * (a - b), fresh);
                }
            });
            acc(*t, &mut |dt, fresh| {
                for ((d, a), b) in dt.iter_mut().zip(xp).zip(xt) {
                    put(d, -c * (a - b), fresh);
                }
            });
        }
    }
    pool.give(g);
}
