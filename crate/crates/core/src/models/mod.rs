//! Chebyshev graph convolution, first-order graph convolution and a fully
//! connected baseline, all mapping per-bus features to one price per bus.
//!
//! Batches are laid out `[N, B, C]` (nodes, samples, channels) so that both
//! the graph operator (`[N, N]·[N, B·C]`) and channel mixing
//! (`[N·B, C_in]·[C_in, C_out]`) are plain matrix products on reshaped views.

mod cheb;
mod gcn;

pub use cheb::{cheb_basis, cheb_layer_forward, ChebLayer};
pub use gcn::{gcn1_layer_forward, gcn_operator, GcnLayer};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Gso;
use crate::linalg::Matrix;
use crate::neural::{
    glorot_uniform, init_rng, Checkpoint, NeuralError, ParamId, ParamStore, Tape, Tensor, Var,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("graph models need a graph shift operator")]
    MissingGso,
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("input must be [nodes, batch, channels], got {0:?}")]
    InputShape(Vec<usize>),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Node-by-channel signal on a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    values: Matrix,
}

impl GraphSignal {
    pub fn new(values: Matrix) -> Self {
        GraphSignal { values }
    }

    pub fn nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cheb,
    Gcn1,
    Fcnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Fcnn, ModelKind::Gcn1, ModelKind::Cheb];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cheb => "cheb",
            ModelKind::Gcn1 => "gcn1",
            ModelKind::Fcnn => "fcnn",
        }
    }

    pub fn needs_gso(self) -> bool {
        self != ModelKind::Fcnn
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cheb" => Ok(ModelKind::Cheb),
            "gcn1" => Ok(ModelKind::Gcn1),
            "fcnn" => Ok(ModelKind::Fcnn),
            other => Err(ModelError::InvalidSpec(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// Architecture description. `hidden` lists hidden widths (channels per node
/// for graph models, units for the FCNN); every hidden layer is followed by a
/// ReLU. `k` is the Chebyshev order and is ignored by the other kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

fn default_k() -> usize {
    3
}

fn default_in_channels() -> usize {
    2
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            hidden: None,
            k: default_k(),
            in_channels: default_in_channels(),
        }
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| match self.kind {
            ModelKind::Cheb | ModelKind::Gcn1 => vec![32],
            ModelKind::Fcnn => vec![256, 256],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Cheb(ChebLayer),
    Gcn(GcnLayer),
    Dense { weight: ParamId, bias: ParamId },
}

/// A built model: parameters plus the fixed graph operator it convolves with
/// (`L̃` for Chebyshev layers, `Â` for first-order layers).
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    n_nodes: usize,
    params: ParamStore,
    layers: Vec<Layer>,
    operator: Option<Tensor>,
}

/// Instantiate `spec` on an `n_nodes` graph with Glorot-uniform weights drawn
/// from `seed` and zero biases.
pub fn build_model(
    spec: &ModelSpec,
    n_nodes: usize,
    gso: Option<&Gso>,
    seed: u64,
) -> Result<Model, ModelError> {
    if spec.in_channels == 0 || n_nodes == 0 {
        return Err(ModelError::InvalidSpec(
            "need at least one node and channel".into(),
        ));
    }
    let hidden = spec.hidden_widths();
    if hidden.contains(&0) {
        return Err(ModelError::InvalidSpec(
            "hidden widths must be positive".into(),
        ));
    }
    if spec.kind == ModelKind::Cheb && spec.k == 0 {
        return Err(ModelError::InvalidSpec(
            "Chebyshev order must be at least 1".into(),
        ));
    }
    let operator = if spec.kind.needs_gso() {
        let gso = gso.ok_or(ModelError::MissingGso)?;
        if gso.dim() != n_nodes {
            return Err(ModelError::DimensionMismatch {
                what: "graph shift operator size",
                expected: n_nodes,
                got: gso.dim(),
            });
        }
        Some(match spec.kind {
            ModelKind::Cheb => cheb::operator_tensor(gso.l_tilde()),
            _ => cheb::operator_tensor(&gcn_operator(gso.l())),
        })
    } else {
        None
    };

    let mut rng = init_rng(seed);
    let mut params = ParamStore::new();
    let mut layers = Vec::new();
    let widths: Vec<usize> = match spec.kind {
        ModelKind::Fcnn => std::iter::once(n_nodes * spec.in_channels)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(n_nodes))
            .collect(),
        _ => std::iter::once(spec.in_channels)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect(),
    };
    for (i, pair) in widths.windows(2).enumerate() {
        let (c_in, c_out) = (pair[0], pair[1]);
        let bias = Tensor::zeros(vec![c_out]);
        let layer = match spec.kind {
            ModelKind::Cheb => {
                let k = spec.k;
                let name = format!("cheb{}", i + 1);
                let theta = glorot_uniform(vec![k, c_in, c_out], k * c_in, c_out, &mut rng);
                Layer::Cheb(ChebLayer {
                    k,
                    c_in,
                    c_out,
                    theta: params.add(format!("{name}/theta"), theta),
                    bias: params.add(format!("{name}/bias"), bias),
                })
            }
            ModelKind::Gcn1 => {
                let name = format!("gcn{}", i + 1);
                let w = glorot_uniform(vec![c_in, c_out], c_in, c_out, &mut rng);
                Layer::Gcn(GcnLayer {
                    c_in,
                    c_out,
                    weight: params.add(format!("{name}/weight"), w),
                    bias: params.add(format!("{name}/bias"), bias),
                })
            }
            ModelKind::Fcnn => {
                let name = format!("dense{}", i + 1);
                let w = glorot_uniform(vec![c_in, c_out], c_in, c_out, &mut rng);
                Layer::Dense {
                    weight: params.add(format!("{name}/weight"), w),
                    bias: params.add(format!("{name}/bias"), bias),
                }
            }
        };
        layers.push(layer);
    }
    Ok(Model {
        spec: spec.clone(),
        n_nodes,
        params,
        layers,
        operator,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Record the forward pass for `x` of shape `[N, B, C_in]`; the result is
    /// `[N, B]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let (n, b, c) = cheb::dims3(tape, x)?;
        if n != self.n_nodes || c != self.spec.in_channels {
            return Err(ModelError::InputShape(vec![n, b, c]));
        }
        let op = self.operator.as_ref().map(|t| tape.constant(t.clone()));
        let last = self.layers.len() - 1;
        let mut h = match self.spec.kind {
            ModelKind::Fcnn => {
                let t = tape.transpose01(x)?;
                tape.reshape(t, vec![b, n * c])?
            }
            _ => x,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Cheb(l) => {
                    cheb_layer_forward(tape, l, op.expect("built with operator"), h, &self.params)?
                }
                Layer::Gcn(l) => {
                    gcn1_layer_forward(tape, l, op.expect("built with operator"), h, &self.params)?
                }
                Layer::Dense { weight, bias } => {
                    let w = tape.param(&self.params, *weight);
                    let bv = tape.param(&self.params, *bias);
                    let z = tape.matmul(h, w)?;
                    tape.add(z, bv)?
                }
            };
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(match self.spec.kind {
            ModelKind::Fcnn => tape.transpose01(h)?,
            _ => tape.reshape(h, vec![n, b])?,
        })
    }

    /// Inference on `[N, B, C_in]` input, returning `[N, B]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.predict_with(&mut Tape::inference(), x)
    }

    /// [`Model::predict`] on a caller-owned tape, which is reset first so its
    /// buffers are reused across calls.
    pub fn predict_with(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        tape.reset();
        let xv = tape.constant(x.clone());
        let y = self.forward(tape, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let hidden = self
            .spec
            .hidden_widths()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let meta = vec![
            ("kind".to_string(), self.spec.kind.to_string()),
            ("nodes".to_string(), self.n_nodes.to_string()),
            ("in_channels".to_string(), self.spec.in_channels.to_string()),
            ("k".to_string(), self.spec.k.to_string()),
            ("hidden".to_string(), hidden),
        ];
        Checkpoint::from_params(&self.params, meta)
    }

    /// Rebuild a model from a checkpoint written by [`Model::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint, gso: Option<&Gso>) -> Result<Model, ModelError> {
        let get = |key: &str| {
            ck.meta(key)
                .ok_or_else(|| ModelError::InvalidSpec(format!("checkpoint lacks `{key}`")))
        };
        let num = |key: &str| -> Result<usize, ModelError> {
            get(key)?
                .parse()
                .map_err(|_| ModelError::InvalidSpec(format!("bad `{key}` in checkpoint")))
        };
        let hidden = get("hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ModelError::InvalidSpec("bad `hidden` in checkpoint".into()))?;
        let spec = ModelSpec {
            kind: get("kind")?.parse()?,
            hidden: Some(hidden),
            k: num("k")?,
            in_channels: num("in_channels")?,
        };
        let mut model = build_model(&spec, num("nodes")?, gso, 0)?;
        model.params.assign(&ck.tensors)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradient_check;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring_gso(n: usize) -> Gso {
        let l = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                2.5
            } else if (i + 1) % n == j || (j + 1) % n == i {
                1.0 + 0.1 * (i + j) as f64
            } else {
                0.0
            }
        });
        Gso::from_matrix(l, 1e-12).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn default_parameter_counts() {
        let gso = ring_gso(118);
        let count = |kind| {
            build_model(&ModelSpec::new(kind), 118, Some(&gso), 0)
                .unwrap()
                .param_count()
        };
        assert_eq!(count(ModelKind::Cheb), 3 * 2 * 32 + 32 + 3 * 32 + 1);
        assert_eq!(count(ModelKind::Gcn1), 2 * 32 + 32 + 32 + 1);
        assert_eq!(
            count(ModelKind::Fcnn),
            (236 * 256 + 256) + (256 * 256 + 256) + (256 * 118 + 118)
        );
        assert_eq!(count(ModelKind::Fcnn), 156_790);
    }

    #[test]
    fn graph_kinds_require_operator() {
        let spec = ModelSpec::new(ModelKind::Cheb);
        assert_eq!(
            build_model(&spec, 4, None, 0).unwrap_err(),
            ModelError::MissingGso
        );
        assert!(build_model(&ModelSpec::new(ModelKind::Fcnn), 4, None, 0).is_ok());
        assert!(matches!(
            build_model(&spec, 5, Some(&ring_gso(4)), 0),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_params_and_input_give_zero_output() {
        let gso = ring_gso(6);
        for kind in ModelKind::ALL {
            let mut model = build_model(&ModelSpec::new(kind), 6, Some(&gso), 3).unwrap();
            for id in model.params().ids().collect::<Vec<_>>() {
                model.params_mut().get_mut(id).data_mut().fill(0.0);
            }
            let y = model.predict(&Tensor::zeros(vec![6, 4, 2])).unwrap();
            assert_eq!(y.shape(), &[6, 4]);
            assert!(y.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gso = ring_gso(10);
        let x = random_input(&mut rng, vec![10, 3, 2]);
        let y = random_input(&mut rng, vec![10, 3]);
        for kind in ModelKind::ALL {
            let model = build_model(&ModelSpec::new(kind), 10, Some(&gso), 5).unwrap();
            let report = gradient_check(model.params(), 20, 1e-5, 13, |tape, store| {
                let mut m = model.clone();
                *m.params_mut() = store.clone();
                let xv = tape.constant(x.clone());
                let out = m.forward(tape, xv).map_err(|e| match e {
                    ModelError::Neural(n) => n,
                    other => panic!("{other}"),
                })?;
                let yv = tape.constant(y.clone());
                tape.mse(out, yv)
            })
            .unwrap();
            assert!(report.max_rel_error() < 1e-4, "{kind}: {report:?}");
        }
    }

    fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
        let n = perm.len();
        let inner = x.numel() / n;
        let mut out = vec![0.0; x.numel()];
        for (i, &p) in perm.iter().enumerate() {
            out[p * inner..(p + 1) * inner].copy_from_slice(&x.data()[i * inner..(i + 1) * inner]);
        }
        Tensor::new(x.shape().to_vec(), out).unwrap()
    }

    #[test]
    fn graph_models_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 7;
        let gso = ring_gso(n);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let pl = Matrix::from_fn(n, n, |i, j| {
            let (a, b) = (
                perm.iter().position(|&p| p == i).unwrap(),
                perm.iter().position(|&p| p == j).unwrap(),
            );
            gso.l()[(a, b)]
        });
        let gso_p = Gso::with_bound(pl, gso.lambda_max());
        let x = random_input(&mut rng, vec![n, 2, 2]);
        for kind in ModelKind::ALL {
            let spec = ModelSpec::new(kind);
            let model = build_model(&spec, n, Some(&gso), 1).unwrap();
            let mut model_p = build_model(&spec, n, Some(&gso_p), 1).unwrap();
            *model_p.params_mut() = model.params().clone();
            let y = permute(&model.predict(&x).unwrap(), &perm);
            let yp = model_p.predict(&permute(&x, &perm)).unwrap();
            let dev = y
                .data()
                .iter()
                .zip(yp.data())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if kind.needs_gso() {
                assert!(dev < 1e-12, "{kind}: {dev}");
            } else {
                assert!(dev > 1e-3, "fcnn unexpectedly equivariant: {dev}");
            }
        }
    }

    #[test]
    fn order_two_filter_is_local() {
        // Path graph 0-1-2-3-4: a K=2 layer only reaches direct neighbours.
        let n = 5;
        let l = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0
            } else if i.abs_diff(j) == 1 {
                1.0
            } else {
                0.0
            }
        });
        let gso = Gso::from_matrix(l, 1e-12).unwrap();
        let spec = ModelSpec {
            k: 2,
            hidden: Some(vec![]),
            ..ModelSpec::new(ModelKind::Cheb)
        };
        let model = build_model(&spec, n, Some(&gso), 4).unwrap();
        let mut x = Tensor::zeros(vec![n, 1, 2]);
        x.data_mut()[2 * 2] = 1.0;
        x.data_mut()[2 * 2 + 1] = -0.5;
        let y = model.predict(&x).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[4], 0.0);
        assert!(y.data()[1..4].iter().all(|v| *v != 0.0));
    }

    #[test]
    fn checkpoint_restores_model() {
        let gso = ring_gso(5);
        let spec = ModelSpec {
            hidden: Some(vec![4, 3]),
            k: 4,
            ..ModelSpec::new(ModelKind::Cheb)
        };
        let model = build_model(&spec, 5, Some(&gso), 9).unwrap();
        let mut buf = Vec::new();
        model.to_checkpoint().write(&mut buf).unwrap();
        let ck = Checkpoint::read(buf.as_slice()).unwrap();
        let back = Model::from_checkpoint(&ck, Some(&gso)).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.spec().hidden_widths(), vec![4, 3]);
        let x = Tensor::new(vec![5, 1, 2], (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn seeds_fix_initialization() {
        let gso = ring_gso(4);
        let spec = ModelSpec::new(ModelKind::Gcn1);
        let a = build_model(&spec, 4, Some(&gso), 11).unwrap();
        let b = build_model(&spec, 4, Some(&gso), 11).unwrap();
        let c = build_model(&spec, 4, Some(&gso), 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }
}
