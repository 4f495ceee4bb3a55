use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NeuralError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, keyed `<layer>/<param>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Replace every value with the entry of the same name, checking shapes.
    pub fn assign(&mut self, entries: &[(String, Tensor)]) -> Result<(), NeuralError> {
        if entries.len() != self.tensors.len() {
            return Err(NeuralError::ParameterSetMismatch(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                entries.len()
            )));
        }
        for (name, value) in entries {
            let id = self
                .find(name)
                .ok_or_else(|| NeuralError::ParameterSetMismatch(format!("unknown key {name}")))?;
            let slot = &mut self.tensors[id.0];
            if slot.shape() != value.shape() {
                return Err(NeuralError::ShapeMismatch {
                    op: "assign",
                    left: slot.shape().to_vec(),
                    right: value.shape().to_vec(),
                });
            }
            slot.data_mut().copy_from_slice(value.data());
        }
        Ok(())
    }
}

/// Seeded generator used for every weight initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape product matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_stays_in_range_and_is_seeded() {
        let a = glorot_uniform(vec![20, 30], 20, 30, &mut init_rng(7));
        let b = glorot_uniform(vec![20, 30], 20, 30, &mut init_rng(7));
        assert_eq!(a, b);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() < limit));
        let mean = a.data().iter().sum::<f64>() / 600.0;
        assert!(mean.abs() < 0.05);
    }

    #[test]
    fn assign_checks_names_and_shapes() {
        let mut store = ParamStore::new();
        store.add("l/w", Tensor::zeros(vec![2, 2]));
        let ok = vec![(
            "l/w".to_string(),
            Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap(),
        )];
        store.assign(&ok).unwrap();
        assert_eq!(store.get(ParamId(0)).data(), &[1.0; 4]);
        let bad = vec![("l/w".to_string(), Tensor::zeros(vec![4]))];
        assert!(store.assign(&bad).is_err());
        let unknown = vec![("l/b".to_string(), Tensor::zeros(vec![2, 2]))];
        assert!(store.assign(&unknown).is_err());
    }
}
