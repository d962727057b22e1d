use std::collections::HashMap;

use rand::Rng;

use super::{AutodiffError, Tensor};

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// `None` until a backward pass reaches this parameter.
    pub grad: Option<Vec<f64>>,
}

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId, AutodiffError> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Registers a tensor drawn uniformly from `[-bound, bound]`.
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId, AutodiffError> {
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        self.register(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds `scale * grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &ParamGrads, scale: f64) {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            let Some(g) = g else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += scale * b;
                    }
                }
                None => p.grad = Some(g.iter().map(|b| scale * b).collect()),
            }
        }
    }

    /// Copies values (not gradients) from another store with the same layout.
    pub fn load_values_from(&mut self, other: &ParamStore) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.value = q.value.clone();
        }
    }
}

/// Per-parameter gradients extracted from one backward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads(pub(crate) Vec<Option<Vec<f64>>>);

impl ParamGrads {
    pub fn empty(n_params: usize) -> Self {
        Self(vec![None; n_params])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }

    /// Elementwise sum in argument order.
    pub fn add_assign(&mut self, other: &ParamGrads) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            let Some(b) = b else { continue };
            match a {
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
                None => *a = Some(b.clone()),
            }
        }
    }
}
