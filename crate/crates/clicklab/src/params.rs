//! Named trainable parameters, shared by the embedding bank, the component
//! models, and the fusion head.
//!
//! Parameters live outside any tape; each training step binds them onto a
//! fresh [`Tape`] as leaves and reads gradients back by id after `backward`.
//! Names are unique and allocation order is deterministic, which is what lets
//! checkpoints restore by name and equal seeds reproduce runs bit for bit.

use std::collections::HashSet;

use rand::Rng;

use crate::rng::{standard_normal, uniform_symmetric};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
    names: HashSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.names.insert(name.clone()),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, tensor });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weight matrix `[fan_in, fan_out]`.
    pub fn add_weight<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| uniform_symmetric(rng, limit))
            .collect();
        let t = Tensor::new(vec![fan_in, fan_out], data).expect("consistent init shape");
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Embedding table `[rows, dim]` with N(0, 0.01) entries.
    pub fn add_embedding<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        rows: usize,
        dim: usize,
    ) -> ParamId {
        let data = (0..rows * dim).map(|_| 0.01 * standard_normal(rng)).collect();
        let t = Tensor::new(vec![rows, dim], data).expect("consistent init shape");
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Binds every parameter onto `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound, TensorError> {
        self.bind_with(tape, true)
    }

    /// Binds every parameter as a constant (evaluation mode).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<Bound, TensorError> {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> Result<Bound, TensorError> {
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let v = if trainable {
                tape.leaf(p.tensor.clone())?
            } else {
                tape.constant(p.tensor.clone())?
            };
            vars.push(v);
        }
        Ok(Bound { vars })
    }

    /// Copies every parameter value, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    /// Restores values captured by [`ParamStore::snapshot`].
    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot size mismatch");
        for (p, t) in self.params.iter_mut().zip(snapshot) {
            debug_assert_eq!(p.tensor.shape(), t.shape());
            p.tensor = t.clone();
        }
    }

    /// Gradients for every parameter after a backward pass, zeros where no
    /// gradient flowed.
    pub fn collect_grads(&self, tape: &Tape, bound: &Bound) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.tensor.numel()],
            })
            .collect()
    }
}

/// Tape bindings for a full parameter store, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
