use super::{Tensor, TensorError};
use crate::tensor::ops::Op;

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub needs_grad: bool,
}

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in creation order; since an op can only reference
/// already-existing nodes the order is topological and the graph acyclic by
/// construction. `backward` sweeps ids in reverse, visiting each node once.
///
/// Gradients accumulate: calling `backward` again without `reset_grads` adds
/// a second pass worth of gradient on top of the first.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    pub(crate) grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf (a parameter or input that wants
    /// gradients).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Registers a non-differentiable value (labels, masks, frozen params).
    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push("constant", value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient for `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor shaped like `v`'s value, zeros if none reached it.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape matches value"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Smallest distance from any ReLU or clamp input to its kink over the
    /// whole tape, infinity when no such op was recorded. Finite-difference
    /// checks use this to skip instances where a central difference would
    /// straddle a non-differentiable point.
    pub fn kink_margin(&self) -> f64 {
        use crate::tensor::ops::{Op, UnKind};
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Unary {
                    kind: UnKind::Relu,
                    a,
                } => {
                    for &v in self.nodes[a.0].value.data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for &v in self.nodes[x.0].value.data() {
                        margin = margin.min((v - lo).abs().min((v - hi).abs()));
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Backpropagates from a scalar loss, seeding its gradient with 1.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TensorError::InvalidArgument {
                op: "backward",
                msg: format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            });
        }
        self.backward_seeded(loss, &[1.0])
    }

    /// Backpropagates from `at` with an explicit upstream gradient, allowing
    /// row-of-the-Jacobian queries against non-scalar nodes.
    pub fn backward_seeded(&mut self, at: Var, seed: &[f64]) -> Result<(), TensorError> {
        let n = self.nodes[at.0].value.numel();
        if seed.len() != n {
            return Err(TensorError::InvalidArgument {
                op: "backward",
                msg: format!("seed has {} values but node has {}", seed.len(), n),
            });
        }
        if !self.nodes[at.0].needs_grad {
            // Nothing differentiable upstream of this node.
            return Ok(());
        }
        self.accumulate(at, seed);
        for id in (0..=at.0).rev() {
            if !self.nodes[id].needs_grad || self.grads[id].is_none() {
                continue;
            }
            // Interior gradients are consumed by the sweep so that repeated
            // backward calls each contribute exactly one pass; leaves keep
            // accumulating across calls.
            let g = if matches!(self.nodes[id].op, Op::Leaf) {
                self.grads[id].clone().expect("checked above")
            } else {
                self.grads[id].take().expect("checked above")
            };
            self.backprop_node(id, &g);
        }
        Ok(())
    }

    pub(crate) fn accumulate(&mut self, v: Var, g: &[f64]) {
        debug_assert_eq!(g.len(), self.nodes[v.0].value.numel());
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grads[v.0] = Some(g.to_vec()),
        }
    }

    pub(crate) fn push(
        &mut self,
        opname: &'static str,
        value: Tensor,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: opname });
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Ok(Var(id))
    }
}
