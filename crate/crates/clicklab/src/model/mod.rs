//! Component models: interchangeable architectures mapping per-component
//! embeddings to an output embedding `e_m` and an individual prediction.
//!
//! Four kinds are provided. `mlp_tower` stacks linear+ReLU layers over the
//! flattened inputs. `cross_net` applies the bilinear cross recurrence
//! `x_{l+1} = x_0 * (W x_l + b) + x_l` that multiplies feature pairs
//! explicitly. `seq_attention` scores each history item against the target
//! item and pools with a masked softmax before an MLP tower. `hier_ensemble`
//! stacks residual blocks that concatenate a cross layer with a small MLP and
//! re-project, mixing interaction orders per block.

mod ensemble;
mod inputs;

pub use ensemble::{ComponentOutput, ComponentSpec, EnsembleModel, EnsembleSpec, ForwardPass, HeadInput};
pub use inputs::{build_seq_masks, flatten_inputs, masked_mean_pool, ComponentInputs, SeqMasks};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::BankError;
use crate::metrics::EPS_PROB;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    MlpTower,
    CrossNet,
    SeqAttention,
    HierEnsemble,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentConfig {
    pub kind: ComponentKind,
    pub depth: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl ComponentConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.depth == 0 || self.hidden == 0 || self.d_out == 0 {
            return Err(ModelError::Config(format!(
                "depth, hidden and d_out must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A weight matrix plus bias vector.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Linear {
        Linear {
            w: store.add_weight(rng, format!("{name}.w"), fan_in, fan_out),
            b: store.add_zeros(format!("{name}.b"), vec![fan_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        let z = tape.matmul(x, bound.var(self.w))?;
        tape.add_bias(z, bound.var(self.b))
    }
}

/// Attention scorer for one sequence field: a two-layer MLP over
/// `[h_t, q, h_t * q]`.
#[derive(Debug, Clone)]
pub struct AttentionMlp {
    pub l1: Linear,
    pub l2: Linear,
}

enum KindParams {
    Tower {
        layers: Vec<Linear>,
    },
    Cross {
        layers: Vec<Linear>,
        out: Linear,
    },
    SeqAttn {
        attention: Vec<AttentionMlp>,
        tower: Vec<Linear>,
    },
    Hier {
        blocks: Vec<HierBlock>,
        out: Linear,
    },
}

struct HierBlock {
    cross: Linear,
    mlp: Linear,
    proj: Linear,
}

/// One built component model: its interaction architecture, a projection to
/// the common fusion width, and a scalar prediction head.
pub struct ComponentModel {
    pub config: ComponentConfig,
    pub emb_dim: usize,
    pub input_width: usize,
    params: KindParams,
    pub proj: Linear,
    pub head: Linear,
}

impl ComponentModel {
    /// Allocates parameters under `comp{index}.`. `n_sparse`/`n_seq` describe
    /// the schema; the flattened input width is `(n_sparse + n_seq + 1) * d`.
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        index: usize,
        config: &ComponentConfig,
        emb_dim: usize,
        n_sparse: usize,
        n_seq: usize,
        d_proj: usize,
    ) -> Result<ComponentModel, ModelError> {
        config.validate()?;
        let d = emb_dim;
        let width = (n_sparse + n_seq + 1) * d;
        let prefix = format!("comp{index}");
        let params = match config.kind {
            ComponentKind::MlpTower => KindParams::Tower {
                layers: tower_layers(store, rng, &format!("{prefix}.tower"), width, config),
            },
            ComponentKind::CrossNet => {
                let layers = (0..config.depth)
                    .map(|l| Linear::build(store, rng, &format!("{prefix}.cross{l}"), width, width))
                    .collect();
                let out = Linear::build(store, rng, &format!("{prefix}.out"), width, config.d_out);
                KindParams::Cross { layers, out }
            }
            ComponentKind::SeqAttention => {
                if n_seq == 0 {
                    return Err(ModelError::Config(
                        "seq_attention needs at least one sequence field".to_string(),
                    ));
                }
                if n_sparse == 0 {
                    return Err(ModelError::Config(
                        "seq_attention needs a sparse target field".to_string(),
                    ));
                }
                let attention = (0..n_seq)
                    .map(|j| AttentionMlp {
                        l1: Linear::build(
                            store,
                            rng,
                            &format!("{prefix}.att{j}.l1"),
                            3 * d,
                            config.hidden,
                        ),
                        l2: Linear::build(store, rng, &format!("{prefix}.att{j}.l2"), config.hidden, 1),
                    })
                    .collect();
                KindParams::SeqAttn {
                    attention,
                    tower: tower_layers(store, rng, &format!("{prefix}.tower"), width, config),
                }
            }
            ComponentKind::HierEnsemble => {
                let blocks = (0..config.depth)
                    .map(|l| HierBlock {
                        cross: Linear::build(store, rng, &format!("{prefix}.blk{l}.cross"), width, width),
                        mlp: Linear::build(
                            store,
                            rng,
                            &format!("{prefix}.blk{l}.mlp"),
                            width,
                            config.hidden,
                        ),
                        proj: Linear::build(
                            store,
                            rng,
                            &format!("{prefix}.blk{l}.proj"),
                            width + config.hidden,
                            width,
                        ),
                    })
                    .collect();
                let out = Linear::build(store, rng, &format!("{prefix}.out"), width, config.d_out);
                KindParams::Hier { blocks, out }
            }
        };
        Ok(ComponentModel {
            config: config.clone(),
            emb_dim,
            input_width: width,
            params,
            proj: Linear::build(store, rng, &format!("{prefix}.proj"), config.d_out, d_proj),
            head: Linear::build(store, rng, &format!("{prefix}.head"), config.d_out, 1),
        })
    }

    /// Output embedding `e_m`, `[B, d_out]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &ComponentInputs,
    ) -> Result<Var, ModelError> {
        match &self.params {
            KindParams::Tower { layers } => {
                let x = flatten_inputs(tape, inputs)?;
                forward_tower(tape, bound, layers, x).map_err(Into::into)
            }
            KindParams::Cross { layers, out } => {
                let x0 = flatten_inputs(tape, inputs)?;
                let mut x = x0;
                for layer in layers {
                    let xw = layer.forward(tape, bound, x)?;
                    let prod = tape.mul(x0, xw)?;
                    x = tape.add(prod, x)?;
                }
                out.forward(tape, bound, x).map_err(Into::into)
            }
            KindParams::SeqAttn { attention, tower } => {
                let mut parts = Vec::new();
                let b = inputs.batch_size;
                let n = tape.shape(inputs.sparse)[1];
                let d = inputs.dim;
                parts.push(tape.reshape(inputs.sparse, vec![b, n * d])?);
                for (j, att) in attention.iter().enumerate() {
                    let (context, _) = attention_pool(
                        tape,
                        bound,
                        att,
                        inputs.seqs[j],
                        inputs.target,
                        &inputs.masks[j],
                        b,
                        d,
                    )?;
                    parts.push(context);
                }
                parts.push(inputs.dense);
                let x = tape.concat(&parts, 1)?;
                forward_tower(tape, bound, tower, x).map_err(Into::into)
            }
            KindParams::Hier { blocks, out } => {
                let x0 = flatten_inputs(tape, inputs)?;
                let mut z = x0;
                for block in blocks {
                    let zw = block.cross.forward(tape, bound, z)?;
                    let cross = tape.mul(z, zw)?;
                    let h = block.mlp.forward(tape, bound, z)?;
                    let h = tape.relu(h)?;
                    let cat = tape.concat(&[cross, h], 1)?;
                    let p = block.proj.forward(tape, bound, cat)?;
                    z = tape.add(p, z)?;
                }
                out.forward(tape, bound, z).map_err(Into::into)
            }
        }
    }

    /// Linear projection of `e_m` to the common fusion width.
    pub fn project(&self, tape: &mut Tape, bound: &Bound, e: Var) -> Result<Var, TensorError> {
        self.proj.forward(tape, bound, e)
    }

    /// Individual prediction from the head: `sigmoid(e w + b)` clamped into
    /// the open interval, `[B]`.
    pub fn predict(&self, tape: &mut Tape, bound: &Bound, e: Var) -> Result<Var, TensorError> {
        let z = self.head.forward(tape, bound, e)?;
        let p = tape.sigmoid(z)?;
        let p = tape.clamp(p, EPS_PROB, 1.0 - EPS_PROB)?;
        let b = tape.shape(p)[0];
        tape.reshape(p, vec![b])
    }

    /// Every parameter id owned by this component (excluding its embedding
    /// table, which the bank owns).
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        let push_linear = |l: &Linear, ids: &mut Vec<ParamId>| {
            ids.push(l.w);
            ids.push(l.b);
        };
        match &self.params {
            KindParams::Tower { layers } => {
                for l in layers {
                    push_linear(l, &mut ids);
                }
            }
            KindParams::Cross { layers, out } => {
                for l in layers {
                    push_linear(l, &mut ids);
                }
                push_linear(out, &mut ids);
            }
            KindParams::SeqAttn { attention, tower } => {
                for a in attention {
                    push_linear(&a.l1, &mut ids);
                    push_linear(&a.l2, &mut ids);
                }
                for l in tower {
                    push_linear(l, &mut ids);
                }
            }
            KindParams::Hier { blocks, out } => {
                for b in blocks {
                    push_linear(&b.cross, &mut ids);
                    push_linear(&b.mlp, &mut ids);
                    push_linear(&b.proj, &mut ids);
                }
                push_linear(out, &mut ids);
            }
        }
        push_linear(&self.proj, &mut ids);
        push_linear(&self.head, &mut ids);
        ids
    }
}

fn tower_layers<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    input_width: usize,
    config: &ComponentConfig,
) -> Vec<Linear> {
    let mut layers = Vec::with_capacity(config.depth);
    let mut fan_in = input_width;
    for l in 0..config.depth {
        let fan_out = if l + 1 == config.depth {
            config.d_out
        } else {
            config.hidden
        };
        layers.push(Linear::build(store, rng, &format!("{prefix}.l{l}"), fan_in, fan_out));
        fan_in = fan_out;
    }
    layers
}

fn forward_tower(
    tape: &mut Tape,
    bound: &Bound,
    layers: &[Linear],
    mut x: Var,
) -> Result<Var, TensorError> {
    for layer in layers {
        let z = layer.forward(tape, bound, x)?;
        x = tape.relu(z)?;
    }
    Ok(x)
}

/// Target-aware attention pool over one sequence field. Scores each valid
/// position with the attention MLP, masked-softmaxes them, and returns the
/// weighted sum of position embeddings plus the `[B, N]` attention weights.
/// Rows with no valid positions pool to the zero vector.
#[allow(clippy::too_many_arguments)]
pub fn attention_pool(
    tape: &mut Tape,
    bound: &Bound,
    att: &AttentionMlp,
    seq: Var,
    target: Var,
    masks: &SeqMasks,
    batch_size: usize,
    dim: usize,
) -> Result<(Var, Var), TensorError> {
    let n = tape.shape(seq)[1];
    let mut positions = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for t in 0..n {
        let h = tape.slice(seq, 1, t, 1)?;
        let h = tape.reshape(h, vec![batch_size, dim])?;
        let hq = tape.mul(h, target)?;
        let feats = tape.concat(&[h, target, hq], 1)?;
        let z = att.l1.forward(tape, bound, feats)?;
        let z = tape.relu(z)?;
        let s = att.l2.forward(tape, bound, z)?;
        positions.push(h);
        scores.push(s);
    }
    let scores = tape.concat(&scores, 1)?;

    // Row-wise max over valid positions, detached: softmax is shift-invariant
    // so the forward value and the gradient are both unchanged by this.
    let score_vals = tape.value(scores).data().to_vec();
    let mask_vals = tape.value(masks.matrix).data().to_vec();
    let mut cmax = vec![0.0; batch_size];
    for b in 0..batch_size {
        let mut m = f64::NEG_INFINITY;
        for t in 0..n {
            if mask_vals[b * n + t] > 0.5 {
                m = m.max(score_vals[b * n + t]);
            }
        }
        cmax[b] = if m.is_finite() { m } else { 0.0 };
    }
    let cmax = tape.constant(crate::tensor::Tensor::new(vec![batch_size, 1], cmax)?)?;

    // Mask the shifted scores before exponentiating so padding positions
    // contribute exp(0) * 0 = 0 regardless of how extreme their (unused)
    // scores are, then mask again after.
    let shifted = tape.sub(scores, cmax)?;
    let shifted = tape.mul(shifted, masks.matrix)?;
    let e = tape.exp(shifted)?;
    let masked = tape.mul(e, masks.matrix)?;
    let ones = tape.constant(crate::tensor::Tensor::new(vec![n, 1], vec![1.0; n])?)?;
    let denom = tape.matmul(masked, ones)?;
    let denom = tape.add(denom, masks.empty)?;
    let attn = tape.div(masked, denom)?;

    let mut context: Option<Var> = None;
    for (t, &h) in positions.iter().enumerate() {
        let w = tape.slice(attn, 1, t, 1)?;
        let weighted = tape.mul(h, w)?;
        context = Some(match context {
            Some(c) => tape.add(c, weighted)?,
            None => weighted,
        });
    }
    Ok((context.expect("n >= 1"), attn))
}
