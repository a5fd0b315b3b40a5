//! The full ensemble: per-component embedding lookups, component forwards,
//! confidence fusion, and the collaborative objective, all on one tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_seq_masks, ComponentConfig, ComponentInputs, ComponentModel, Linear, ModelError};
use crate::data::{ExampleBatch, FeatureSchema};
use crate::embedding::{BankConfig, BankMode, EmbeddingBank};
use crate::fusion::{
    bce, collaborative_kl, confidence, fuse, fusion_weights, readout, stack_columns,
    total_objective, uniform_weights, FusionConfig, FusionMode, FusionResult, LossBreakdown,
};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Var};

/// Which embedding the per-component prediction head consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    Raw,
    Projected,
}

impl Default for HeadInput {
    fn default() -> Self {
        HeadInput::Raw
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentSpec {
    #[serde(flatten)]
    pub config: ComponentConfig,
    pub embedding_dim: usize,
}

/// Everything needed to build an [`EnsembleModel`] against a schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub components: Vec<ComponentSpec>,
    #[serde(default = "default_bank_mode")]
    pub bank_mode: BankMode,
    #[serde(default = "default_true")]
    pub share_dense_mlp: bool,
    pub fusion: FusionConfig,
    /// Common projected width; defaults to the first component's d_out.
    #[serde(default)]
    pub d_proj: Option<usize>,
    #[serde(default)]
    pub head_input: HeadInput,
    /// Whether per-component BCE terms enter the objective.
    #[serde(default = "default_true")]
    pub include_component_losses: bool,
    /// Sparse field used as the attention target; defaults to the first.
    #[serde(default)]
    pub target_field: Option<String>,
}

fn default_bank_mode() -> BankMode {
    BankMode::Multi
}

fn default_true() -> bool {
    true
}

/// Per-component tensors from one forward pass.
pub struct ComponentOutput {
    /// `[B, d_out]` raw output embedding.
    pub embedding: Var,
    /// `[B, d_proj]` projected embedding entering fusion.
    pub projected: Var,
    /// `[B]` clamped individual prediction.
    pub prediction: Var,
}

pub struct ForwardPass {
    pub components: Vec<ComponentOutput>,
    pub fusion: FusionResult,
    pub losses: LossBreakdown,
}

pub struct EnsembleModel {
    pub schema: FeatureSchema,
    pub bank: EmbeddingBank,
    pub components: Vec<ComponentModel>,
    pub fusion: FusionConfig,
    pub head_input: HeadInput,
    pub include_component_losses: bool,
    pub d_proj: usize,
    pub target_field: usize,
    /// Readout over the fused embedding; absent for single-component models,
    /// whose prediction is their own head.
    pub readout: Option<Linear>,
}

impl EnsembleModel {
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        schema: &FeatureSchema,
        spec: &EnsembleSpec,
    ) -> Result<EnsembleModel, ModelError> {
        schema
            .validate()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        if spec.components.is_empty() {
            return Err(ModelError::Config("at least one component required".to_string()));
        }
        if spec.fusion.alpha < 0.0 {
            return Err(ModelError::Config("alpha must be non-negative".to_string()));
        }
        let target_field = match &spec.target_field {
            Some(name) => schema.sparse_index(name).ok_or_else(|| {
                ModelError::Config(format!("target field `{name}` is not a sparse field"))
            })?,
            None => 0,
        };
        let bank_cfg = BankConfig {
            mode: spec.bank_mode,
            dims: spec.components.iter().map(|c| c.embedding_dim).collect(),
            share_dense_mlp: spec.share_dense_mlp,
        };
        let bank = EmbeddingBank::build(store, rng, schema, &bank_cfg)?;
        let d_proj = spec.d_proj.unwrap_or(spec.components[0].config.d_out);

        let mut components = Vec::with_capacity(spec.components.len());
        for (m, cs) in spec.components.iter().enumerate() {
            components.push(ComponentModel::build(
                store,
                rng,
                m,
                &cs.config,
                cs.embedding_dim,
                schema.n_sparse(),
                schema.n_sequence(),
                d_proj,
            )?);
        }

        let n = components.len();
        let readout = if n > 1 {
            let width = match spec.fusion.mode {
                FusionMode::WeightedConcat | FusionMode::PlainConcat => n * d_proj,
                FusionMode::WeightedSum => d_proj,
            };
            Some(Linear::build(store, rng, "fusion.readout", width, 1))
        } else {
            None
        };
        let mut fusion = spec.fusion.clone();
        fusion.n_components = n;
        Ok(EnsembleModel {
            schema: schema.clone(),
            bank,
            components,
            fusion,
            head_input: spec.head_input,
            include_component_losses: spec.include_component_losses,
            d_proj,
            target_field,
            readout,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Full forward pass with losses against the batch labels.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &ExampleBatch,
    ) -> Result<ForwardPass, ModelError> {
        let masks = build_seq_masks(tape, &self.schema, batch)?;
        let b = batch.len;

        let mut outputs = Vec::with_capacity(self.components.len());
        for (m, comp) in self.components.iter().enumerate() {
            let sparse = self.bank.lookup_sparse(m, tape, bound, batch)?;
            let mut seqs = Vec::with_capacity(self.schema.n_sequence());
            for j in 0..self.schema.n_sequence() {
                seqs.push(self.bank.lookup_sequence_field(m, tape, bound, batch, j)?);
            }
            let dense = self.bank.encode_dense(m, tape, bound, batch)?;
            let target = self.bank.lookup_sparse_field(m, tape, bound, batch, self.target_field)?;
            let inputs = ComponentInputs {
                sparse,
                seqs,
                dense,
                target,
                masks: &masks,
                batch_size: b,
                dim: comp.emb_dim,
            };
            let embedding = comp.forward(tape, bound, &inputs)?;
            let projected = comp.project(tape, bound, embedding)?;
            let head_in = match self.head_input {
                HeadInput::Raw => embedding,
                HeadInput::Projected => projected,
            };
            let prediction = comp.predict(tape, bound, head_in)?;
            outputs.push(ComponentOutput {
                embedding,
                projected,
                prediction,
            });
        }

        let predictions: Vec<Var> = outputs.iter().map(|o| o.prediction).collect();
        let n = outputs.len();

        if n == 1 {
            // Standalone component: its head is the model output.
            let confidences = {
                let c = confidence(tape, predictions[0], self.fusion.use_gradient_stop)?;
                stack_columns(tape, &[c])?
            };
            let weights = uniform_weights(tape, b, 1)?;
            let fused = outputs[0].projected;
            let prediction = predictions[0];
            let fusion_loss = bce(tape, prediction, &batch.labels)?;
            let kl = collaborative_kl(tape, &predictions)?;
            let losses = total_objective(tape, Vec::new(), fusion_loss, kl, self.fusion.alpha)?;
            return Ok(ForwardPass {
                components: outputs,
                fusion: FusionResult {
                    confidences,
                    weights,
                    fused,
                    prediction,
                },
                losses,
            });
        }

        let mut confs = Vec::with_capacity(n);
        for &p in &predictions {
            confs.push(confidence(tape, p, self.fusion.use_gradient_stop)?);
        }
        let confidences = stack_columns(tape, &confs)?;
        let weights = if self.fusion.use_confidence && self.fusion.mode != FusionMode::PlainConcat {
            fusion_weights(tape, &confs)?
        } else {
            uniform_weights(tape, b, n)?
        };
        let projected: Vec<Var> = outputs.iter().map(|o| o.projected).collect();
        let fused = fuse(tape, &projected, weights, self.fusion.mode)?;
        let ro = self.readout.as_ref().expect("multi-component has a readout");
        let prediction = readout(tape, bound, fused, ro.w, ro.b)?;

        let fusion_loss = bce(tape, prediction, &batch.labels)?;
        let component_losses = if self.include_component_losses {
            let mut ls = Vec::with_capacity(n);
            for &p in &predictions {
                ls.push(bce(tape, p, &batch.labels)?);
            }
            ls
        } else {
            Vec::new()
        };
        let kl = collaborative_kl(tape, &predictions)?;
        let losses = total_objective(tape, component_losses, fusion_loss, kl, self.fusion.alpha)?;

        Ok(ForwardPass {
            components: outputs,
            fusion: FusionResult {
                confidences,
                weights,
                fused,
                prediction,
            },
            losses,
        })
    }
}
