//! Desk-scale laboratory for collaborative-ensemble click-through-rate models.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: dense `f64` tensors on a reverse-mode autodiff tape, including
//!   an explicit gradient-stop primitive.
//! - [`data`]: feature schemas, a synthetic CTR generator with planted
//!   interaction structure, CSV ingestion, splits and batching.
//! - [`embedding`]: one independent embedding table and dense-feature MLP per
//!   component model (or a single shared one for the shared-embedding baseline).
//! - [`model`]: the component-model zoo (MLP tower, cross network, sequence
//!   attention, hierarchical ensemble blocks) and the ensemble glue.
//! - [`fusion`]: entropy-confidence softmax fusion and the collaborative
//!   objective (per-head BCE + fused BCE + symmetric KL).
//! - [`metrics`]: AUC, grouped AUC, LogLoss, Normalized Entropy, and an
//!   effective-rank diagnostic for embedding tables.
//! - [`runner`]: config-driven training, evaluation, ablation grids, embedding
//!   scale sweeps, one-epoch streaming runs, and checkpointing.
//!
//! Everything is deterministic given a seed: identical configs reproduce every
//! logged number bit for bit.

pub mod data;
pub mod embedding;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod runner;
pub mod tensor;

pub use tensor::{Tape, Tensor, TensorError, Var};
