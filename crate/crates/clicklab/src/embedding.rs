//! Per-component embedding tables and dense-feature encoders.
//!
//! In multi mode each component model owns a disjoint unified table (one row
//! block per field, plus a shared trainable padding row at index 0) and its
//! own dense MLP, so gradients from one component never touch another's
//! parameters. Shared mode aliases a single table and (by default) a single
//! dense MLP across all components, which is the shared-embedding baseline.
//!
//! Table layout: row 0 is the padding row; field `f` (sparse fields first,
//! then sequence fields, in schema order) starts at offset
//! `1 + sum of earlier cardinalities`, and id `i >= 1` lives at `offset + i`.
//! Id 0 of every field resolves to row 0. Total rows:
//! `1 + sum of all cardinalities`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ExampleBatch, FeatureSchema};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("unknown component index {0}")]
    UnknownComponent(usize),
    #[error("invalid embedding config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    /// One independent table and dense MLP per component.
    Multi,
    /// All components alias one table (and one dense MLP unless
    /// `share_dense_mlp` is off).
    Shared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankConfig {
    pub mode: BankMode,
    /// Embedding dimension per component.
    pub dims: Vec<usize>,
    /// In shared mode, whether the dense MLP is shared too.
    #[serde(default = "default_true")]
    pub share_dense_mlp: bool,
}

fn default_true() -> bool {
    true
}

/// Row offsets of each field inside a component's unified table.
#[derive(Debug, Clone)]
pub struct FieldLayout {
    sparse_offsets: Vec<usize>,
    seq_offsets: Vec<usize>,
    pub rows: usize,
}

impl FieldLayout {
    pub fn new(schema: &FeatureSchema) -> Self {
        let mut next = 1;
        let mut sparse_offsets = Vec::with_capacity(schema.n_sparse());
        for f in &schema.sparse {
            sparse_offsets.push(next);
            next += f.cardinality;
        }
        let mut seq_offsets = Vec::with_capacity(schema.n_sequence());
        for f in &schema.sequence {
            seq_offsets.push(next);
            next += f.cardinality;
        }
        FieldLayout {
            sparse_offsets,
            seq_offsets,
            rows: next,
        }
    }

    pub fn sparse_row(&self, field: usize, id: u32) -> usize {
        if id == 0 {
            0
        } else {
            self.sparse_offsets[field] + id as usize
        }
    }

    pub fn seq_row(&self, field: usize, id: u32) -> usize {
        if id == 0 {
            0
        } else {
            self.seq_offsets[field] + id as usize
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Embedding tables plus dense encoders for every component model.
pub struct EmbeddingBank {
    pub schema: FeatureSchema,
    pub config: BankConfig,
    pub layout: FieldLayout,
    tables: Vec<ParamId>,
    dense_mlps: Vec<DenseMlp>,
}

impl EmbeddingBank {
    /// Allocates tables and dense MLPs into `store`. Component `m` gets
    /// parameter names under `emb{m}.`; shared mode allocates a single
    /// `emb_shared.` set.
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        schema: &FeatureSchema,
        config: &BankConfig,
    ) -> Result<Self, BankError> {
        if config.dims.is_empty() {
            return Err(BankError::Config("no components".to_string()));
        }
        if config.dims.iter().any(|&d| d == 0) {
            return Err(BankError::Config("embedding dims must be >= 1".to_string()));
        }
        if config.mode == BankMode::Shared && config.dims.iter().any(|&d| d != config.dims[0]) {
            return Err(BankError::Config(
                "shared mode requires equal embedding dims".to_string(),
            ));
        }
        let layout = FieldLayout::new(schema);
        let n = config.dims.len();
        let m = schema.n_dense();

        let mut tables = Vec::with_capacity(n);
        let mut dense_mlps = Vec::with_capacity(n);
        match config.mode {
            BankMode::Multi => {
                for (c, &d) in config.dims.iter().enumerate() {
                    tables.push(store.add_embedding(rng, format!("emb{c}.table"), layout.rows, d));
                    dense_mlps.push(build_dense_mlp(store, rng, &format!("emb{c}"), m, d));
                }
            }
            BankMode::Shared => {
                let d = config.dims[0];
                let table = store.add_embedding(rng, "emb_shared.table", layout.rows, d);
                let shared_mlp = if config.share_dense_mlp {
                    Some(build_dense_mlp(store, rng, "emb_shared", m, d))
                } else {
                    None
                };
                for c in 0..n {
                    tables.push(table);
                    match &shared_mlp {
                        Some(mlp) => dense_mlps.push(mlp.clone()),
                        None => dense_mlps.push(build_dense_mlp(store, rng, &format!("emb{c}"), m, d)),
                    }
                }
            }
        }
        Ok(EmbeddingBank {
            schema: schema.clone(),
            config: config.clone(),
            layout,
            tables,
            dense_mlps,
        })
    }

    pub fn n_components(&self) -> usize {
        self.config.dims.len()
    }

    pub fn dim(&self, component: usize) -> usize {
        self.config.dims[component]
    }

    pub fn table(&self, component: usize) -> Result<ParamId, BankError> {
        self.tables
            .get(component)
            .copied()
            .ok_or(BankError::UnknownComponent(component))
    }

    pub fn dense_mlp(&self, component: usize) -> Result<&DenseMlp, BankError> {
        self.dense_mlps
            .get(component)
            .ok_or(BankError::UnknownComponent(component))
    }

    /// All sparse-field embeddings for a batch: `[B, n_sparse, d]`.
    pub fn lookup_sparse(
        &self,
        component: usize,
        tape: &mut Tape,
        bound: &Bound,
        batch: &ExampleBatch,
    ) -> Result<Var, BankError> {
        let table = self.table(component)?;
        let n = self.schema.n_sparse();
        let mut rows = Vec::with_capacity(batch.len * n);
        for b in 0..batch.len {
            for f in 0..n {
                rows.push(self.layout.sparse_row(f, batch.sparse[b * n + f]));
            }
        }
        let flat = tape.gather_rows(bound.var(table), &rows)?;
        let d = self.dim(component);
        Ok(tape.reshape(flat, vec![batch.len, n, d])?)
    }

    /// One sparse field's embedding for a batch: `[B, d]`.
    pub fn lookup_sparse_field(
        &self,
        component: usize,
        tape: &mut Tape,
        bound: &Bound,
        batch: &ExampleBatch,
        field: usize,
    ) -> Result<Var, BankError> {
        let table = self.table(component)?;
        let n = self.schema.n_sparse();
        let rows: Vec<usize> = (0..batch.len)
            .map(|b| self.layout.sparse_row(field, batch.sparse[b * n + field]))
            .collect();
        Ok(tape.gather_rows(bound.var(table), &rows)?)
    }

    /// One sequence field's embeddings for a batch: `[B, max_len, d]`.
    /// Padding positions carry the padding row; masking is the caller's job
    /// (lengths ride along in the batch).
    pub fn lookup_sequence_field(
        &self,
        component: usize,
        tape: &mut Tape,
        bound: &Bound,
        batch: &ExampleBatch,
        field: usize,
    ) -> Result<Var, BankError> {
        let table = self.table(component)?;
        let slots = self.schema.seq_slots();
        let off = self.schema.seq_offset(field);
        let max_len = self.schema.sequence[field].max_len;
        let mut rows = Vec::with_capacity(batch.len * max_len);
        for b in 0..batch.len {
            for t in 0..max_len {
                rows.push(self.layout.seq_row(field, batch.sequences[b * slots + off + t]));
            }
        }
        let flat = tape.gather_rows(bound.var(table), &rows)?;
        let d = self.dim(component);
        Ok(tape.reshape(flat, vec![batch.len, max_len, d])?)
    }

    /// All sequence fields stacked as `[B, k, N, d]`; requires every field to
    /// share one max_len.
    pub fn lookup_sequence(
        &self,
        component: usize,
        tape: &mut Tape,
        bound: &Bound,
        batch: &ExampleBatch,
    ) -> Result<Var, BankError> {
        let k = self.schema.n_sequence();
        if k == 0 {
            return Err(BankError::Config("schema has no sequence fields".to_string()));
        }
        let n0 = self.schema.sequence[0].max_len;
        if self.schema.sequence.iter().any(|f| f.max_len != n0) {
            return Err(BankError::Config(
                "stacked sequence lookup requires a uniform max_len".to_string(),
            ));
        }
        let d = self.dim(component);
        let mut parts = Vec::with_capacity(k);
        for j in 0..k {
            let e = self.lookup_sequence_field(component, tape, bound, batch, j)?;
            parts.push(tape.reshape(e, vec![batch.len, 1, n0, d])?);
        }
        Ok(tape.concat(&parts, 1)?)
    }

    /// Dense features through the component's MLP: `[B, d]`.
    /// One hidden layer of width `2d` with ReLU, then linear to `d`.
    pub fn encode_dense(
        &self,
        component: usize,
        tape: &mut Tape,
        bound: &Bound,
        batch: &ExampleBatch,
    ) -> Result<Var, BankError> {
        let mlp = self.dense_mlp(component)?.clone();
        let m = self.schema.n_dense();
        let x = tape.constant(crate::tensor::Tensor::new(
            vec![batch.len, m],
            batch.dense.clone(),
        )?)?;
        let h = tape.matmul(x, bound.var(mlp.w1))?;
        let h = tape.add_bias(h, bound.var(mlp.b1))?;
        let h = tape.relu(h)?;
        let e = tape.matmul(h, bound.var(mlp.w2))?;
        Ok(tape.add_bias(e, bound.var(mlp.b2))?)
    }

    /// Parameter values held by one component (for diagnostics and
    /// disjointness tests).
    pub fn component_param_ids(&self, component: usize) -> Vec<ParamId> {
        let mlp = &self.dense_mlps[component];
        vec![self.tables[component], mlp.w1, mlp.b1, mlp.w2, mlp.b2]
    }

    /// Fresh bank with every embedding dimension multiplied, re-initialized
    /// into `store` (normally a new store for a new run; parameter names
    /// would collide with an existing bank's).
    pub fn scale_dims<R: Rng>(
        &self,
        store: &mut ParamStore,
        rng: &mut R,
        multiplier: usize,
    ) -> Result<EmbeddingBank, BankError> {
        if multiplier == 0 {
            return Err(BankError::Config("multiplier must be >= 1".to_string()));
        }
        let config = BankConfig {
            mode: self.config.mode,
            dims: self.config.dims.iter().map(|&d| d * multiplier).collect(),
            share_dense_mlp: self.config.share_dense_mlp,
        };
        EmbeddingBank::build(store, rng, &self.schema, &config)
    }

    /// Total values across this bank's tables and dense MLPs (aliased
    /// parameters counted once).
    pub fn param_count(&self, store: &ParamStore) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut total = 0;
        for c in 0..self.n_components() {
            for id in self.component_param_ids(c) {
                if seen.insert(store.get(id).name.clone()) {
                    total += store.get(id).tensor.numel();
                }
            }
        }
        total
    }
}

fn build_dense_mlp<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    n_dense: usize,
    d: usize,
) -> DenseMlp {
    let hidden = 2 * d;
    DenseMlp {
        w1: store.add_weight(rng, format!("{prefix}.dense.w1"), n_dense, hidden),
        b1: store.add_zeros(format!("{prefix}.dense.b1"), vec![hidden]),
        w2: store.add_weight(rng, format!("{prefix}.dense.w2"), hidden, d),
        b2: store.add_zeros(format!("{prefix}.dense.b2"), vec![d]),
    }
}
