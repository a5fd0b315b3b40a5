//! Feature schemas, datasets, batching, and ingestion.
//!
//! Conventions shared by everything downstream:
//!
//! - id 0 of every sparse and sequence vocabulary is reserved for
//!   padding/unknown; real ids start at 1.
//! - sequences are stored padded to each field's `max_len`, keeping the most
//!   recent items when truncating; positions at or beyond the stored length
//!   hold id 0.
//! - datasets are immutable once built and cheap to subset by row index.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_path};
pub use synthetic::{gen_synthetic, MixWeights, SyntheticSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseField {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceField {
    pub name: String,
    pub cardinality: usize,
    pub max_len: usize,
}

/// Declares the feature layout of a dataset: sparse categorical fields, dense
/// continuous fields, padded id sequences, and which field carries the user
/// id used for grouped metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    #[serde(default)]
    pub sparse: Vec<SparseField>,
    #[serde(default)]
    pub dense: Vec<String>,
    #[serde(default)]
    pub sequence: Vec<SequenceField>,
    pub user_id: String,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut names = std::collections::HashSet::new();
        for f in &self.sparse {
            if f.cardinality < 2 {
                return Err(DataError::Schema(format!(
                    "sparse field `{}` needs cardinality >= 2 (id 0 is padding)",
                    f.name
                )));
            }
            if !names.insert(f.name.clone()) {
                return Err(DataError::Schema(format!("duplicate field name `{}`", f.name)));
            }
        }
        for f in &self.sequence {
            if f.cardinality < 2 {
                return Err(DataError::Schema(format!(
                    "sequence field `{}` needs cardinality >= 2 (id 0 is padding)",
                    f.name
                )));
            }
            if f.max_len == 0 {
                return Err(DataError::Schema(format!(
                    "sequence field `{}` needs max_len >= 1",
                    f.name
                )));
            }
            if !names.insert(f.name.clone()) {
                return Err(DataError::Schema(format!("duplicate field name `{}`", f.name)));
            }
        }
        for d in &self.dense {
            if !names.insert(d.clone()) {
                return Err(DataError::Schema(format!("duplicate field name `{d}`")));
            }
        }
        if self.user_id.is_empty() {
            return Err(DataError::Schema("user_id field name is empty".to_string()));
        }
        Ok(())
    }

    pub fn n_sparse(&self) -> usize {
        self.sparse.len()
    }

    pub fn n_dense(&self) -> usize {
        self.dense.len()
    }

    pub fn n_sequence(&self) -> usize {
        self.sequence.len()
    }

    /// Total padded slots one row's sequence block occupies.
    pub fn seq_slots(&self) -> usize {
        self.sequence.iter().map(|f| f.max_len).sum()
    }

    /// Slot offset of sequence field `j` within a row's sequence block.
    pub fn seq_offset(&self, j: usize) -> usize {
        self.sequence[..j].iter().map(|f| f.max_len).sum()
    }

    pub fn sparse_index(&self, name: &str) -> Option<usize> {
        self.sparse.iter().position(|f| f.name == name)
    }
}

/// Keeps the most recent `n` items, right-padding with 0; returns the padded
/// ids and the valid-prefix length.
pub fn pad_or_truncate(seq: &[u32], n: usize) -> (Vec<u32>, usize) {
    debug_assert!(n >= 1);
    let start = seq.len().saturating_sub(n);
    let kept = &seq[start..];
    let mut out = vec![0u32; n];
    out[..kept.len()].copy_from_slice(kept);
    (out, kept.len())
}

/// A fully materialized dataset in column-major-per-feature layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub labels: Vec<u8>,
    pub user_ids: Vec<u64>,
    /// `[n_rows * n_sparse]`
    pub sparse: Vec<u32>,
    /// `[n_rows * n_dense]`
    pub dense: Vec<f64>,
    /// `[n_rows * seq_slots]`, per-field blocks in schema order
    pub sequences: Vec<u32>,
    /// `[n_rows * n_sequence]`
    pub seq_lengths: Vec<u32>,
    /// Generating spec, when the dataset is synthetic.
    pub synthetic: Option<SyntheticSpec>,
    /// Out-of-vocabulary ids mapped to 0 during ingestion.
    pub oov_mapped: u64,
}

impl Dataset {
    pub fn empty(schema: FeatureSchema) -> Self {
        Dataset {
            schema,
            labels: Vec::new(),
            user_ids: Vec::new(),
            sparse: Vec::new(),
            dense: Vec::new(),
            sequences: Vec::new(),
            seq_lengths: Vec::new(),
            synthetic: None,
            oov_mapped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.len() as f64
    }

    /// New dataset with the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let ns = self.schema.n_sparse();
        let nd = self.schema.n_dense();
        let nq = self.schema.n_sequence();
        let slots = self.schema.seq_slots();
        let mut out = Dataset::empty(self.schema.clone());
        out.synthetic = self.synthetic.clone();
        for &r in rows {
            out.labels.push(self.labels[r]);
            out.user_ids.push(self.user_ids[r]);
            out.sparse.extend_from_slice(&self.sparse[r * ns..(r + 1) * ns]);
            out.dense.extend_from_slice(&self.dense[r * nd..(r + 1) * nd]);
            out.sequences
                .extend_from_slice(&self.sequences[r * slots..(r + 1) * slots]);
            out.seq_lengths
                .extend_from_slice(&self.seq_lengths[r * nq..(r + 1) * nq]);
        }
        out
    }

    /// Batch view of the given rows.
    pub fn batch(&self, rows: &[usize]) -> ExampleBatch {
        let sub = self.subset(rows);
        ExampleBatch {
            len: rows.len(),
            labels: sub.labels.iter().map(|&l| l as f64).collect(),
            user_ids: sub.user_ids,
            sparse: sub.sparse,
            dense: sub.dense,
            sequences: sub.sequences,
            seq_lengths: sub.seq_lengths,
        }
    }

    /// Checks vocabulary bounds and the padding invariant on every row.
    pub fn check_invariants(&self) -> Result<(), DataError> {
        let ns = self.schema.n_sparse();
        let slots = self.schema.seq_slots();
        let nq = self.schema.n_sequence();
        for r in 0..self.len() {
            if self.labels[r] > 1 {
                return Err(DataError::Parse {
                    row: r + 1,
                    msg: format!("label {} is not 0/1", self.labels[r]),
                });
            }
            for (i, f) in self.schema.sparse.iter().enumerate() {
                let id = self.sparse[r * ns + i];
                if id as usize >= f.cardinality {
                    return Err(DataError::Parse {
                        row: r + 1,
                        msg: format!("sparse id {id} out of range for `{}`", f.name),
                    });
                }
            }
            for (j, f) in self.schema.sequence.iter().enumerate() {
                let len = self.seq_lengths[r * nq + j] as usize;
                if len > f.max_len {
                    return Err(DataError::Parse {
                        row: r + 1,
                        msg: format!("sequence length {len} exceeds max_len for `{}`", f.name),
                    });
                }
                let off = r * slots + self.schema.seq_offset(j);
                for t in 0..f.max_len {
                    let id = self.sequences[off + t];
                    if id as usize >= f.cardinality {
                        return Err(DataError::Parse {
                            row: r + 1,
                            msg: format!("sequence id {id} out of range for `{}`", f.name),
                        });
                    }
                    if t >= len && id != 0 {
                        return Err(DataError::Parse {
                            row: r + 1,
                            msg: format!("padding position {t} of `{}` holds id {id}", f.name),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One mini-batch in the row-major layouts the embedding bank expects.
#[derive(Debug, Clone)]
pub struct ExampleBatch {
    pub len: usize,
    /// Labels as 0.0/1.0, ready for loss terms.
    pub labels: Vec<f64>,
    pub user_ids: Vec<u64>,
    /// `[len * n_sparse]`
    pub sparse: Vec<u32>,
    /// `[len * n_dense]`
    pub dense: Vec<f64>,
    /// `[len * seq_slots]`
    pub sequences: Vec<u32>,
    /// `[len * n_sequence]`
    pub seq_lengths: Vec<u32>,
}

/// Deterministic shuffled partition into train/val/test. Val and test sizes
/// round down; the remainder goes to train.
pub fn split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(DataError::InvalidArgument(
            "split fractions must be non-negative".to_string(),
        ));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fe
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, rng::derive_seed(seed, &[0x53504c49]));
    let n_val = (fv * n as f64).floor() as usize;
    let n_test = (fe * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    let train = dataset.subset(&order[..n_train]);
    let val = dataset.subset(&order[n_train..n_train + n_val]);
    let test = dataset.subset(&order[n_train + n_val..]);
    Ok((train, val, test))
}

fn shuffle(order: &mut [usize], seed: u64) {
    use rand::Rng;
    let mut r = rng::stream(seed, &[]);
    for i in (1..order.len()).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Iterates a dataset once per call site: every row exactly once, the last
/// batch possibly short. With a seed the order is a deterministic shuffle;
/// without, it is the stored order (one-epoch streaming).
pub fn batch_iter(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> impl Iterator<Item = ExampleBatch> + '_ {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        shuffle(&mut order, seed);
    }
    BatchIter {
        dataset,
        order,
        cursor: 0,
        batch_size,
    }
}

struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = ExampleBatch;

    fn next(&mut self) -> Option<ExampleBatch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.dataset.batch(&self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}
