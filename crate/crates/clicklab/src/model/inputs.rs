//! Per-component input bundles and the flatten adapter.

use crate::data::{ExampleBatch, FeatureSchema};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Constant masks derived from one batch's sequence lengths for one field.
/// Shared across components: they depend on the batch, not on embeddings.
pub struct SeqMasks {
    /// Per position `[B, 1]`, 1.0 where the position is valid.
    pub pos: Vec<Var>,
    /// `[B, N]` validity matrix.
    pub matrix: Var,
    /// `[B, 1]` reciprocal length; 0 for empty sequences so masked means of
    /// empty sequences are the zero vector.
    pub inv_len: Var,
    /// `[B, 1]` indicator of empty sequences, used to keep masked-softmax
    /// denominators away from zero while leaving valid rows untouched.
    pub empty: Var,
}

/// Builds the per-field masks for a batch.
pub fn build_seq_masks(
    tape: &mut Tape,
    schema: &FeatureSchema,
    batch: &ExampleBatch,
) -> Result<Vec<SeqMasks>, TensorError> {
    let k = schema.n_sequence();
    let b = batch.len;
    let mut out = Vec::with_capacity(k);
    for (j, field) in schema.sequence.iter().enumerate() {
        let n = field.max_len;
        let lengths: Vec<usize> = (0..b)
            .map(|r| batch.seq_lengths[r * k + j] as usize)
            .collect();
        let mut matrix = vec![0.0; b * n];
        for (r, &len) in lengths.iter().enumerate() {
            for t in 0..len.min(n) {
                matrix[r * n + t] = 1.0;
            }
        }
        let mut pos = Vec::with_capacity(n);
        for t in 0..n {
            let col: Vec<f64> = (0..b).map(|r| matrix[r * n + t]).collect();
            pos.push(tape.constant(Tensor::new(vec![b, 1], col)?)?);
        }
        let inv_len: Vec<f64> = lengths
            .iter()
            .map(|&l| if l == 0 { 0.0 } else { 1.0 / l as f64 })
            .collect();
        let empty: Vec<f64> = lengths
            .iter()
            .map(|&l| if l == 0 { 1.0 } else { 0.0 })
            .collect();
        out.push(SeqMasks {
            pos,
            matrix: tape.constant(Tensor::new(vec![b, n], matrix)?)?,
            inv_len: tape.constant(Tensor::new(vec![b, 1], inv_len)?)?,
            empty: tape.constant(Tensor::new(vec![b, 1], empty)?)?,
        });
    }
    Ok(out)
}

/// Everything one component model consumes for a batch, already looked up in
/// that component's embedding space.
pub struct ComponentInputs<'a> {
    /// `[B, n_sparse, d]`
    pub sparse: Var,
    /// Per sequence field, `[B, N_j, d]`
    pub seqs: Vec<Var>,
    /// `[B, d]` encoded dense features
    pub dense: Var,
    /// `[B, d]` target-item embedding (attention query)
    pub target: Var,
    pub masks: &'a [SeqMasks],
    pub batch_size: usize,
    pub dim: usize,
}

/// Masked mean over the valid prefix of one sequence: `[B, d]`. Empty
/// sequences pool to the zero vector.
pub fn masked_mean_pool(
    tape: &mut Tape,
    seq: Var,
    masks: &SeqMasks,
    batch_size: usize,
    dim: usize,
) -> Result<Var, TensorError> {
    let n = tape.shape(seq)[1];
    let mut acc: Option<Var> = None;
    for t in 0..n {
        let h = tape.slice(seq, 1, t, 1)?;
        let h = tape.reshape(h, vec![batch_size, dim])?;
        let masked = tape.mul(h, masks.pos[t])?;
        acc = Some(match acc {
            Some(a) => tape.add(a, masked)?,
            None => masked,
        });
    }
    tape.mul(acc.expect("max_len >= 1"), masks.inv_len)
}

/// Flattens a component's inputs into `[B, (n_sparse + k + 1) * d]`:
/// sparse embeddings, masked-mean pooled sequences, then the dense encoding.
pub fn flatten_inputs(tape: &mut Tape, inputs: &ComponentInputs) -> Result<Var, TensorError> {
    let b = inputs.batch_size;
    let d = inputs.dim;
    let n = tape.shape(inputs.sparse)[1];
    let mut parts = Vec::with_capacity(2 + inputs.seqs.len());
    parts.push(tape.reshape(inputs.sparse, vec![b, n * d])?);
    for (j, &seq) in inputs.seqs.iter().enumerate() {
        parts.push(masked_mean_pool(tape, seq, &inputs.masks[j], b, d)?);
    }
    parts.push(inputs.dense);
    tape.concat(&parts, 1)
}
