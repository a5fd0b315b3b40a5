//! Confidence-based fusion and the collaborative objective.
//!
//! Each component model's Bernoulli prediction gets a confidence score: the
//! negation of its binary entropy, so predictions far from 0.5 score high.
//! Confidences are detached from the graph (gradient stop) before a per-row
//! softmax turns them into fusion weights. The fused embedding is the
//! weighted concatenation (or sum) of the per-component projected embeddings,
//! read out by one linear-sigmoid layer.
//!
//! The objective combines the fused BCE, each component head's BCE, and a
//! symmetric KL term that pulls the component predictions toward each other
//! without designating a teacher. The KL term is averaged over the batch so
//! its weight `alpha` means the same thing at every batch size.

use serde::{Deserialize, Serialize};

use crate::metrics::EPS_PROB;
use crate::params::Bound;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    WeightedConcat,
    WeightedSum,
    PlainConcat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// When off, weights are uniform 1/N instead of softmaxed confidences.
    #[serde(default = "default_true")]
    pub use_confidence: bool,
    /// When off, gradients flow through the confidence scores (ablation).
    #[serde(default = "default_true")]
    pub use_gradient_stop: bool,
    /// Weight of the symmetric-KL term in the objective.
    pub alpha: f64,
    /// Number of component models being fused; filled in from the component
    /// list when building a model.
    #[serde(default)]
    pub n_components: usize,
}

fn default_true() -> bool {
    true
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::WeightedConcat,
            use_confidence: true,
            use_gradient_stop: true,
            alpha: 0.5,
            n_components: 2,
        }
    }
}

/// Per-batch fusion tensors, kept as tape vars so callers can read values or
/// differentiate through them.
pub struct FusionResult {
    /// `[B, N]` negation-entropy confidences (detached when gradient stop is on).
    pub confidences: Var,
    /// `[B, N]` fusion weights, rows summing to 1.
    pub weights: Var,
    /// Fused embedding, `[B, N*d_proj]` for concat modes or `[B, d_proj]` for sum.
    pub fused: Var,
    /// `[B]` fused prediction in the clamped open interval (0, 1).
    pub prediction: Var,
}

/// The four-term objective. `total = fusion + sum(component) + alpha * kl`.
pub struct LossBreakdown {
    pub component: Vec<Var>,
    pub fusion: Var,
    pub kl: Var,
    pub total: Var,
}

/// Plain-number snapshot of a [`LossBreakdown`] for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub component: Vec<f64>,
    pub fusion: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            component: self.component.iter().map(|&v| tape.value(v).item()).collect(),
            fusion: tape.value(self.fusion).item(),
            kl: tape.value(self.kl).item(),
            total: tape.value(self.total).item(),
        }
    }
}

/// Binary entropy `H(p) = -p ln p - (1-p) ln(1-p)` of already-clamped
/// probabilities. Symmetric around 0.5 where it peaks at ln 2.
pub fn binary_entropy(tape: &mut Tape, p: Var) -> Result<Var, TensorError> {
    let one = tape.constant(Tensor::scalar(1.0))?;
    let q = tape.sub(one, p)?;
    let lp = tape.log(p)?;
    let lq = tape.log(q)?;
    let plp = tape.mul(p, lp)?;
    let qlq = tape.mul(q, lq)?;
    let s = tape.add(plp, qlq)?;
    tape.neg(s)
}

/// Negation-entropy confidence `C = -H(p)`, detached from the graph when
/// `gradient_stop` is on so the confidence path moves no parameters.
pub fn confidence(tape: &mut Tape, p: Var, gradient_stop: bool) -> Result<Var, TensorError> {
    let h = binary_entropy(tape, p)?;
    let c = tape.neg(h)?;
    if gradient_stop {
        tape.stop_gradient(c)
    } else {
        Ok(c)
    }
}

/// Stacks per-component `[B]` confidences into `[B, N]` and softmaxes each
/// row into fusion weights.
pub fn fusion_weights(tape: &mut Tape, confidences: &[Var]) -> Result<Var, TensorError> {
    let stacked = stack_columns(tape, confidences)?;
    tape.softmax(stacked)
}

/// Uniform `1/N` weights with the same `[B, N]` shape, for the
/// no-confidence and plain-concat configurations.
pub fn uniform_weights(tape: &mut Tape, batch: usize, n: usize) -> Result<Var, TensorError> {
    tape.constant(Tensor::new(vec![batch, n], vec![1.0 / n as f64; batch * n])?)
}

/// `[B]` columns side by side into `[B, len]`.
pub fn stack_columns(tape: &mut Tape, cols: &[Var]) -> Result<Var, TensorError> {
    let mut parts = Vec::with_capacity(cols.len());
    for &c in cols {
        let b = tape.value(c).numel();
        parts.push(tape.reshape(c, vec![b, 1])?);
    }
    tape.concat(&parts, 1)
}

/// Combines projected component embeddings under the configured mode.
/// Weighted concat scales each block by its weight before concatenation;
/// weighted sum collapses to one block; plain concat ignores the weights.
pub fn fuse(
    tape: &mut Tape,
    projected: &[Var],
    weights: Var,
    mode: FusionMode,
) -> Result<Var, TensorError> {
    match mode {
        FusionMode::PlainConcat => tape.concat(projected, 1),
        FusionMode::WeightedConcat => {
            let mut parts = Vec::with_capacity(projected.len());
            for (m, &e) in projected.iter().enumerate() {
                let w = tape.slice(weights, 1, m, 1)?;
                parts.push(tape.mul(e, w)?);
            }
            tape.concat(&parts, 1)
        }
        FusionMode::WeightedSum => {
            let mut acc: Option<Var> = None;
            for (m, &e) in projected.iter().enumerate() {
                let w = tape.slice(weights, 1, m, 1)?;
                let weighted = tape.mul(e, w)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, weighted)?,
                    None => weighted,
                });
            }
            acc.ok_or(TensorError::InvalidArgument {
                op: "fuse",
                msg: "no embeddings to fuse".to_string(),
            })
        }
    }
}

/// Linear readout head over the fused embedding: `sigmoid(e W + b)` clamped,
/// returned as `[B]`.
pub fn readout(
    tape: &mut Tape,
    bound: &Bound,
    fused: Var,
    weight: crate::params::ParamId,
    bias: crate::params::ParamId,
) -> Result<Var, TensorError> {
    let z = tape.matmul(fused, bound.var(weight))?;
    let z = tape.add_bias(z, bound.var(bias))?;
    let p = tape.sigmoid(z)?;
    let p = tape.clamp(p, EPS_PROB, 1.0 - EPS_PROB)?;
    let b = tape.shape(p)[0];
    tape.reshape(p, vec![b])
}

/// Mean binary cross-entropy of clamped predictions against 0/1 labels.
pub fn bce(tape: &mut Tape, prediction: Var, labels: &[f64]) -> Result<Var, TensorError> {
    let y1 = tape.constant(Tensor::from_vec(labels.to_vec()))?;
    let y0 = tape.constant(Tensor::from_vec(labels.iter().map(|y| 1.0 - y).collect()))?;
    let one = tape.constant(Tensor::scalar(1.0))?;
    let lp = tape.log(prediction)?;
    let q = tape.sub(one, prediction)?;
    let lq = tape.log(q)?;
    let t1 = tape.mul(y1, lp)?;
    let t0 = tape.mul(y0, lq)?;
    let s = tape.add(t1, t0)?;
    let m = tape.mean(s)?;
    tape.neg(m)
}

/// Symmetric Bernoulli KL between two prediction vectors, averaged over the
/// batch: `mean_i( KL_i(a||b)/2 + KL_i(b||a)/2 )`. Zero iff `a == b`
/// elementwise, and invariant to swapping the arguments.
pub fn symmetric_kl(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TensorError> {
    let ab = directed_kl(tape, a, b)?;
    let ba = directed_kl(tape, b, a)?;
    let s = tape.add(ab, ba)?;
    let half = tape.scale(s, 0.5)?;
    tape.mean(half)
}

/// Per-sample `KL(a||b)` for Bernoulli parameters, `[B]`.
fn directed_kl(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TensorError> {
    let one = tape.constant(Tensor::scalar(1.0))?;
    let la = tape.log(a)?;
    let lb = tape.log(b)?;
    let qa = tape.sub(one, a)?;
    let qb = tape.sub(one, b)?;
    let lqa = tape.log(qa)?;
    let lqb = tape.log(qb)?;
    let dl = tape.sub(la, lb)?;
    let dlq = tape.sub(lqa, lqb)?;
    let t1 = tape.mul(a, dl)?;
    let t2 = tape.mul(qa, dlq)?;
    tape.add(t1, t2)
}

/// Pairwise-mean symmetric KL across all unordered component pairs; the
/// two-component case reduces to plain symmetric KL. Zero components of
/// disagreement (N < 2) yield a constant zero.
pub fn collaborative_kl(tape: &mut Tape, predictions: &[Var]) -> Result<Var, TensorError> {
    let n = predictions.len();
    if n < 2 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let mut acc: Option<Var> = None;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let kl = symmetric_kl(tape, predictions[i], predictions[j])?;
            acc = Some(match acc {
                Some(a) => tape.add(a, kl)?,
                None => kl,
            });
            pairs += 1.0;
        }
    }
    tape.scale(acc.expect("n >= 2 yields at least one pair"), 1.0 / pairs)
}

/// Assembles `L_total = L_fusion + sum_m L_m + alpha * L_kl`.
pub fn total_objective(
    tape: &mut Tape,
    component: Vec<Var>,
    fusion: Var,
    kl: Var,
    alpha: f64,
) -> Result<LossBreakdown, TensorError> {
    let mut total = fusion;
    for &l in &component {
        total = tape.add(total, l)?;
    }
    let weighted_kl = tape.scale(kl, alpha)?;
    total = tape.add(total, weighted_kl)?;
    Ok(LossBreakdown {
        component,
        fusion,
        kl,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(tape: &mut Tape, values: &[f64]) -> Var {
        tape.leaf(Tensor::from_vec(values.to_vec())).unwrap()
    }

    #[test]
    fn entropy_peak_symmetry_and_near_certainty() {
        let mut t = Tape::new();
        let p = prob(&mut t, &[0.5]);
        let h = binary_entropy(&mut t, p).unwrap();
        assert!((t.value(h).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let p = prob(&mut t, &[0.3, 0.7]);
        let h = binary_entropy(&mut t, p).unwrap();
        let v = t.value(h).data();
        assert!((v[0] - v[1]).abs() < 1e-12);

        let p = prob(&mut t, &[1.0 - 1e-7]);
        let h = binary_entropy(&mut t, p).unwrap();
        let v = t.value(h).item();
        // direct evaluation of -p ln p - (1-p) ln(1-p) at p = 1 - 1e-7
        assert!((v - 1.7118095592474466e-6).abs() < 1e-12, "H {v}");
    }

    #[test]
    fn confidence_values_and_monotonicity() {
        let mut t = Tape::new();
        let p = prob(&mut t, &[0.5]);
        let c = confidence(&mut t, p, true).unwrap();
        assert!((t.value(c).item() + std::f64::consts::LN_2).abs() < 1e-12);

        let p = prob(&mut t, &[0.9, 0.6]);
        let c = confidence(&mut t, p, true).unwrap();
        let v = t.value(c).data();
        assert!(v[0] > v[1], "C(0.9)={} should exceed C(0.6)={}", v[0], v[1]);
    }

    #[test]
    fn confidence_gradient_stop_blocks_everything() {
        let mut t = Tape::new();
        let p = prob(&mut t, &[0.8, 0.3]);
        let c = confidence(&mut t, p, true).unwrap();
        let loss = t.sum(c).unwrap();
        t.backward(loss).unwrap();
        assert!(t.grad(p).is_none());

        // and with the stop off, gradient flows
        let mut t = Tape::new();
        let p = prob(&mut t, &[0.8, 0.3]);
        let c = confidence(&mut t, p, false).unwrap();
        let loss = t.sum(c).unwrap();
        t.backward(loss).unwrap();
        assert!(t.grad(p).unwrap().iter().any(|g| g.abs() > 1e-8));
    }

    #[test]
    fn weights_closed_form_two_components() {
        let mut t = Tape::new();
        let ca = prob(&mut t, &[-0.5]);
        let cb = prob(&mut t, &[-0.7]);
        let w = fusion_weights(&mut t, &[ca, cb]).unwrap();
        let v = t.value(w).data();
        assert!((v[0] - 0.549833997312478).abs() < 1e-12);
        assert!((v[1] - 0.450166002687522).abs() < 1e-12);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_confidences_give_uniform_weights() {
        let mut t = Tape::new();
        let cols: Vec<Var> = (0..3).map(|_| prob(&mut t, &[-0.4, -0.1])).collect();
        let w = fusion_weights(&mut t, &cols).unwrap();
        for v in t.value(w).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_modes_behave() {
        let mut t = Tape::new();
        let e1 = t.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let e2 = t.leaf(Tensor::matrix(1, 2, vec![10.0, 20.0]).unwrap()).unwrap();

        // degenerate weights pick out one input under weighted_sum
        let w = t
            .constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap())
            .unwrap();
        let fused = fuse(&mut t, &[e1, e2], w, FusionMode::WeightedSum).unwrap();
        assert_eq!(t.value(fused).data(), &[1.0, 2.0]);

        // equal weights halve each block under weighted_concat
        let w = t
            .constant(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap())
            .unwrap();
        let fused = fuse(&mut t, &[e1, e2], w, FusionMode::WeightedConcat).unwrap();
        assert_eq!(t.value(fused).data(), &[0.5, 1.0, 5.0, 10.0]);

        // plain concat ignores the weights entirely
        let w = t
            .constant(Tensor::matrix(1, 2, vec![0.9, 0.1]).unwrap())
            .unwrap();
        let fused = fuse(&mut t, &[e1, e2], w, FusionMode::PlainConcat).unwrap();
        assert_eq!(t.value(fused).data(), &[1.0, 2.0, 10.0, 20.0]);
    }

    #[test]
    fn bce_values() {
        let mut t = Tape::new();
        let p = prob(&mut t, &[0.5, 0.5]);
        let l = bce(&mut t, p, &[1.0, 0.0]).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let p = prob(&mut t, &[0.8]);
        let l = bce(&mut t, p, &[0.0]).unwrap();
        assert!((t.value(l).item() - 1.6094379124341003).abs() < 1e-12);

        // predictions equal to clamped labels: loss at the clamp scale
        let p = prob(&mut t, &[1.0 - 1e-7, 1e-7]);
        let l = bce(&mut t, p, &[1.0, 0.0]).unwrap();
        let v = t.value(l).item();
        assert!(v > 0.0 && v < 2e-7, "bce {v}");
    }

    #[test]
    fn symmetric_kl_identity_swap_and_closed_form() {
        let mut t = Tape::new();
        let a = prob(&mut t, &[0.3, 0.8]);
        let b = prob(&mut t, &[0.3, 0.8]);
        let kl = symmetric_kl(&mut t, a, b).unwrap();
        assert!(t.value(kl).item().abs() < 1e-12);

        let a = prob(&mut t, &[0.8]);
        let b = prob(&mut t, &[0.6]);
        let ab = symmetric_kl(&mut t, a, b).unwrap();
        let ba = symmetric_kl(&mut t, b, a).unwrap();
        assert!((t.value(ab).item() - t.value(ba).item()).abs() < 1e-12);

        // hand evaluation of (KL(0.8||0.6) + KL(0.6||0.8)) / 2
        let expect = 0.5 * (0.8 * (0.8f64 / 0.6).ln() + 0.2 * (0.2f64 / 0.4).ln())
            + 0.5 * (0.6 * (0.6f64 / 0.8).ln() + 0.4 * (0.4f64 / 0.2).ln());
        assert!((t.value(ab).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn objective_additivity_and_alpha_zero() {
        let mut t = Tape::new();
        let l1 = t.constant(Tensor::scalar(0.2)).unwrap();
        let l2 = t.constant(Tensor::scalar(0.3)).unwrap();
        let lf = t.constant(Tensor::scalar(1.0)).unwrap();
        let kl = t.constant(Tensor::scalar(0.4)).unwrap();
        let breakdown = total_objective(&mut t, vec![l1, l2], lf, kl, 0.5).unwrap();
        assert!((t.value(breakdown.total).item() - 1.7).abs() < 1e-12);

        let breakdown = total_objective(&mut t, vec![l1, l2], lf, kl, 0.0).unwrap();
        assert!((t.value(breakdown.total).item() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn collaborative_kl_reduces_and_generalizes() {
        let mut t = Tape::new();
        let a = prob(&mut t, &[0.7]);
        let b = prob(&mut t, &[0.4]);
        let pairwise = symmetric_kl(&mut t, a, b).unwrap();
        let collab = collaborative_kl(&mut t, &[a, b]).unwrap();
        assert!((t.value(pairwise).item() - t.value(collab).item()).abs() < 1e-15);

        // identical predictions: zero for any component count
        let c = prob(&mut t, &[0.7]);
        let collab = collaborative_kl(&mut t, &[a, c, a]).unwrap();
        assert!(t.value(collab).item().abs() < 1e-12);
    }
}
