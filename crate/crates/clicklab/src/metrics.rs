//! Evaluation metrics: AUC, grouped AUC, LogLoss, Normalized Entropy, and an
//! effective-rank diagnostic for embedding tables.
//!
//! AUC uses the rank-statistic form with midrank tie handling, equivalent to
//! the pairwise count with ties scored 0.5. gAUC averages per-user AUC over
//! users that have both classes (uniform by default, impression-weighted
//! behind a flag). LogLoss and NE use natural log; NE divides mean BCE by the
//! entropy of the empirical base rate, so the constant base-rate predictor
//! scores exactly 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// Probabilities are clamped into `[EPS_PROB, 1 - EPS_PROB]` before any log.
pub const EPS_PROB: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaucWeighting {
    Uniform,
    Impressions,
}

/// Flat metric report for one scored set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub gauc: f64,
    pub logloss: f64,
    pub ne: f64,
    pub examples: usize,
    pub users_scored: usize,
    pub users_skipped: usize,
}

impl MetricsReport {
    /// Computes the full suite over one scored set.
    pub fn compute(
        scores: &[f64],
        labels: &[f64],
        user_ids: &[u64],
    ) -> Result<MetricsReport, MetricError> {
        let (gauc, scored, skipped) = g_auc(scores, labels, user_ids, GaucWeighting::Uniform)?;
        Ok(MetricsReport {
            auc: auc(scores, labels)?,
            gauc,
            logloss: logloss(scores, labels),
            ne: normalized_entropy(scores, labels)?,
            examples: scores.len(),
            users_scored: scored,
            users_skipped: skipped,
        })
    }
}

fn check_binary(labels: &[f64]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l > 0.5).count();
    (pos, labels.len() - pos)
}

/// Rank-based AUC with midrank tie handling, O(n log n).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (pos, neg) = check_binary(labels);
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined(
            "AUC needs at least one positive and one negative".to_string(),
        ));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Midranks over tied score runs, then the Mann-Whitney statistic.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] > 0.5 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Per-user AUC averaged over users with both classes. Returns the metric and
/// the scored/skipped user counts.
pub fn g_auc(
    scores: &[f64],
    labels: &[f64],
    user_ids: &[u64],
    weighting: GaucWeighting,
) -> Result<(f64, usize, usize), MetricError> {
    if scores.len() != labels.len() || scores.len() != user_ids.len() {
        return Err(MetricError::InvalidArgument(
            "scores, labels and user ids must align".to_string(),
        ));
    }
    let mut by_user: std::collections::BTreeMap<u64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &u) in user_ids.iter().enumerate() {
        by_user.entry(u).or_default().push(i);
    }
    let mut total = 0.0;
    let mut weight_total = 0.0;
    let mut scored = 0;
    let mut skipped = 0;
    for rows in by_user.values() {
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let l: Vec<f64> = rows.iter().map(|&i| labels[i]).collect();
        let (pos, neg) = check_binary(&l);
        if pos == 0 || neg == 0 {
            skipped += 1;
            continue;
        }
        let user_auc = auc(&s, &l)?;
        let w = match weighting {
            GaucWeighting::Uniform => 1.0,
            GaucWeighting::Impressions => rows.len() as f64,
        };
        total += w * user_auc;
        weight_total += w;
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricError::Undefined(
            "gAUC needs at least one user with both classes".to_string(),
        ));
    }
    Ok((total / weight_total, scored, skipped))
}

/// Mean binary cross-entropy in nats, with scores clamped away from {0, 1}.
pub fn logloss(scores: &[f64], labels: &[f64]) -> f64 {
    debug_assert_eq!(scores.len(), labels.len());
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(EPS_PROB, 1.0 - EPS_PROB);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Mean BCE divided by the entropy of the empirical base rate.
pub fn normalized_entropy(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    let (pos, neg) = check_binary(labels);
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined(
            "NE needs labels of both classes".to_string(),
        ));
    }
    let p = pos as f64 / labels.len() as f64;
    let base_entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    Ok(logloss(scores, labels) / base_entropy)
}

/// Relative NE change from `a` to `b`: negative means `b` improved.
pub fn ne_delta(ne_a: f64, ne_b: f64) -> f64 {
    (ne_b - ne_a) / ne_a
}

/// Effective rank of an embedding table: exp of the Shannon entropy of the
/// normalized singular values. 1 for (near-)rank-1 tables, up to `d` when all
/// directions carry equal energy. The zero matrix maps to 1 by convention.
pub fn effective_rank(table: &Tensor) -> Result<f64, MetricError> {
    let shape = table.shape();
    if shape.len() != 2 {
        return Err(MetricError::InvalidArgument(format!(
            "effective_rank expects a matrix, got {shape:?}"
        )));
    }
    let (v, d) = (shape[0], shape[1]);
    if d == 0 || v < d {
        return Err(MetricError::InvalidArgument(format!(
            "effective_rank expects rows >= cols >= 1, got {v}x{d}"
        )));
    }
    // Gram matrix, then its eigenvalues via cyclic Jacobi; singular values of
    // the table are the square roots.
    let a = table.data();
    let mut gram = vec![0.0; d * d];
    for r in 0..v {
        let row = &a[r * d..(r + 1) * d];
        for i in 0..d {
            for j in i..d {
                gram[i * d + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i * d + j] = gram[j * d + i];
        }
    }
    let eigvals = jacobi_eigenvalues(&mut gram, d);
    let sigmas: Vec<f64> = eigvals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let total: f64 = sigmas.iter().sum();
    if total <= 0.0 {
        return Ok(1.0);
    }
    let mut entropy = 0.0;
    for &s in &sigmas {
        let p = s / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
fn jacobi_eigenvalues(m: &mut [f64], d: usize) -> Vec<f64> {
    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += m[i * d + j] * m[i * d + j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..d).map(|i| m[i * d + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_hand_example() {
        // pairs: (0.35 vs 0.1) win, (0.35 vs 0.4) loss, (0.8 vs 0.1) win,
        // (0.8 vs 0.4) win -> 3/4
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn auc_perfect_and_all_ties() {
        let labels = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn gauc_single_user_equals_auc() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0.0, 0.0, 1.0, 1.0];
        let users = [3, 3, 3, 3];
        let (g, scored, skipped) =
            g_auc(&scores, &labels, &users, GaucWeighting::Uniform).unwrap();
        assert_eq!(g, auc(&scores, &labels).unwrap());
        assert_eq!((scored, skipped), (1, 0));
    }

    #[test]
    fn gauc_two_users_and_skips() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.1, 0.4, 0.35, 0.8, 0.9];
        let labels = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let users = [1, 1, 1, 1, 2, 2, 2, 2, 3];
        let (g, scored, skipped) =
            g_auc(&scores, &labels, &users, GaucWeighting::Uniform).unwrap();
        assert_eq!(g, 0.75);
        assert_eq!((scored, skipped), (2, 1));
    }

    #[test]
    fn logloss_constants() {
        let half = [0.5, 0.5, 0.5, 0.5];
        let labels = [1.0, 0.0, 1.0, 0.0];
        assert!((logloss(&half, &labels) - std::f64::consts::LN_2).abs() < 1e-15);

        // perfect clamped predictions land at the clamp scale
        let perfect = [1.0, 0.0];
        let l = logloss(&perfect, &[1.0, 0.0]);
        assert!(l > 0.0 && l < 2e-7, "logloss {l}");
    }

    #[test]
    fn ne_of_base_rate_predictor_is_one() {
        let labels: Vec<f64> = (0..100).map(|i| if i < 37 { 1.0 } else { 0.0 }).collect();
        let p = 0.37;
        let scores = vec![p; 100];
        let ne = normalized_entropy(&scores, &labels).unwrap();
        assert!((ne - 1.0).abs() < 1e-9, "ne {ne}");
    }

    #[test]
    fn ne_derived_example() {
        // half the labels positive, all scores 0.8
        let labels: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let scores = vec![0.8; 100];
        let ll = logloss(&scores, &labels);
        assert!((ll - 0.916290731874155).abs() < 1e-12, "logloss {ll}");
        let ne = normalized_entropy(&scores, &labels).unwrap();
        assert!((ne - 1.321928094887362).abs() < 1e-9, "ne {ne}");
    }

    #[test]
    fn effective_rank_extremes() {
        // d equal singular values -> effective rank d
        let mut data = vec![0.0; 8 * 4];
        for i in 0..4 {
            data[i * 4 + i] = 2.5;
        }
        let t = Tensor::new(vec![8, 4], data).unwrap();
        let r = effective_rank(&t).unwrap();
        assert!((r - 4.0).abs() < 1e-9, "rank {r}");

        // rank-1 table
        let mut data = vec![0.0; 6 * 3];
        for row in 0..6 {
            for col in 0..3 {
                data[row * 3 + col] = (row + 1) as f64 * [1.0, 2.0, -0.5][col];
            }
        }
        let t = Tensor::new(vec![6, 3], data).unwrap();
        let r = effective_rank(&t).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "rank {r}");

        // zero matrix -> 1 by convention
        let t = Tensor::zeros(vec![5, 3]);
        assert_eq!(effective_rank(&t).unwrap(), 1.0);
    }
}
