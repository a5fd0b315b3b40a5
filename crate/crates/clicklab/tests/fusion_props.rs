//! Property tests for the fusion math and data plumbing invariants.

mod common;

use clicklab::data::{batch_iter, gen_synthetic, pad_or_truncate, MixWeights, SyntheticSpec};
use clicklab::fusion::{
    binary_entropy, collaborative_kl, confidence, fuse, fusion_weights, symmetric_kl,
    total_objective, FusionMode,
};
use clicklab::tensor::{Tape, Tensor, Var};
use proptest::prelude::*;

use common::tiny_schema;

fn leaf(tape: &mut Tape, values: &[f64]) -> Var {
    tape.leaf(Tensor::from_vec(values.to_vec())).unwrap()
}

/// Independent closed-form Bernoulli KL, written with plain arithmetic.
fn kl_oracle(a: f64, b: f64) -> f64 {
    a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weights_positive_sum_one_and_monotone(
        p1 in 0.01f64..0.99,
        p2 in 0.01f64..0.99,
        p3 in 0.01f64..0.99,
    ) {
        let mut t = Tape::new();
        let preds = [p1, p2, p3];
        let mut confs = Vec::new();
        for &p in &preds {
            let v = leaf(&mut t, &[p]);
            confs.push(confidence(&mut t, v, true).unwrap());
        }
        let w = fusion_weights(&mut t, &confs).unwrap();
        let wv = t.value(w).data().to_vec();
        let sum: f64 = wv.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for &x in &wv {
            prop_assert!(x > 0.0);
        }
        // the prediction farthest from 0.5 gets the strictly larger weight
        for i in 0..3 {
            for j in 0..3 {
                let (di, dj) = ((preds[i] - 0.5).abs(), (preds[j] - 0.5).abs());
                if di - dj > 1e-9 {
                    prop_assert!(
                        wv[i] > wv[j],
                        "|{} - 0.5| > |{} - 0.5| but w {} <= {}",
                        preds[i], preds[j], wv[i], wv[j]
                    );
                }
            }
        }
    }

    #[test]
    fn entropy_symmetry_and_range(p in 1e-6f64..=0.999_999) {
        let mut t = Tape::new();
        let v = leaf(&mut t, &[p, 1.0 - p]);
        let h = binary_entropy(&mut t, v).unwrap();
        let hv = t.value(h).data();
        prop_assert!((hv[0] - hv[1]).abs() < 1e-12);
        prop_assert!(hv[0] >= 0.0 && hv[0] <= std::f64::consts::LN_2 + 1e-15);
    }

    #[test]
    fn symmetric_kl_properties(
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let mut t = Tape::new();
        let va = leaf(&mut t, &[a]);
        let vb = leaf(&mut t, &[b]);
        let ab = symmetric_kl(&mut t, va, vb).unwrap();
        let ba = symmetric_kl(&mut t, vb, va).unwrap();
        let vab = t.value(ab).item();
        let vba = t.value(ba).item();
        prop_assert!(vab >= 0.0);
        prop_assert!((vab - vba).abs() < 1e-12);
        let oracle = 0.5 * kl_oracle(a, b) + 0.5 * kl_oracle(b, a);
        prop_assert!((vab - oracle).abs() < 1e-10, "graph {vab} vs oracle {oracle}");
        if (a - b).abs() > 1e-6 {
            prop_assert!(vab > 0.0);
        }
    }

    #[test]
    fn symmetric_kl_zero_iff_equal(a in 0.01f64..0.99) {
        let mut t = Tape::new();
        let va = leaf(&mut t, &[a, 1.0 - a]);
        let vb = leaf(&mut t, &[a, 1.0 - a]);
        let kl = symmetric_kl(&mut t, va, vb).unwrap();
        prop_assert!(t.value(kl).item().abs() < 1e-12);
    }

    #[test]
    fn objective_additivity(
        lf in 0.0f64..3.0,
        l1 in 0.0f64..3.0,
        l2 in 0.0f64..3.0,
        kl in 0.0f64..2.0,
        alpha_idx in 0usize..4,
    ) {
        let alpha = [0.0, 0.1, 0.5, 1.0][alpha_idx];
        let mut t = Tape::new();
        let vf = t.constant(Tensor::scalar(lf)).unwrap();
        let v1 = t.constant(Tensor::scalar(l1)).unwrap();
        let v2 = t.constant(Tensor::scalar(l2)).unwrap();
        let vk = t.constant(Tensor::scalar(kl)).unwrap();
        let breakdown = total_objective(&mut t, vec![v1, v2], vf, vk, alpha).unwrap();
        let total = t.value(breakdown.total).item();
        prop_assert!((total - (lf + l1 + l2 + alpha * kl)).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariance(
        p1 in 0.05f64..0.95,
        p2 in 0.05f64..0.95,
        p3 in 0.05f64..0.95,
        e_seed in 0u64..1000,
    ) {
        use rand::Rng;
        let mut r = clicklab::rng::stream(e_seed, &[]);
        let emb: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let perm = [2usize, 0, 1];

        let run = |order: &[usize]| {
            let mut t = Tape::new();
            let preds = [p1, p2, p3];
            let mut confs = Vec::new();
            let mut projected = Vec::new();
            for &i in order {
                let p = leaf(&mut t, &[preds[i]]);
                confs.push(confidence(&mut t, p, true).unwrap());
                projected.push(t.leaf(Tensor::matrix(1, 4, emb[i].clone()).unwrap()).unwrap());
            }
            let w = fusion_weights(&mut t, &confs).unwrap();
            let fused = fuse(&mut t, &projected, w, FusionMode::WeightedSum).unwrap();
            let pred_vars: Vec<Var> = order.iter().map(|&i| leaf(&mut t, &[preds[i]])).collect();
            let kl = collaborative_kl(&mut t, &pred_vars).unwrap();
            (
                t.value(w).data().to_vec(),
                t.value(fused).data().to_vec(),
                t.value(kl).item(),
            )
        };

        let (w_id, fused_id, kl_id) = run(&[0, 1, 2]);
        let (w_pm, fused_pm, kl_pm) = run(&perm);

        // weights permute with the components
        for (slot, &src) in perm.iter().enumerate() {
            prop_assert!((w_pm[slot] - w_id[src]).abs() < 1e-12);
        }
        // weighted-sum fusion and the pairwise KL are permutation-invariant
        for (a, b) in fused_id.iter().zip(&fused_pm) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((kl_id - kl_pm).abs() < 1e-12);
    }

    #[test]
    fn pad_or_truncate_properties(
        seq in proptest::collection::vec(0u32..50, 0..20),
        n in 1usize..8,
    ) {
        let (padded, len) = pad_or_truncate(&seq, n);
        prop_assert_eq!(padded.len(), n);
        prop_assert_eq!(len, seq.len().min(n));
        // retained prefix is the most recent items
        let start = seq.len().saturating_sub(n);
        prop_assert_eq!(&padded[..len], &seq[start..]);
        for &v in &padded[len..] {
            prop_assert_eq!(v, 0);
        }
    }

    #[test]
    fn batch_iteration_covers_every_row_once(
        rows in 1usize..60,
        batch in 1usize..16,
        seed in proptest::option::of(0u64..100),
    ) {
        let spec = SyntheticSpec {
            schema: tiny_schema(),
            samples: rows,
            latent_dim: 2,
            mix: MixWeights { linear: 1.0, cross: 0.5, sequence: 0.5 },
            noise: 0.2,
            base_rate: 0.4,
            seed: 5,
        };
        let ds = gen_synthetic(&spec).unwrap();
        let mut seen = vec![0usize; rows];
        let mut emitted = 0;
        for b in batch_iter(&ds, batch, seed) {
            emitted += b.len;
            prop_assert!(b.len <= batch);
            // match rows back by full identity of the sparse block
            for r in 0..b.len {
                let key = &b.sparse[r * 2..(r + 1) * 2];
                let mut found = false;
                for row in 0..rows {
                    if &ds.sparse[row * 2..(row + 1) * 2] == key
                        && ds.labels[row] as f64 == b.labels[r]
                        && seen[row] == 0
                    {
                        seen[row] += 1;
                        found = true;
                        break;
                    }
                }
                prop_assert!(found, "emitted row not matched");
            }
        }
        prop_assert_eq!(emitted, rows);
    }
}
