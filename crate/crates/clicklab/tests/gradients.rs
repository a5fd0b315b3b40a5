//! Finite-difference gradient checks for every differentiable primitive and
//! every component-model kind.

mod common;

use clicklab::data::FeatureSchema;
use clicklab::model::{build_seq_masks, ComponentInputs, ComponentKind, ComponentModel};
use clicklab::fusion::{bce, FusionMode};
use clicklab::params::ParamStore;
use clicklab::rng::stream;
use clicklab::tensor::{Tape, Tensor, TensorError, Var};

use common::*;

/// Weights each output entry distinctly so routing errors show up in the
/// scalar.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, TensorError> {
    let n = tape.value(v).numel();
    let shape = tape.shape(v).to_vec();
    let w = tape.constant(Tensor::new(shape, random_values(seed, n))?)?;
    let prod = tape.mul(v, w)?;
    tape.sum(prod)
}

#[test]
fn matmul_gradients_match_finite_differences() {
    for seed in 0..6 {
        let a0 = Tensor::matrix(3, 4, random_values(seed, 12)).unwrap();
        let b0 = Tensor::matrix(4, 2, random_values(seed + 100, 8)).unwrap();
        // wrt A
        let b = b0.clone();
        gradcheck_input(
            &a0,
            move |t, x| {
                let bv = t.constant(b.clone())?;
                let c = t.matmul(x, bv)?;
                weighted_sum(t, c, seed + 200)
            },
            "matmul wrt lhs",
        );
        // wrt B
        let a = a0.clone();
        gradcheck_input(
            &b0,
            move |t, x| {
                let av = t.constant(a.clone())?;
                let c = t.matmul(av, x)?;
                weighted_sum(t, c, seed + 300)
            },
            "matmul wrt rhs",
        );
    }
}

#[test]
fn elementwise_unary_gradients() {
    for seed in 0..6 {
        let x0 = Tensor::from_vec(random_values(seed, 9));
        gradcheck_input(&x0, move |t, x| {
            let y = t.sigmoid(x)?;
            weighted_sum(t, y, seed + 1)
        }, "sigmoid");
        gradcheck_input(&x0, move |t, x| {
            let y = t.exp(x)?;
            weighted_sum(t, y, seed + 2)
        }, "exp");
        gradcheck_input(&x0, move |t, x| {
            let y = t.neg(x)?;
            weighted_sum(t, y, seed + 3)
        }, "neg");
        // log needs positive input: shift via exp
        let p0 = Tensor::from_vec(
            random_values(seed + 50, 9).iter().map(|v| v.abs() + 0.3).collect(),
        );
        gradcheck_input(&p0, move |t, x| {
            let y = t.log(x)?;
            weighted_sum(t, y, seed + 4)
        }, "log");
        // relu checked away from the kink
        let r0 = Tensor::from_vec(
            random_values(seed + 60, 9)
                .iter()
                .map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v })
                .collect(),
        );
        gradcheck_input(&r0, move |t, x| {
            let y = t.relu(x)?;
            weighted_sum(t, y, seed + 5)
        }, "relu");
    }
}

#[test]
fn elementwise_binary_gradients_with_broadcasts() {
    for seed in 0..6 {
        let x0 = Tensor::matrix(3, 4, random_values(seed, 12)).unwrap();
        let other = Tensor::matrix(3, 4, random_values(seed + 10, 12)).unwrap();
        let col = Tensor::matrix(3, 1, random_values(seed + 20, 3)).unwrap();
        let scalar = Tensor::scalar(1.3 + 0.1 * seed as f64);
        // denominators away from zero
        let denom =
            Tensor::matrix(3, 4, random_values(seed + 30, 12).iter().map(|v| v.abs() + 0.5).collect())
                .unwrap();

        for (name, kind) in [("add", 0), ("sub", 1), ("mul", 2)] {
            let o = other.clone();
            gradcheck_input(
                &x0,
                move |t, x| {
                    let ov = t.constant(o.clone())?;
                    let y = match kind {
                        0 => t.add(x, ov)?,
                        1 => t.sub(x, ov)?,
                        _ => t.mul(x, ov)?,
                    };
                    weighted_sum(t, y, seed + 40)
                },
                name,
            );
        }
        // div wrt numerator and denominator
        let d = denom.clone();
        gradcheck_input(
            &x0,
            move |t, x| {
                let dv = t.constant(d.clone())?;
                let y = t.div(x, dv)?;
                weighted_sum(t, y, seed + 41)
            },
            "div wrt numerator",
        );
        let x = x0.clone();
        let d0 = denom.clone();
        gradcheck_input(
            &d0,
            move |t, den| {
                let xv = t.constant(x.clone())?;
                let y = t.div(xv, den)?;
                weighted_sum(t, y, seed + 42)
            },
            "div wrt denominator",
        );
        // column broadcast wrt the column operand
        let x = x0.clone();
        gradcheck_input(
            &col,
            move |t, c| {
                let xv = t.constant(x.clone())?;
                let y = t.mul(xv, c)?;
                weighted_sum(t, y, seed + 43)
            },
            "mul wrt broadcast column",
        );
        // scalar broadcast wrt the scalar
        let x = x0.clone();
        gradcheck_input(
            &scalar,
            move |t, s| {
                let xv = t.constant(x.clone())?;
                let y = t.mul(xv, s)?;
                weighted_sum(t, y, seed + 44)
            },
            "mul wrt broadcast scalar",
        );
    }
}

#[test]
fn softmax_add_bias_concat_slice_reductions_gradients() {
    for seed in 0..6 {
        let x0 = Tensor::matrix(3, 5, random_values(seed, 15)).unwrap();
        gradcheck_input(&x0, move |t, x| {
            let y = t.softmax(x)?;
            weighted_sum(t, y, seed + 1)
        }, "softmax");

        let bias0 = Tensor::from_vec(random_values(seed + 5, 5));
        let x = x0.clone();
        gradcheck_input(
            &bias0,
            move |t, b| {
                let xv = t.constant(x.clone())?;
                let y = t.add_bias(xv, b)?;
                weighted_sum(t, y, seed + 2)
            },
            "add_bias wrt bias",
        );

        gradcheck_input(&x0, move |t, x| {
            let extra = t.constant(Tensor::matrix(3, 2, random_values(seed + 6, 6))?)?;
            let y = t.concat(&[x, extra], 1)?;
            weighted_sum(t, y, seed + 3)
        }, "concat");

        gradcheck_input(&x0, move |t, x| {
            let y = t.slice(x, 1, 1, 3)?;
            weighted_sum(t, y, seed + 4)
        }, "slice");

        gradcheck_input(&x0, move |t, x| {
            let y = t.reshape(x, vec![5, 3])?;
            weighted_sum(t, y, seed + 5)
        }, "reshape");

        gradcheck_input(&x0, move |t, x| t.sum(x), "sum");
        gradcheck_input(&x0, move |t, x| t.mean(x), "mean");
        gradcheck_input(&x0, move |t, x| {
            let y = t.scale(x, -1.7)?;
            weighted_sum(t, y, seed + 6)
        }, "scale");
    }
}

#[test]
fn gather_then_sum_gradient_matches_finite_differences() {
    for seed in 0..6 {
        let table0 = Tensor::matrix(6, 3, random_values(seed, 18)).unwrap();
        let ids = {
            use rand::Rng;
            let mut r = stream(seed, &[0xa]);
            (0..7).map(|_| r.gen_range(0..6)).collect::<Vec<usize>>()
        };
        let ids2 = ids.clone();
        gradcheck_input(
            &table0,
            move |t, table| {
                let g = t.gather_rows(table, &ids2)?;
                weighted_sum(t, g, seed + 1)
            },
            "gather_rows",
        );
        drop(ids);
    }
}

#[test]
fn stop_gradient_product_matches_manual_constant_treatment() {
    // d/dx sum(stop(f(x)) * g(x)) must equal f(x0) * g'(x0) elementwise.
    for seed in 0..6 {
        let x0 = Tensor::from_vec(random_values(seed, 5));

        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone()).unwrap();
        let f = tape.mul(x, x).unwrap();
        let fs = tape.stop_gradient(f).unwrap();
        let g = tape.sigmoid(x).unwrap();
        let prod = tape.mul(fs, g).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad_tensor(x);

        // manual product rule with f frozen at its value
        for (i, &xi) in x0.data().iter().enumerate() {
            let fv = xi * xi;
            let s = 1.0 / (1.0 + (-xi).exp());
            let expected = fv * s * (1.0 - s);
            let got = analytic.data()[i];
            assert!(
                (got - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "entry {i}: got {got}, expected {expected}"
            );
        }
    }
}

#[test]
fn clamp_gradient_inside_range() {
    let x0 = Tensor::from_vec(vec![0.2, 0.5, 0.8]);
    gradcheck_input(
        &x0,
        |t, x| {
            let y = t.clamp(x, 0.0, 1.0)?;
            weighted_sum(t, y, 77)
        },
        "clamp interior",
    );
}

fn component_loss(
    schema: &FeatureSchema,
    model: &ComponentModel,
    bank: &clicklab::embedding::EmbeddingBank,
    tape: &mut Tape,
    bound: &clicklab::params::Bound,
    batch: &clicklab::data::ExampleBatch,
) -> Result<Var, TensorError> {
    let masks = build_seq_masks(tape, schema, batch)?;
    let to_tensor = |e: clicklab::embedding::BankError| -> TensorError {
        TensorError::InvalidArgument {
            op: "bank",
            msg: e.to_string(),
        }
    };
    let sparse = bank.lookup_sparse(0, tape, bound, batch).map_err(to_tensor)?;
    let mut seqs = Vec::new();
    for j in 0..schema.n_sequence() {
        seqs.push(
            bank.lookup_sequence_field(0, tape, bound, batch, j)
                .map_err(to_tensor)?,
        );
    }
    let dense = bank.encode_dense(0, tape, bound, batch).map_err(to_tensor)?;
    let target = bank
        .lookup_sparse_field(0, tape, bound, batch, 0)
        .map_err(to_tensor)?;
    let inputs = ComponentInputs {
        sparse,
        seqs,
        dense,
        target,
        masks: &masks,
        batch_size: batch.len,
        dim: model.emb_dim,
    };
    let e = model
        .forward(tape, bound, &inputs)
        .map_err(|e| TensorError::InvalidArgument {
            op: "component",
            msg: e.to_string(),
        })?;
    let p = model.predict(tape, bound, e)?;
    bce(tape, p, &batch.labels)
}

/// Full-model gradient check for one component kind trained standalone.
pub fn check_component_kind(kind: ComponentKind, seed: u64) -> GradCheckOutcome {
    let schema = tiny_schema();
    let batch = tiny_batch(seed, 3);
    let mut store = ParamStore::new();
    let mut rng = stream(seed, &[0x60d]);
    let bank = clicklab::embedding::EmbeddingBank::build(
        &mut store,
        &mut rng,
        &schema,
        &clicklab::embedding::BankConfig {
            mode: clicklab::embedding::BankMode::Multi,
            dims: vec![3],
            share_dense_mlp: true,
        },
    )
    .unwrap();
    let model = ComponentModel::build(
        &mut store,
        &mut rng,
        0,
        &clicklab::model::ComponentConfig {
            kind,
            depth: 2,
            hidden: 4,
            d_out: 3,
        },
        3,
        schema.n_sparse(),
        schema.n_sequence(),
        3,
    )
    .unwrap();

    gradcheck_params(
        &mut store,
        |tape, bound| component_loss(&schema, &model, &bank, tape, bound, &batch),
        &format!("{kind:?}"),
    )
}

/// Full-objective check with the gradient stop off: with it on, the computed
/// gradient intentionally differs from the true gradient of the forward pass
/// (the confidence path is severed), so finite differences could not agree.
/// The stop's own contract is tested separately.
pub fn check_fused_objective(seed: u64) -> GradCheckOutcome {
    let spec = tiny_ensemble_spec(FusionMode::WeightedConcat, 0.5, false);
    let (mut store, model) = build_tiny_model(seed, &spec);
    let batch = tiny_batch(seed, 3);
    gradcheck_params(
        &mut store,
        |tape, bound| {
            model
                .forward(tape, bound, &batch)
                .map(|fp| fp.losses.total)
                .map_err(|e| TensorError::InvalidArgument {
                    op: "ensemble",
                    msg: e.to_string(),
                })
        },
        "fused objective",
    )
}

#[test]
fn mlp_tower_full_gradient_check() {
    gradcheck_instances(100, 3, "mlp_tower", |seed| {
        check_component_kind(ComponentKind::MlpTower, seed)
    });
}

#[test]
fn cross_net_full_gradient_check() {
    gradcheck_instances(200, 3, "cross_net", |seed| {
        check_component_kind(ComponentKind::CrossNet, seed)
    });
}

#[test]
fn seq_attention_full_gradient_check() {
    gradcheck_instances(300, 3, "seq_attention", |seed| {
        check_component_kind(ComponentKind::SeqAttention, seed)
    });
}

#[test]
fn hier_ensemble_full_gradient_check() {
    gradcheck_instances(400, 3, "hier_ensemble", |seed| {
        check_component_kind(ComponentKind::HierEnsemble, seed)
    });
}

#[test]
fn fused_objective_full_gradient_check() {
    gradcheck_instances(500, 2, "fused objective", check_fused_objective);
}

#[test]
fn readout_gradient_check() {
    for seed in [31, 32, 33] {
        let x0 = Tensor::matrix(4, 3, random_values(seed, 12)).unwrap();
        gradcheck_input(
            &x0,
            move |t, fused| {
                let w = t.constant(Tensor::matrix(3, 1, random_values(seed + 1, 3))?)?;
                let b = t.constant(Tensor::from_vec(vec![0.1]))?;
                let z = t.matmul(fused, w)?;
                let z = t.add_bias(z, b)?;
                let p = t.sigmoid(z)?;
                let labels = t.constant(Tensor::matrix(4, 1, vec![1.0, 0.0, 1.0, 0.0])?)?;
                // plain BCE written with tape ops
                let one = t.constant(Tensor::scalar(1.0))?;
                let lp = t.log(p)?;
                let q = t.sub(one, p)?;
                let lq = t.log(q)?;
                let y0 = t.sub(one, labels)?;
                let t1 = t.mul(labels, lp)?;
                let t0 = t.mul(y0, lq)?;
                let s = t.add(t1, t0)?;
                let m = t.mean(s)?;
                t.neg(m)
            },
            "readout",
        );
    }
}

#[test]
fn mean_pool_respects_masks_in_gradients() {
    // Gradient into sequence embeddings only lands on valid positions.
    let schema = tiny_schema();
    let batch = tiny_batch(3, 4);
    let mut store = ParamStore::new();
    let mut rng = stream(9, &[]);
    let bank = clicklab::embedding::EmbeddingBank::build(
        &mut store,
        &mut rng,
        &schema,
        &clicklab::embedding::BankConfig {
            mode: clicklab::embedding::BankMode::Multi,
            dims: vec![3],
            share_dense_mlp: true,
        },
    )
    .unwrap();

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let masks = build_seq_masks(&mut tape, &schema, &batch).unwrap();
    let seq = bank
        .lookup_sequence_field(0, &mut tape, &bound, &batch, 0)
        .unwrap();
    let pooled =
        clicklab::model::masked_mean_pool(&mut tape, seq, &masks[0], batch.len, 3).unwrap();
    let loss = tape.sum(pooled).unwrap();
    tape.backward(loss).unwrap();

    let table_grad = tape.grad(bound.var(bank.table(0).unwrap())).unwrap();
    // valid rows of the first sequence field
    let mut valid_rows = std::collections::HashSet::new();
    let slots = schema.seq_slots();
    for b in 0..batch.len {
        let len = batch.seq_lengths[b * schema.n_sequence()] as usize;
        for t in 0..len {
            let id = batch.sequences[b * slots + t];
            valid_rows.insert(bank.layout.seq_row(0, id));
        }
    }
    let d = 3;
    for row in 0..bank.layout.rows {
        let has_grad = table_grad[row * d..(row + 1) * d]
            .iter()
            .any(|g| g.abs() > 0.0);
        assert_eq!(
            has_grad,
            valid_rows.contains(&row),
            "row {row}: gradient presence should match validity"
        );
    }
}
