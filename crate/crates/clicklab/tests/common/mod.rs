//! Shared test fixtures and the finite-difference gradient oracle.
//!
//! The oracle only ever drives forward evaluations: central differences at
//! `eps = 1e-5` against whatever scalar the builder computes, compared with
//! the tape's backward pass.

#![allow(dead_code)]

use clicklab::data::{
    gen_synthetic, ExampleBatch, FeatureSchema, MixWeights, SequenceField, SparseField,
    SyntheticSpec,
};
use clicklab::model::{ComponentConfig, ComponentKind, ComponentSpec, EnsembleModel, EnsembleSpec};
use clicklab::fusion::{FusionConfig, FusionMode};
use clicklab::params::{Bound, ParamStore};
use clicklab::rng::stream;
use clicklab::tensor::{Tape, Tensor, TensorError, Var};

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_RTOL: f64 = 1e-4;
pub const GRAD_ATOL: f64 = 1e-8;

/// Central finite differences of `f` around `x0`.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(x0: &[f64], mut f: F) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        x[i] = x0[i] + FD_EPS;
        let fp = f(&x);
        x[i] = x0[i] - FD_EPS;
        let fm = f(&x);
        x[i] = x0[i];
        g[i] = (fp - fm) / (2.0 * FD_EPS);
    }
    g
}

/// Max relative error over entries, with an absolute floor for near-zero
/// gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_ATOL / GRAD_RTOL))
        .fold(0.0, f64::max)
}

pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], what: &str) {
    let err = max_rel_err(analytic, numeric);
    assert!(
        err <= GRAD_RTOL,
        "{what}: max relative gradient error {err:.3e} exceeds {GRAD_RTOL:.0e}"
    );
}

/// Checks the tape gradient of a scalar built from one leaf against finite
/// differences. The builder must be deterministic.
pub fn gradcheck_input<F>(x0: &Tensor, build: F, what: &str)
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone()).unwrap();
    let loss = build(&mut tape, x).unwrap_or_else(|e| panic!("{what}: forward failed: {e}"));
    assert_eq!(tape.value(loss).numel(), 1, "{what}: loss must be scalar");
    tape.backward(loss).unwrap();
    let analytic = tape.grad_tensor(x);

    let numeric = finite_diff(x0.data(), |vals| {
        let mut t = Tape::new();
        let x = t
            .leaf(Tensor::new(x0.shape().to_vec(), vals.to_vec()).unwrap())
            .unwrap();
        let loss = build(&mut t, x).unwrap();
        t.value(loss).item()
    });
    assert_grads_close(analytic.data(), &numeric, what);
}

/// ReLU and clamp are not differentiable at their kinks; instances whose
/// forward pass lands an input within this margin of a kink are skipped by
/// the parameter gradcheck (a central difference at `eps = 1e-5` could
/// straddle the kink there and the comparison would be meaningless).
/// Perturbing one value by `eps` moves any pre-activation by at most a few
/// `eps`, so this margin keeps a comfortable factor above that while
/// skipping few instances.
pub const KINK_MARGIN: f64 = 1.5e-4;

pub enum GradCheckOutcome {
    /// Max relative error over all parameters (already asserted in bounds).
    Checked(f64),
    /// Instance landed within [`KINK_MARGIN`] of a kink; try another seed.
    SkippedKink,
}

/// Checks tape gradients of every parameter in a store against finite
/// differences of the forward scalar.
pub fn gradcheck_params<F>(store: &mut ParamStore, build: F, what: &str) -> GradCheckOutcome
where
    F: Fn(&mut Tape, &Bound) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    let loss = build(&mut tape, &bound).unwrap_or_else(|e| panic!("{what}: forward failed: {e}"));
    if tape.kink_margin() < KINK_MARGIN {
        return GradCheckOutcome::SkippedKink;
    }
    tape.backward(loss).unwrap();
    let analytic = store.collect_grads(&tape, &bound);

    let ids: Vec<clicklab::params::ParamId> = store.iter().map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for (i, &id) in ids.iter().enumerate() {
        let n = store.get(id).tensor.numel();
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let orig = store.get(id).tensor.data()[j];
            let eval = |store: &ParamStore| -> f64 {
                let mut t = Tape::new();
                let b = store.bind_frozen(&mut t).unwrap();
                let loss = build(&mut t, &b).unwrap();
                t.value(loss).item()
            };
            store.get_mut(id).tensor.data_mut()[j] = orig + FD_EPS;
            let fp = eval(store);
            store.get_mut(id).tensor.data_mut()[j] = orig - FD_EPS;
            let fm = eval(store);
            store.get_mut(id).tensor.data_mut()[j] = orig;
            numeric[j] = (fp - fm) / (2.0 * FD_EPS);
        }
        let err = max_rel_err(&analytic[i], &numeric);
        assert!(
            err <= GRAD_RTOL,
            "{what}: parameter `{}` max relative gradient error {err:.3e}",
            store.get(id).name
        );
        worst = worst.max(err);
    }
    GradCheckOutcome::Checked(worst)
}

/// Runs `build_instance` over derived seeds until `instances` kink-free
/// gradient checks have passed. Panics if too many instances skip, which
/// would mean the fixtures are systematically degenerate.
pub fn gradcheck_instances<B>(base_seed: u64, instances: usize, what: &str, mut build_instance: B)
where
    B: FnMut(u64) -> GradCheckOutcome,
{
    let mut checked = 0;
    let mut attempt = 0;
    while checked < instances {
        assert!(
            attempt < instances * 4,
            "{what}: too many kink-adjacent instances ({checked}/{instances} after {attempt} tries)"
        );
        let seed = clicklab::rng::derive_seed(base_seed, &[attempt as u64]);
        if let GradCheckOutcome::Checked(_) = build_instance(seed) {
            checked += 1;
        }
        attempt += 1;
    }
}

/// Random values in `[-2, 2]`, the range the gradient-check properties use.
pub fn random_values(seed: u64, n: usize) -> Vec<f64> {
    use rand::Rng;
    let mut r = stream(seed, &[0x7e57]);
    (0..n).map(|_| r.gen_range(-2.0..2.0)).collect()
}

/// Random probabilities comfortably inside the clamp range.
pub fn random_probs(seed: u64, n: usize) -> Vec<f64> {
    use rand::Rng;
    let mut r = stream(seed, &[0x9095]);
    (0..n).map(|_| r.gen_range(0.02..0.98)).collect()
}

/// Small schema: 2 sparse fields (item, user), 1 dense, 1 sequence field.
pub fn tiny_schema() -> FeatureSchema {
    FeatureSchema {
        sparse: vec![
            SparseField {
                name: "item".to_string(),
                cardinality: 5,
            },
            SparseField {
                name: "user".to_string(),
                cardinality: 4,
            },
        ],
        dense: vec!["x0".to_string()],
        sequence: vec![SequenceField {
            name: "hist".to_string(),
            cardinality: 5,
            max_len: 3,
        }],
        user_id: "user".to_string(),
    }
}

/// A small deterministic batch over [`tiny_schema`], including an empty and a
/// full sequence.
pub fn tiny_batch(seed: u64, rows: usize) -> ExampleBatch {
    let spec = SyntheticSpec {
        schema: tiny_schema(),
        samples: rows.max(4),
        latent_dim: 3,
        mix: MixWeights {
            linear: 1.0,
            cross: 1.0,
            sequence: 1.0,
        },
        noise: 0.3,
        base_rate: 0.45,
        seed,
    };
    let ds = gen_synthetic(&spec).unwrap();
    let idx: Vec<usize> = (0..rows).collect();
    ds.batch(&idx)
}

pub fn component_spec(kind: ComponentKind, emb_dim: usize) -> ComponentSpec {
    ComponentSpec {
        config: ComponentConfig {
            kind,
            depth: 2,
            hidden: 5,
            d_out: 4,
        },
        embedding_dim: emb_dim,
    }
}

/// Two-component ensemble spec (cross_net + seq_attention) at tiny sizes.
pub fn tiny_ensemble_spec(mode: FusionMode, alpha: f64, gradient_stop: bool) -> EnsembleSpec {
    EnsembleSpec {
        components: vec![
            component_spec(ComponentKind::CrossNet, 3),
            component_spec(ComponentKind::SeqAttention, 3),
        ],
        bank_mode: clicklab::embedding::BankMode::Multi,
        share_dense_mlp: true,
        fusion: FusionConfig {
            mode,
            use_confidence: true,
            use_gradient_stop: gradient_stop,
            alpha,
            n_components: 2,
        },
        d_proj: None,
        head_input: clicklab::model::HeadInput::Raw,
        include_component_losses: true,
        target_field: None,
    }
}

/// Builds a model over [`tiny_schema`] with deterministic init.
pub fn build_tiny_model(seed: u64, spec: &EnsembleSpec) -> (ParamStore, EnsembleModel) {
    let mut store = ParamStore::new();
    let mut rng = stream(seed, &[0x1011]);
    let model = EnsembleModel::build(&mut store, &mut rng, &tiny_schema(), spec).unwrap();
    (store, model)
}

/// The synthetic dataset the directional experiments run on: 100k rows with
/// planted linear, cross, and gated sequence-affinity signal.
pub fn bench_config_toml() -> String {
    r#"
seed = 42
epochs = 5
batch_size = 1024

[optimizer]
kind = "adam"
learning_rate = 1e-2
weight_decay = 1e-5

[data]
source = "synthetic"

[data.schema]
user_id = "user"
sparse = [ { name = "item", cardinality = 200 }, { name = "cat", cardinality = 30 }, { name = "user", cardinality = 300 } ]
dense = ["x0", "x1"]
sequence = [ { name = "hist", cardinality = 200, max_len = 8 } ]

[data.synthetic]
samples = 100000
latent_dim = 8
noise = 0.3
base_rate = 0.35
seed = 7
mix = { linear = 0.5, cross = 1.2, sequence = 2.0 }

[split]
fractions = [0.8, 0.1, 0.1]
seed = 11

[[components]]
kind = "cross_net"
depth = 2
hidden = 32
d_out = 16
embedding_dim = 16

[[components]]
kind = "seq_attention"
depth = 2
hidden = 32
d_out = 16
embedding_dim = 16

[fusion]
mode = "weighted_concat"
alpha = 0.5
"#
    .to_string()
}

/// Full two-component collaborative-ensemble config over the directional
/// dataset (cross_net + seq_attention, d = 16 each, alpha = 0.5).
pub fn directional_config() -> clicklab::runner::TrainConfig {
    clicklab::runner::TrainConfig::from_toml_str(&bench_config_toml()).unwrap()
}

/// Standalone config for one of the two components, same budget.
pub fn standalone_config(component: usize) -> clicklab::runner::TrainConfig {
    let mut cfg = directional_config();
    let keep = cfg.model.components[component].clone();
    cfg.model.components = vec![keep];
    cfg.tag = Some(format!("standalone_{component}"));
    cfg
}

/// Runs several configs across 2 worker threads (runs share no mutable
/// state), returning results in input order.
pub fn train_many(
    configs: &[clicklab::runner::TrainConfig],
) -> Vec<clicklab::runner::RunRecord> {
    use std::sync::Mutex;
    let results: Mutex<Vec<Option<clicklab::runner::RunRecord>>> =
        Mutex::new(vec![None; configs.len()]);
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..2 {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let (record, _) = clicklab::runner::train(&configs[i]).expect("training run");
                results.lock().unwrap()[i] = Some(record);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every run finished"))
        .collect()
}

/// Mean fused test AUC over a set of run records.
pub fn mean_fused_auc(records: &[clicklab::runner::RunRecord]) -> f64 {
    let sum: f64 = records
        .iter()
        .map(|r| r.primary_eval().expect("eval present").fused.auc)
        .sum();
    sum / records.len() as f64
}

pub const DIRECTIONAL_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

pub fn with_seed(cfg: &clicklab::runner::TrainConfig, seed: u64) -> clicklab::runner::TrainConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c
}
