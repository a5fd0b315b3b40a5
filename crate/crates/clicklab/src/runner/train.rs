//! The training and evaluation engine.
//!
//! A run is fully determined by its config: data generation, splits, model
//! init, batch order and the optimizer all derive their streams from config
//! seeds, and every loop is single-threaded, so repeating a config reproduces
//! each logged number bit for bit.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use super::config::{ConfigError, DataSource, TrainConfig};
use super::record::{EpochLog, EvalSet, NePoint, RunRecord};
use crate::data::{batch_iter, gen_synthetic, load_csv, split, DataError, Dataset, ExampleBatch};
use crate::fusion::LossValues;
use crate::metrics::{normalized_entropy, MetricError, MetricsReport};
use crate::model::{EnsembleModel, ModelError};
use crate::optim::Optimizer;
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::{Tape, TensorError};

const SEED_MODEL: u64 = 0x4d4f_4445;
const SEED_EPOCH: u64 = 0x4550_4f43;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("training diverged: non-finite value at batch {batch_index}")]
    Diverged { batch_index: usize },
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

/// Non-finite values escape through whichever error wrapper the failing op
/// sat behind; training reports them all as divergence.
fn is_divergence(e: &RunnerError) -> bool {
    matches!(
        e,
        RunnerError::Tensor(TensorError::NonFinite { .. })
            | RunnerError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
            | RunnerError::Model(ModelError::Bank(crate::embedding::BankError::Tensor(
                TensorError::NonFinite { .. }
            )))
    )
}

/// A built model with its parameters and the config that produced it.
pub struct TrainedModel {
    pub config: TrainConfig,
    pub model: EnsembleModel,
    pub store: ParamStore,
}

impl TrainedModel {
    /// Builds a freshly initialized model from a config.
    pub fn init(config: &TrainConfig) -> Result<TrainedModel, RunnerError> {
        let mut store = ParamStore::new();
        let mut init_rng = rng::stream(config.seed, &[SEED_MODEL]);
        let model = EnsembleModel::build(&mut store, &mut init_rng, &config.data.schema, &config.model)?;
        Ok(TrainedModel {
            config: config.clone(),
            model,
            store,
        })
    }
}

/// Materializes the configured dataset (synthetic or CSV).
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset, RunnerError> {
    match config.data.source {
        DataSource::Synthetic => {
            let spec = config
                .synthetic_spec()
                .ok_or_else(|| ConfigError::Invalid("missing [data.synthetic]".to_string()))?;
            Ok(gen_synthetic(&spec)?)
        }
        DataSource::Csv => {
            let path = config
                .data
                .path
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("missing data path".to_string()))?;
            Ok(load_csv(path, &config.data.schema)?)
        }
    }
}

/// One optimizer step on one batch; returns the loss breakdown values.
pub fn train_step(
    tm: &mut TrainedModel,
    opt: &mut Optimizer,
    batch: &ExampleBatch,
) -> Result<LossValues, RunnerError> {
    let mut tape = Tape::new();
    let bound = tm.store.bind(&mut tape)?;
    let fp = tm.model.forward(&mut tape, &bound, batch)?;
    tape.backward(fp.losses.total)?;
    let values = fp.losses.values(&tape);
    let grads = tm.store.collect_grads(&tape, &bound);
    opt.step(&mut tm.store, &grads);
    Ok(values)
}

/// Fused and per-component predictions over a dataset in stored order.
pub struct Predictions {
    pub fused: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub user_ids: Vec<u64>,
}

pub fn predict(tm: &TrainedModel, dataset: &Dataset, batch_size: usize) -> Result<Predictions, RunnerError> {
    let n_comp = tm.model.n_components();
    let mut out = Predictions {
        fused: Vec::with_capacity(dataset.len()),
        components: vec![Vec::with_capacity(dataset.len()); n_comp],
        labels: Vec::with_capacity(dataset.len()),
        user_ids: Vec::with_capacity(dataset.len()),
    };
    for batch in batch_iter(dataset, batch_size, None) {
        let mut tape = Tape::new();
        let bound = tm.store.bind_frozen(&mut tape)?;
        let fp = tm.model.forward(&mut tape, &bound, &batch)?;
        out.fused.extend_from_slice(tape.value(fp.fusion.prediction).data());
        for (m, comp) in fp.components.iter().enumerate() {
            out.components[m].extend_from_slice(tape.value(comp.prediction).data());
        }
        out.labels.extend_from_slice(&batch.labels);
        out.user_ids.extend_from_slice(&batch.user_ids);
    }
    Ok(out)
}

/// Metric reports for the fused output and every component head.
pub fn evaluate_model(
    tm: &TrainedModel,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<EvalSet, RunnerError> {
    let preds = predict(tm, dataset, batch_size)?;
    let fused = MetricsReport::compute(&preds.fused, &preds.labels, &preds.user_ids)?;
    let mut components = Vec::with_capacity(preds.components.len());
    for comp in &preds.components {
        components.push(MetricsReport::compute(comp, &preds.labels, &preds.user_ids)?);
    }
    Ok(EvalSet { fused, components })
}

fn mean_losses(acc: &[LossValues]) -> LossValues {
    let n = acc.len().max(1) as f64;
    let n_comp = acc.first().map_or(0, |v| v.component.len());
    let mut component = vec![0.0; n_comp];
    let mut fusion = 0.0;
    let mut kl = 0.0;
    let mut total = 0.0;
    for v in acc {
        for (i, c) in v.component.iter().enumerate() {
            component[i] += c;
        }
        fusion += v.fusion;
        kl += v.kl;
        total += v.total;
    }
    LossValues {
        component: component.into_iter().map(|c| c / n).collect(),
        fusion: fusion / n,
        kl: kl / n,
        total: total / n,
    }
}

struct RunOutput {
    record: RunRecord,
    tm: TrainedModel,
}

fn finish_run(
    mut tm: TrainedModel,
    best: Option<(f64, Vec<crate::tensor::Tensor>)>,
    epochs: Vec<EpochLog>,
    ne_curve: Vec<NePoint>,
    splits: (&Dataset, &Dataset, &Dataset),
    started: Instant,
) -> Result<RunOutput, RunnerError> {
    let (train_ds, val_ds, test_ds) = splits;
    let best_val_auc = best.as_ref().map(|(auc, _)| *auc);
    if let Some((_, snapshot)) = best {
        tm.store.restore(&snapshot);
    }
    let bs = tm.config.batch_size;
    let final_train = Some(evaluate_model(&tm, train_ds, bs)?);
    let final_val = if val_ds.is_empty() {
        None
    } else {
        Some(evaluate_model(&tm, val_ds, bs)?)
    };
    let final_test = if test_ds.is_empty() {
        None
    } else {
        Some(evaluate_model(&tm, test_ds, bs)?)
    };

    let out_dir = tm.config.resolved_out_dir(None);
    let checkpoint = match &out_dir {
        Some(dir) => {
            let path = dir.join("checkpoint.bin");
            save_checkpoint(&path, &tm.config.canonical_json(), &tm.store)?;
            Some(path)
        }
        None => None,
    };
    let record = RunRecord {
        config_hash: tm.config.hash(),
        config: tm.config.clone(),
        epochs,
        final_train,
        final_val,
        final_test,
        best_val_auc,
        ne_curve,
        wall_secs: started.elapsed().as_secs_f64(),
        checkpoint,
    };
    if let Some(dir) = &out_dir {
        record.append_jsonl(&dir.join("runs.jsonl"))?;
    }
    Ok(RunOutput { record, tm })
}

/// Trains per the config: mini-batch Adam on the collaborative objective,
/// per-epoch validation of the fused output and every head, checkpoint at
/// the best validation AUC (final parameters when there is no validation
/// split). Final metrics are computed from the checkpointed parameters.
pub fn train(config: &TrainConfig) -> Result<(RunRecord, TrainedModel), RunnerError> {
    config.validate()?;
    let started = Instant::now();
    let dataset = load_dataset(config)?;
    let [ft, fv, fe] = config.split.fractions;
    let (train_ds, val_ds, test_ds) = split(&dataset, (ft, fv, fe), config.split.seed)?;

    let mut tm = TrainedModel::init(config)?;
    let mut opt = Optimizer::new(config.optimizer.clone(), &tm.store);
    let mut epochs_log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Vec<crate::tensor::Tensor>)> = None;
    let mut global_batch = 0usize;

    for epoch in 1..=config.epochs {
        let shuffle = rng::derive_seed(config.seed, &[SEED_EPOCH, epoch as u64]);
        let mut losses = Vec::new();
        for batch in batch_iter(&train_ds, config.batch_size, Some(shuffle)) {
            let values = match train_step(&mut tm, &mut opt, &batch) {
                Ok(v) => v,
                Err(e) if is_divergence(&e) => {
                    return Err(RunnerError::Diverged {
                        batch_index: global_batch,
                    })
                }
                Err(e) => return Err(e),
            };
            if !values.total.is_finite() {
                return Err(RunnerError::Diverged {
                    batch_index: global_batch,
                });
            }
            losses.push(values);
            global_batch += 1;
        }
        let val = if !val_ds.is_empty() && epoch % config.eval_every == 0 {
            Some(evaluate_model(&tm, &val_ds, config.batch_size)?)
        } else {
            None
        };
        if let Some(ev) = &val {
            if best.as_ref().map_or(true, |(b, _)| ev.fused.auc > *b) {
                best = Some((ev.fused.auc, tm.store.snapshot()));
            }
        }
        epochs_log.push(EpochLog {
            epoch,
            train_loss: mean_losses(&losses),
            val,
        });
    }

    let out = finish_run(
        tm,
        best,
        epochs_log,
        Vec::new(),
        (&train_ds, &val_ds, &test_ds),
        started,
    )?;
    Ok((out.record, out.tm))
}

/// One pass over the training split in stored order (no shuffling), sampling
/// a Normalized-Entropy learning curve every `ne_curve_every` steps on the
/// validation split (the training split when there is none). The curve
/// always ends with a final post-pass sample.
pub fn one_epoch(config: &TrainConfig) -> Result<(RunRecord, TrainedModel), RunnerError> {
    config.validate()?;
    let started = Instant::now();
    let mut config = config.clone();
    config.epochs = 1;
    let dataset = load_dataset(&config)?;
    let [ft, fv, fe] = config.split.fractions;
    let (train_ds, val_ds, test_ds) = split(&dataset, (ft, fv, fe), config.split.seed)?;

    let mut tm = TrainedModel::init(&config)?;
    let mut opt = Optimizer::new(config.optimizer.clone(), &tm.store);
    let mut ne_curve = Vec::new();
    let mut losses = Vec::new();

    let ne_of = |tm: &TrainedModel| -> Result<f64, RunnerError> {
        let eval_ds = if val_ds.is_empty() { &train_ds } else { &val_ds };
        let preds = predict(tm, eval_ds, config.batch_size)?;
        Ok(normalized_entropy(&preds.fused, &preds.labels)?)
    };

    // Collected up front: the NE sampler re-borrows train_ds mid-pass.
    let batches: Vec<ExampleBatch> = batch_iter(&train_ds, config.batch_size, None).collect();
    let mut step = 0usize;
    for batch in &batches {
        let values = match train_step(&mut tm, &mut opt, batch) {
            Ok(v) => v,
            Err(e) if is_divergence(&e) => {
                return Err(RunnerError::Diverged { batch_index: step })
            }
            Err(e) => return Err(e),
        };
        if !values.total.is_finite() {
            return Err(RunnerError::Diverged { batch_index: step });
        }
        losses.push(values);
        step += 1;
        if step % config.ne_curve_every == 0 {
            ne_curve.push(NePoint {
                step,
                ne: ne_of(&tm)?,
            });
        }
    }
    ne_curve.push(NePoint {
        step,
        ne: ne_of(&tm)?,
    });

    let epochs_log = vec![EpochLog {
        epoch: 1,
        train_loss: mean_losses(&losses),
        val: None,
    }];
    let out = finish_run(
        tm,
        None,
        epochs_log,
        ne_curve,
        (&train_ds, &val_ds, &test_ds),
        started,
    )?;
    Ok((out.record, out.tm))
}

/// Rebuilds a model from a decoded checkpoint: the embedded config drives
/// construction, then parameter values restore by name.
pub fn rebuild(ckpt: &Checkpoint) -> Result<TrainedModel, RunnerError> {
    let config: TrainConfig = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| RunnerError::Mismatch(format!("embedded config does not parse: {e}")))?;
    let mut tm = TrainedModel::init(&config)?;
    let by_name: HashMap<&str, &crate::tensor::Tensor> =
        ckpt.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
    if by_name.len() != tm.store.len() {
        return Err(RunnerError::Mismatch(format!(
            "checkpoint has {} parameters, model expects {}",
            by_name.len(),
            tm.store.len()
        )));
    }
    for i in 0..tm.store.len() {
        let id = crate::params::ParamId(i);
        let name = tm.store.get(id).name.clone();
        let stored = by_name
            .get(name.as_str())
            .ok_or_else(|| RunnerError::Mismatch(format!("checkpoint lacks parameter `{name}`")))?;
        if stored.shape() != tm.store.get(id).tensor.shape() {
            return Err(RunnerError::Mismatch(format!(
                "parameter `{name}` has shape {:?}, model expects {:?}",
                stored.shape(),
                tm.store.get(id).tensor.shape()
            )));
        }
        tm.store.get_mut(id).tensor = (*stored).clone();
    }
    Ok(tm)
}

/// Loads a checkpoint and evaluates it on a dataset. The dataset schema must
/// match the embedded config's schema.
pub fn evaluate_checkpoint(
    path: &Path,
    dataset: &Dataset,
) -> Result<(EvalSet, TrainedModel), RunnerError> {
    let ckpt = load_checkpoint(path)?;
    let tm = rebuild(&ckpt)?;
    if dataset.schema != tm.config.data.schema {
        return Err(RunnerError::Mismatch(
            "dataset schema differs from the checkpoint's schema".to_string(),
        ));
    }
    let eval = evaluate_model(&tm, dataset, tm.config.batch_size)?;
    Ok((eval, tm))
}
