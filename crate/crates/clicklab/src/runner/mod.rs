//! Config-driven experiment engine: training, evaluation, ablation grids,
//! embedding scale sweeps, one-epoch streaming runs, and checkpoints.

mod ablation;
mod checkpoint;
mod config;
mod record;
mod sweep;
mod train;

pub use ablation::{apply_variant, AblationVariant};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError,
};
pub use config::{
    ConfigError, DataConfig, DataSource, GenDataConfig, SplitConfig, SyntheticConfig, TrainConfig,
};
pub use record::{EpochLog, EvalSet, NePoint, RunRecord};
pub use sweep::{scale_sweep, sweep_config, write_sweep_csv, SweepMode, SweepOutcome};
pub use train::{
    evaluate_checkpoint, evaluate_model, load_dataset, one_epoch, predict, rebuild, train,
    train_step, Predictions, RunnerError, TrainedModel,
};
