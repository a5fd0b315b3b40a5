//! Run records: everything a run logged, serializable as one JSON line.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::fusion::LossValues;
use crate::metrics::MetricsReport;

/// Metric reports for the fused output and each component head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSet {
    pub fused: MetricsReport,
    pub components: Vec<MetricsReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss breakdown over the epoch's batches.
    pub train_loss: LossValues,
    pub val: Option<EvalSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NePoint {
    pub step: usize,
    pub ne: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    /// The post-transformation config the run actually used.
    pub config: TrainConfig,
    pub epochs: Vec<EpochLog>,
    /// Final evaluations computed from the checkpointed parameters.
    pub final_train: Option<EvalSet>,
    pub final_val: Option<EvalSet>,
    pub final_test: Option<EvalSet>,
    pub best_val_auc: Option<f64>,
    /// NE learning-curve samples (one-epoch runs).
    pub ne_curve: Vec<NePoint>,
    pub wall_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    /// The evaluation used for comparisons: test when present, else val,
    /// else train.
    pub fn primary_eval(&self) -> Option<&EvalSet> {
        self.final_test
            .as_ref()
            .or(self.final_val.as_ref())
            .or(self.final_train.as_ref())
    }

    /// Appends this record as one JSON line.
    pub fn append_jsonl(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let line = serde_json::to_string(self).expect("record serializes");
        writeln!(file, "{line}")
    }
}
