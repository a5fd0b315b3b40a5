//! Embedding-scale sweeps: single-embedding vs multi-embedding vs the
//! collaborative ensemble at matched parameter budgets.
//!
//! The base config's first component defines the architecture and the base
//! embedding dimension. At multiplier `x`:
//!
//! - `se` trains that single model with an `x`-times-wider table;
//! - `me` duplicates the tower `x` times with base-width tables and plain
//!   concatenation (per-head losses kept, no confidence weighting, no KL);
//! - `ours_sum` / `ours_concat` run the full collaborative ensemble with `x`
//!   components at base width and the corresponding fusion mode.
//!
//! At multiplier 1 every mode collapses to the same standalone tower; the
//! configs still hash distinctly because the fusion section differs.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::record::RunRecord;
use super::train::{train, RunnerError};
use crate::embedding::BankMode;
use crate::fusion::FusionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Se,
    Me,
    OursSum,
    OursConcat,
}

impl SweepMode {
    pub fn all() -> [SweepMode; 4] {
        [SweepMode::Se, SweepMode::Me, SweepMode::OursSum, SweepMode::OursConcat]
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepMode::Se => "se",
            SweepMode::Me => "me",
            SweepMode::OursSum => "ours_sum",
            SweepMode::OursConcat => "ours_concat",
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepMode::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown sweep mode `{s}`"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub mode: SweepMode,
    pub multiplier: usize,
    pub seed: u64,
    pub record: RunRecord,
}

/// Derives the run config for one (mode, multiplier) cell from a base
/// config whose first component is the architecture under study.
pub fn sweep_config(base: &TrainConfig, mode: SweepMode, multiplier: usize) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.tag = Some(format!("{mode}_x{multiplier}"));
    let template = cfg.model.components[0].clone();
    match mode {
        SweepMode::Se => {
            let mut single = template;
            single.embedding_dim *= multiplier;
            cfg.model.components = vec![single];
        }
        SweepMode::Me => {
            cfg.model.components = vec![template; multiplier];
            cfg.model.bank_mode = BankMode::Multi;
            cfg.model.fusion.mode = FusionMode::PlainConcat;
            cfg.model.fusion.use_confidence = false;
            cfg.model.fusion.alpha = 0.0;
        }
        SweepMode::OursSum | SweepMode::OursConcat => {
            cfg.model.components = vec![template; multiplier];
            cfg.model.bank_mode = BankMode::Multi;
            cfg.model.fusion.mode = if mode == SweepMode::OursSum {
                FusionMode::WeightedSum
            } else {
                FusionMode::WeightedConcat
            };
            cfg.model.fusion.use_confidence = true;
        }
    }
    cfg
}

/// Runs the grid: one training run per (mode, multiplier, seed).
pub fn scale_sweep(
    base: &TrainConfig,
    multipliers: &[usize],
    modes: &[SweepMode],
    seeds: &[u64],
) -> Result<Vec<SweepOutcome>, RunnerError> {
    let mut outcomes = Vec::new();
    for &mode in modes {
        for &multiplier in multipliers {
            for &seed in seeds {
                let mut cfg = sweep_config(base, mode, multiplier);
                cfg.seed = seed;
                if let Some(dir) = &base.out_dir {
                    cfg.out_dir = Some(dir.join(format!("{mode}_x{multiplier}_s{seed}")));
                }
                let (record, _) = train(&cfg)?;
                outcomes.push(SweepOutcome {
                    mode,
                    multiplier,
                    seed,
                    record,
                });
            }
        }
    }
    Ok(outcomes)
}

/// Consolidated CSV of the sweep's primary-eval metrics.
pub fn write_sweep_csv(outcomes: &[SweepOutcome], path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "mode,multiplier,seed,config_hash,auc,gauc,logloss,ne")?;
    for o in outcomes {
        let eval = o.record.primary_eval().expect("runs produce evals");
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            o.mode,
            o.multiplier,
            o.seed,
            o.record.config_hash,
            eval.fused.auc,
            eval.fused.gauc,
            eval.fused.logloss,
            eval.fused.ne
        )?;
    }
    Ok(())
}
