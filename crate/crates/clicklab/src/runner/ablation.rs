//! Ablation variants as pure config transformations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::embedding::BankMode;
use crate::fusion::FusionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoConfidenceFusion,
    NoKl,
    NoMultiEmbedding,
    NoGradientStop,
    SingleEmbeddingConcat,
    MultiEmbeddingConcat,
}

impl AblationVariant {
    pub fn all() -> [AblationVariant; 7] {
        [
            AblationVariant::Full,
            AblationVariant::NoConfidenceFusion,
            AblationVariant::NoKl,
            AblationVariant::NoMultiEmbedding,
            AblationVariant::NoGradientStop,
            AblationVariant::SingleEmbeddingConcat,
            AblationVariant::MultiEmbeddingConcat,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoConfidenceFusion => "no_confidence_fusion",
            AblationVariant::NoKl => "no_kl",
            AblationVariant::NoMultiEmbedding => "no_multi_embedding",
            AblationVariant::NoGradientStop => "no_gradient_stop",
            AblationVariant::SingleEmbeddingConcat => "single_embedding_concat",
            AblationVariant::MultiEmbeddingConcat => "multi_embedding_concat",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationVariant::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown ablation variant `{s}`"))
    }
}

/// Applies exactly one variant's transformation to a full-model base config.
pub fn apply_variant(base: &TrainConfig, variant: AblationVariant) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.tag = Some(variant.name().to_string());
    match variant {
        AblationVariant::Full => {}
        AblationVariant::NoConfidenceFusion => {
            cfg.model.fusion.mode = FusionMode::PlainConcat;
        }
        AblationVariant::NoKl => {
            cfg.model.fusion.alpha = 0.0;
        }
        AblationVariant::NoMultiEmbedding => {
            cfg.model.bank_mode = BankMode::Shared;
        }
        AblationVariant::NoGradientStop => {
            cfg.model.fusion.use_gradient_stop = false;
        }
        AblationVariant::SingleEmbeddingConcat => {
            cfg.model.bank_mode = BankMode::Shared;
            cfg.model.fusion.mode = FusionMode::PlainConcat;
            cfg.model.fusion.alpha = 0.0;
            cfg.model.fusion.use_confidence = false;
        }
        AblationVariant::MultiEmbeddingConcat => {
            cfg.model.bank_mode = BankMode::Multi;
            cfg.model.fusion.mode = FusionMode::PlainConcat;
            cfg.model.fusion.alpha = 0.0;
            cfg.model.fusion.use_confidence = false;
        }
    }
    cfg
}
