//! Optimization: encoder pretraining with per-stem heads, query-conditioned
//! training, validation, collapse detection and checkpointing.

mod adam;
mod checkpoint;
mod collapse;
mod run;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig, StepStats};
pub use checkpoint::{transfer_encoder, Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use collapse::{detect_collapse, CollapseConfig, CollapseVerdict};
pub use run::{
    config_hash, pretrain_encoder, train, validate, validation_score, StepRecord, TrainData,
    TrainInit, TrainLog, TrainOutcome,
};

use crate::data::{AugmentConfig, RmsLadder};
use crate::error::{Error, Result};
use crate::infer::QueryMode;
use crate::metrics::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub pairs_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    pub chunk_secs: f64,
    pub frozen_encoder: bool,
    pub augmentation: AugmentConfig,
    pub balanced: bool,
    pub roster: String,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub ladder: RmsLadder,
    pub collapse: CollapseConfig,
    pub validate: bool,
    pub validation_query_mode: QueryMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            pretrain_epochs: 100,
            pairs_per_epoch: 8192,
            batch_size: 4,
            lr: 1e-3,
            decay: 0.98,
            chunk_secs: 6.0,
            frozen_encoder: false,
            augmentation: AugmentConfig::default(),
            balanced: false,
            roster: "q:vdb".into(),
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            ladder: RmsLadder::default(),
            collapse: CollapseConfig::default(),
            validate: true,
            validation_query_mode: QueryMode::DifferentSong,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.pairs_per_epoch == 0 || self.batch_size == 0 {
            return bad("pairs_per_epoch and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay {} must lie in (0, 1]", self.decay));
        }
        if !(self.chunk_secs > 0.0) {
            return bad(format!("chunk length {} s must be positive", self.chunk_secs));
        }
        if !(self.loss.epsilon > 0.0) {
            return bad("loss epsilon must be positive".into());
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi(epoch as i32)
    }

    /// Optimizer steps in one epoch; the last batch may be partial.
    pub fn steps_per_epoch(&self) -> usize {
        self.pairs_per_epoch.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub pairs: usize,
    pub train_loss: f64,
    /// Mean over roster stems of the median validation SNR.
    pub validation_score: Option<f64>,
    pub validation_medians: BTreeMap<String, f64>,
    pub collapsed: Vec<String>,
}
