//! Training loops: the category network and baseline classifiers
//! (cross-entropy, Adam) and the triplet-trained embedding network.

mod classify;
mod triplet;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classify::{train_ccnet, train_classifier, ClassifierOutcome, ClassifierTrainConfig, LabeledSet};
pub use triplet::{checkpoint_path, train_shufanet, ShufaRun};

use crate::error::{io_err, Result, ShufaError};
use crate::loss::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_triplets: usize,
    pub total_batches: usize,
    pub lr_init: f64,
    pub lr_adjust_every: usize,
    pub lr_decay: f64,
    pub momentum: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_grad_norm: Option<f64>,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_triplets: 32,
            total_batches: 2000,
            lr_init: 1e-4,
            lr_adjust_every: 200,
            lr_decay: 0.9,
            momentum: 0.9,
            clip_grad_norm: None,
            checkpoint_every: 500,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ShufaError::Invalid(format!("train: {m}")));
        if self.batch_triplets == 0 {
            return bad("batch_triplets must be at least 1");
        }
        if !(self.lr_init > 0.0) {
            return bad("lr_init must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.lr_adjust_every == 0 {
            return bad("lr_adjust_every must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_grad_norm must be positive");
        }
        self.loss.validate()
    }
}

/// `lr_init · lr_decay^⌊step / lr_adjust_every⌋`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_init * cfg.lr_decay.powi((step / cfg.lr_adjust_every) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_style: f64,
    pub loss_triplet: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

pub(crate) fn write_rows<R: Serialize>(path: &Path, rows: &[R], header: &[&str]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub(crate) fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<R>, _>>()?)
}

pub const STEP_HEADER: [&str; 5] = ["step", "lr", "loss_total", "loss_style", "loss_triplet"];
pub const EPOCH_HEADER: [&str; 4] = ["epoch", "train_loss", "valid_loss", "accuracy"];

impl TrainLog {
    pub fn write_steps_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.steps, &STEP_HEADER)
    }

    pub fn write_epochs_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.epochs, &EPOCH_HEADER)
    }

    pub fn read_steps_csv(path: &Path) -> Result<Vec<StepRecord>> {
        read_rows(path)
    }

    pub fn read_epochs_csv(path: &Path) -> Result<Vec<EpochRecord>> {
        read_rows(path)
    }

    /// Steps strictly increase and every loss is finite and non-negative.
    pub fn is_well_formed(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].step < w[1].step)
            && self.steps.iter().all(|s| {
                [s.loss_total, s.loss_style, s.loss_triplet]
                    .iter()
                    .all(|v| v.is_finite() && *v >= 0.0)
            })
    }
}
