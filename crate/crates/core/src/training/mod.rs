//! Flip-consistency training with random masking: each chunk is masked,
//! mirrored, and both versions go through the same weights.

pub mod augment;
pub mod losses;
mod trainer;

pub use augment::{horizontal_flip, random_mask};
pub use losses::{attention_consistency_loss, l1_loss, neg_pearson_loss, regression_loss, total_loss};
pub use trainer::{log_csv, train, train_step, train_with, Optimizer, TrainRun, TrainStepRecord, LOG_HEADER};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the negative Pearson term in the regression loss.
    pub alpha: f64,
    /// Weight of the attention-consistency term.
    pub beta: f64,
    pub chunk_len: usize,
    pub mask_size: usize,
    pub mask_fill: f64,
    /// Chunks per optimiser step.
    pub batch_size: usize,
    pub epochs: usize,
    pub max_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.3,
            beta: 0.5,
            chunk_len: 60,
            mask_size: 16,
            mask_fill: 0.0,
            batch_size: 4,
            epochs: 30,
            max_lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("train config: {m}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return fail(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if self.chunk_len < 2 {
            return fail(format!("chunk_len must be >= 2, got {}", self.chunk_len));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return fail(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if !self.mask_fill.is_finite() {
            return fail("mask_fill must be finite".into());
        }
        Ok(())
    }

    /// Optimiser steps per epoch for `n` training chunks.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}
