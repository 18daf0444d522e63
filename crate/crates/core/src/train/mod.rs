//! Losses, exact episode gradients, Adam, pretraining, the meta-training
//! loop, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod grad;
pub mod loss;
pub mod meta;
pub mod pretrain;

use serde::{Deserialize, Serialize};

use crate::error::{GenError, Result};
use crate::model::{Mode, ModelConfig, ScoreKind};

pub use adam::{adam_step, adam_step_embeddings, AdamConfig, OptimizerState};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use grad::{episode_loss, episode_loss_and_grad, Episode, GradientSet};
pub use loss::{bce_grad, bce_loss, hinge_loss};
pub use meta::{meta_train, validation_config, LogRecord, TrainOutcome};
pub use pretrain::{pretrain_in_graph, PretrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub dim: usize,
    pub num_bases: usize,
    pub lr: f64,
    pub margin: f64,
    pub num_neg: usize,
    /// Monte Carlo samples per score during training.
    pub mc_train: usize,
    /// Monte Carlo samples per score during evaluation.
    pub mc_test: usize,
    pub shots: usize,
    pub task_size: usize,
    pub max_iteration: usize,
    pub curriculum: bool,
    pub dropout: f64,
    pub score: ScoreKind,
    pub mode: Mode,
    pub inverse_relations: bool,
    /// Hidden width of the linear head; 0 means `2 * dim`.
    pub hidden: usize,
    /// Validate every this many episodes (0 disables validation).
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: usize,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            dim: 100,
            num_bases: 100,
            lr: 1e-3,
            margin: 1.0,
            num_neg: 32,
            mc_train: 1,
            mc_test: 10,
            shots: 3,
            task_size: 500,
            max_iteration: 10_000,
            curriculum: true,
            dropout: 0.3,
            score: ScoreKind::DistMult,
            mode: Mode::Stochastic,
            inverse_relations: true,
            hidden: 0,
            eval_every: 500,
            patience: 10,
            pretrain_steps: 2000,
            pretrain_batch: 512,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr > 0.0) {
            bad.push(format!("lr must be > 0 (got {})", self.lr));
        }
        if self.score != ScoreKind::Linear && !(self.margin > 0.0) {
            bad.push(format!("margin must be > 0 (got {})", self.margin));
        }
        if self.num_neg == 0 {
            bad.push("num_neg must be >= 1".into());
        }
        if self.mc_train == 0 || self.mc_test == 0 {
            bad.push("Monte Carlo sample counts must be >= 1".into());
        }
        if self.shots == 0 {
            bad.push("shots must be >= 1".into());
        }
        if self.task_size == 0 {
            bad.push("task_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.dim == 0 || self.num_bases == 0 {
            bad.push("dim and num_bases must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(GenError::InvalidConfig(bad.join("; ")))
        }
    }

    pub fn model_config(&self, num_entities: usize, num_raw_relations: usize) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            num_bases: self.num_bases,
            num_entities,
            num_raw_relations,
            inverse_relations: self.inverse_relations,
            score: self.score,
            dropout: self.dropout,
            hidden: if self.hidden == 0 { 2 * self.dim } else { self.hidden },
        }
    }
}
