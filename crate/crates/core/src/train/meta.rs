//! The episodic meta-training loop.
//!
//! Each episode samples a task from the meta-training set (with the shot
//! curriculum when enabled), draws negatives filtered against the in-graph
//! and meta-training triplets only, embeds the task, and takes one Adam
//! step on the episode loss. Validation runs every `eval_every` episodes;
//! the parameters with the best validation metric are returned.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::episode::{curriculum_shots, CurriculumState, EpisodeSampler, Task};
use crate::error::{GenError, Result};
use crate::eval::{evaluate_split, EvalConfig};
use crate::graph::{EntityId, RelationId, Triplet};
use crate::model::layers::Noise;
use crate::model::{DropoutMode, ModelParams, ScoreKind};
use crate::rng::{derive_seed, rng_for};
use crate::split::{MetaSetKind, OogSplit};
use crate::train::adam::{adam_step, AdamConfig, OptimizerState};
use crate::train::grad::{episode_loss_and_grad, Episode, GradientSet};
use crate::train::HyperParams;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub episode: usize,
    pub loss: f64,
    pub shots: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters, or the final ones without validation.
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub log: Vec<LogRecord>,
    /// Episode whose parameters were returned (0 for the initial ones).
    pub best_episode: usize,
    pub best_metric: Option<f64>,
}

/// Validation settings derived from the hyperparameters.
pub fn validation_config(hp: &HyperParams, threads: usize) -> EvalConfig {
    EvalConfig {
        mode: hp.mode,
        shots: hp.shots,
        mc_samples: hp.mc_test,
        seed: derive_seed(hp.seed, "validation", &[]),
        threads,
    }
}

fn relation_labels(task: &Task, pairs: &HashMap<(EntityId, EntityId), Vec<RelationId>>) -> Vec<Vec<Vec<RelationId>>> {
    task.entities
        .iter()
        .map(|te| te.query.iter().map(|q| pairs[&(q.head, q.tail)].clone()).collect())
        .collect()
}

fn add_into(acc: &mut GradientSet, g: &GradientSet, scale: f64) {
    for ((_, a), (_, b)) in acc.grads.tensors_mut().into_iter().zip(g.grads.tensors()) {
        a.add_scaled(scale, b);
    }
    acc.touched.extend(&g.touched);
}

pub fn meta_train(split: &OogSplit, init: ModelParams, hp: &HyperParams, threads: usize) -> Result<TrainOutcome> {
    hp.validate()?;
    let mut params = init;
    let mut opt = OptimizerState::new(&params.config, AdamConfig::default());
    let train_set = split.meta_set(MetaSetKind::Train);
    let eligible = train_set.entities.iter().filter(|u| u.triplets.len() >= 2).count();
    let n = hp.task_size.min(eligible);
    if hp.max_iteration > 0 && n == 0 {
        return Err(GenError::InsufficientEntities {
            eligible,
            requested: hp.task_size,
        });
    }
    if n < hp.task_size && hp.max_iteration > 0 {
        log::info!("task size clamped from {} to {n} meta-training entities", hp.task_size);
    }

    let unseen = split.unseen_mask();
    let seen = split.seen_entities();
    let known: HashSet<Triplet> = split.known_triplets(&[MetaSetKind::Train]);
    let mut pairs: HashMap<(EntityId, EntityId), Vec<RelationId>> = HashMap::new();
    if params.config.score == ScoreKind::Linear {
        let mut sorted: Vec<&Triplet> = known.iter().collect();
        sorted.sort();
        for t in sorted {
            pairs.entry((t.head, t.tail)).or_default().push(t.rel);
        }
    }

    let validate = hp.eval_every > 0 && !split.meta_set(MetaSetKind::Valid).is_empty();
    let val_cfg = validation_config(hp, threads);
    let mut best = params.clone();
    let mut best_episode = 0;
    let mut best_metric = None;
    if validate && hp.max_iteration > 0 {
        best_metric = Some(evaluate_split(&params, split, MetaSetKind::Valid, &val_cfg)?.headline()?);
    }
    let mut stale = 0;

    let mut sampler = EpisodeSampler::new(rng_for(hp.seed, "meta-train"));
    let mut log = Vec::with_capacity(hp.max_iteration);
    for episode in 1..=hp.max_iteration {
        let shots = curriculum_shots(&CurriculumState {
            iteration: episode,
            max_iteration: hp.max_iteration,
            target_shots: hp.shots,
            enabled: hp.curriculum,
        });
        let task = sampler.task(train_set, n, shots)?;
        let (negatives, labels) = if params.config.score == ScoreKind::Linear {
            (Vec::new(), relation_labels(&task, &pairs))
        } else {
            (sampler.negatives(&task, &seen, &known, hp.num_neg)?, Vec::new())
        };
        let mut ep = Episode {
            task,
            negatives,
            labels,
            noise: Noise::none(0),
        };

        let mut loss = 0.0;
        let mut grad = GradientSet::zeros_like(&params);
        let scale = 1.0 / hp.mc_train as f64;
        for _ in 0..hp.mc_train {
            ep.noise = Noise::sample(n, params.dim(), hp.dropout, hp.mode, DropoutMode::Train, sampler.rng());
            let (l, g) = episode_loss_and_grad(&params, &unseen, &ep, hp.mode, hp.margin)?;
            if hp.mc_train == 1 {
                grad = g;
                loss = l;
            } else {
                loss += scale * l;
                add_into(&mut grad, &g, scale);
            }
        }
        adam_step(&mut params, &grad, &mut opt, hp.lr);
        if let Some(name) = params.weights.first_non_finite() {
            return Err(GenError::NonFinite(format!("{name} after episode {episode}")));
        }

        let mut record = LogRecord {
            episode,
            loss,
            shots,
            val_metric: None,
        };
        if validate && episode % hp.eval_every == 0 {
            let metric = evaluate_split(&params, split, MetaSetKind::Valid, &val_cfg)?.headline()?;
            record.val_metric = Some(metric);
            log::info!("episode {episode}: loss {loss:.5}, validation {metric:.4}");
            if best_metric.is_none_or(|b| metric > b) {
                best_metric = Some(metric);
                best = params.clone();
                best_episode = episode;
                stale = 0;
            } else {
                stale += 1;
            }
        }
        log.push(record);
        if validate && stale >= hp.patience && hp.patience > 0 {
            log::info!("early stop after episode {episode}");
            break;
        }
    }

    let params = if validate && hp.max_iteration > 0 {
        best
    } else {
        best_episode = log.len();
        params
    };
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        log,
        best_episode,
        best_metric,
    })
}
