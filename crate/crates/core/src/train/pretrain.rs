//! Embedding pretraining on the in-graph.
//!
//! Trains entity and relation embeddings with the margin loss and uniform
//! corruption over seen entities. When the model reserves inverse relation
//! ids, every in-graph triplet is also presented reversed so the inverse
//! relations get embeddings before meta-training. The linear relation head
//! has no margin form, so its embeddings are pretrained with DistMult.

use std::collections::HashSet;

use rand::Rng;

use crate::episode::{with_slot, Slot, MAX_REJECTIONS};
use crate::error::{GenError, Result};
use crate::graph::{EntityId, Triplet};
use crate::model::score::{triplet_score, triplet_score_backward};
use crate::model::{ModelParams, ScoreKind};
use crate::rng::{rng_for, GenRng};
use crate::split::OogSplit;
use crate::train::adam::{adam_step_embeddings, AdamConfig, OptimizerState};
use crate::train::grad::GradientSet;
use crate::train::loss::hinge_term;
use crate::train::HyperParams;

/// Evaluation batch size for the recorded loss curve.
const EVAL_BATCH: usize = 512;
/// Number of loss evaluations after the initial one.
const EVALUATIONS: usize = 10;

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    /// Margin loss on a fixed batch of (positive, negative) pairs, at step
    /// 0 and then at evenly spaced steps.
    pub losses: Vec<f64>,
}

fn negative(t: &Triplet, seen: &[EntityId], known: &HashSet<Triplet>, rng: &mut GenRng) -> Option<Triplet> {
    for _ in 0..MAX_REJECTIONS {
        let slot = if rng.random_bool(0.5) { Slot::Head } else { Slot::Tail };
        let e = seen[rng.random_range(0..seen.len())];
        let c = with_slot(t, slot, e);
        if !known.contains(&c) {
            return Some(c);
        }
    }
    None
}

fn pair_loss(params: &ModelParams, kind: ScoreKind, pos: &Triplet, neg: &Triplet, margin: f64) -> f64 {
    let w = &params.weights;
    let s = |t: &Triplet| {
        triplet_score(
            kind,
            w.entity_emb.row(t.head.index()),
            w.relation_emb.row(t.rel.index()),
            w.entity_emb.row(t.tail.index()),
        )
    };
    hinge_term(s(pos), s(neg), margin)
}

fn accumulate(params: &ModelParams, kind: ScoreKind, t: &Triplet, upstream: f64, g: &mut GradientSet) {
    let w = &params.weights;
    let d = params.dim();
    let (mut dh, mut dr, mut dt) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    triplet_score_backward(
        kind,
        w.entity_emb.row(t.head.index()),
        w.relation_emb.row(t.rel.index()),
        w.entity_emb.row(t.tail.index()),
        upstream,
        &mut dh,
        &mut dr,
        &mut dt,
    );
    crate::linalg::axpy(1.0, &dh, g.grads.entity_emb.row_mut(t.head.index()));
    crate::linalg::axpy(1.0, &dt, g.grads.entity_emb.row_mut(t.tail.index()));
    crate::linalg::axpy(1.0, &dr, g.grads.relation_emb.row_mut(t.rel.index()));
    g.touched.insert(t.head);
    g.touched.insert(t.tail);
}

pub fn pretrain_in_graph(split: &OogSplit, mut params: ModelParams, hp: &HyperParams) -> Result<PretrainOutcome> {
    let kind = match hp.score {
        ScoreKind::Linear => ScoreKind::DistMult,
        k => k,
    };
    let raw = split.num_raw_relations();
    let mut triplets: Vec<Triplet> = split.in_graph.raw_triplets().copied().collect();
    if triplets.is_empty() {
        return Err(GenError::EmptyInput("in-graph"));
    }
    if params.config.inverse_relations {
        let inv: Vec<Triplet> = triplets
            .iter()
            .map(|t| Triplet {
                head: t.tail,
                rel: t.rel.inverse(raw),
                tail: t.head,
            })
            .collect();
        triplets.extend(inv);
    }
    let known: HashSet<Triplet> = triplets.iter().copied().collect();
    let seen = split.seen_entities();

    let mut eval_rng = rng_for(hp.seed, "pretrain-eval");
    let eval_pairs: Vec<(Triplet, Triplet)> = (0..EVAL_BATCH.min(triplets.len()))
        .filter_map(|_| {
            let t = triplets[eval_rng.random_range(0..triplets.len())];
            negative(&t, &seen, &known, &mut eval_rng).map(|n| (t, n))
        })
        .collect();
    let eval_loss = |p: &ModelParams| {
        eval_pairs.iter().map(|(a, b)| pair_loss(p, kind, a, b, hp.margin)).sum::<f64>() / eval_pairs.len().max(1) as f64
    };

    let mut losses = vec![eval_loss(&params)];
    if hp.pretrain_steps == 0 {
        return Ok(PretrainOutcome { params, losses });
    }
    let every = (hp.pretrain_steps / EVALUATIONS).max(1);
    let mut rng = rng_for(hp.seed, "pretrain");
    let mut opt = OptimizerState::new(&params.config, AdamConfig::default());
    let batch = hp.pretrain_batch.max(1);
    for step in 1..=hp.pretrain_steps {
        let mut g = GradientSet::zeros_like(&params);
        let mut loss = 0.0;
        let norm = 1.0 / batch as f64;
        for _ in 0..batch {
            let pos = triplets[rng.random_range(0..triplets.len())];
            let Some(neg) = negative(&pos, &seen, &known, &mut rng) else {
                continue;
            };
            let term = pair_loss(&params, kind, &pos, &neg, hp.margin);
            if term > 0.0 {
                loss += norm * term;
                accumulate(&params, kind, &pos, -norm, &mut g);
                accumulate(&params, kind, &neg, norm, &mut g);
            }
        }
        if !loss.is_finite() {
            return Err(GenError::NonFinite(format!("pretraining loss at step {step}")));
        }
        adam_step_embeddings(&mut params, &g, &mut opt, hp.lr);
        if step % every == 0 {
            let l = eval_loss(&params);
            log::debug!("pretrain step {step}: loss {l:.6}");
            losses.push(l);
        }
    }
    if let Some(name) = params.weights.first_non_finite() {
        return Err(GenError::NonFinite(format!("{name} after pretraining")));
    }
    Ok(PretrainOutcome { params, losses })
}
