//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use oog_gen::episode::{Task, TaskEntity};
use oog_gen::graph::{EntityId, RelationId, Triplet};
use oog_gen::model::{DropoutMode, Mode, ModelConfig, ModelParams, Noise, ScoreKind};
use oog_gen::rng::{rng_for_indexed, GenRng};
use oog_gen::train::{episode_loss, Episode};
use rand::Rng;

pub const TOY_ENTITIES: usize = 12;
pub const TOY_RELATIONS: usize = 3;
/// Entities 0..4 are unseen; 0..3 form the task, 3 stays outside it.
pub const TOY_UNSEEN: usize = 4;

pub fn toy_config(score: ScoreKind) -> ModelConfig {
    ModelConfig {
        dim: 3,
        num_bases: 2,
        num_entities: TOY_ENTITIES,
        num_raw_relations: TOY_RELATIONS,
        inverse_relations: true,
        score,
        dropout: 0.3,
        hidden: 4,
    }
}

pub fn toy_unseen() -> Vec<bool> {
    (0..TOY_ENTITIES).map(|e| e < TOY_UNSEEN).collect()
}

fn random_triplet(own: u32, rng: &mut GenRng) -> Triplet {
    let other = rng.random_range(0..TOY_ENTITIES as u32);
    let rel = rng.random_range(0..TOY_RELATIONS as u32);
    if rng.random_bool(0.5) {
        Triplet::new(own, rel, other)
    } else {
        Triplet::new(other, rel, own)
    }
}

/// A randomized three-entity, two-shot episode with every random quantity
/// fixed: dropout masks, Gaussian noise, negatives, labels.
pub fn toy_episode(seed: u64, mode: Mode, score: ScoreKind) -> (ModelParams, Vec<bool>, Episode) {
    let mut rng = rng_for_indexed(seed, "toy-episode", &[]);
    let unseen = toy_unseen();
    let mut params = ModelParams::init(toy_config(score), &unseen, &mut rng).unwrap();
    if let Some(l) = params.weights.linear.as_mut() {
        // A zero bias puts all-zero inputs exactly on the ReLU kink.
        for b in l.b1.as_mut_slice() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let entities = (0..3u32)
        .map(|e| {
            let mut support = vec![random_triplet(e, &mut rng), random_triplet(e, &mut rng)];
            // make sure the transductive path sees another task member
            support[0] = Triplet::new(e, rng.random_range(0..TOY_RELATIONS as u32), (e + 1) % 3);
            let query = vec![random_triplet(e, &mut rng), random_triplet(e, &mut rng)];
            TaskEntity {
                entity: EntityId(e),
                support,
                query,
            }
        })
        .collect();
    let task = Task { shot_size: 2, entities };
    let negatives = task
        .entities
        .iter()
        .map(|te| {
            te.query
                .iter()
                .map(|q| {
                    (0..2)
                        .map(|_| {
                            let x = EntityId(rng.random_range(TOY_UNSEEN as u32..TOY_ENTITIES as u32));
                            oog_gen::episode::with_slot(q, oog_gen::episode::corruptible_slot(q, te.entity), x)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let labels = task
        .entities
        .iter()
        .map(|te| {
            te.query
                .iter()
                .map(|q| {
                    let mut l: HashSet<RelationId> = [q.rel].into_iter().collect();
                    if rng.random_bool(0.3) {
                        l.insert(RelationId(rng.random_range(0..TOY_RELATIONS as u32)));
                    }
                    let mut l: Vec<_> = l.into_iter().collect();
                    l.sort();
                    l
                })
                .collect()
        })
        .collect();
    let noise = Noise::sample(3, 3, 0.3, mode, DropoutMode::Train, &mut rng);
    (
        params,
        unseen,
        Episode {
            task,
            negatives,
            labels,
            noise,
        },
    )
}

/// Unit margin keeps the loss, and with it the round-off in the central
/// differences, small.
pub const TOY_MARGIN: f64 = 1.0;

/// Worst entrywise and directional disagreement between analytic and
/// central-difference gradients, as (max relative error, tensor name).
pub fn gradient_errors(params: &ModelParams, unseen: &[bool], ep: &Episode, mode: Mode, analytic: &oog_gen::model::ParamSet) -> Vec<(String, f64)> {
    const H: f64 = 1e-5;
    // Denominator floor. Round-off in the central difference is about
    // 1e-10 at h = 1e-5, so entries smaller than this are held to an
    // absolute 1e-9 instead of a relative bound.
    const FLOOR: f64 = 1e-3;
    let loss = |p: &ModelParams| episode_loss(p, unseen, ep, mode, TOY_MARGIN).unwrap();
    let names: Vec<&'static str> = params.weights.tensors().iter().map(|(n, _)| *n).collect();
    let mut out = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let a = analytic.tensors()[ti].1.as_slice().to_vec();
        let mut worst: f64 = 0.0;
        for k in 0..a.len() {
            let mut p = params.clone();
            p.weights.tensors_mut()[ti].1.as_mut_slice()[k] += H;
            let up = loss(&p);
            p.weights.tensors_mut()[ti].1.as_mut_slice()[k] -= 2.0 * H;
            let down = loss(&p);
            let num = (up - down) / (2.0 * H);
            let scale = num.abs().max(a[k].abs()).max(FLOOR);
            worst = worst.max((num - a[k]).abs() / scale);
        }
        // random-projection directional derivative
        let mut rng = rng_for_indexed(7, "direction", &[ti as u64]);
        let v: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = |p: &mut ModelParams, s: f64| {
            for (x, vi) in p.weights.tensors_mut()[ti].1.as_mut_slice().iter_mut().zip(&v) {
                *x += s * vi;
            }
        };
        let mut p = params.clone();
        shift(&mut p, H);
        let up = loss(&p);
        shift(&mut p, -2.0 * H);
        let down = loss(&p);
        let num = (up - down) / (2.0 * H);
        let ana: f64 = a.iter().zip(&v).map(|(g, v)| g * v).sum();
        let scale = num.abs().max(ana.abs()).max(FLOOR);
        worst = worst.max((num - ana).abs() / scale);
        out.push((name.to_string(), worst));
    }
    out
}
pub mod oracles;
