//! Episode sampling for meta-training: support/query tasks, negative
//! corruption, and the long-tail shot curriculum.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{GenError, Result};
use crate::graph::{EntityId, Triplet};
use crate::rng::GenRng;
use crate::split::MetaSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskEntity {
    pub entity: EntityId,
    pub support: Vec<Triplet>,
    pub query: Vec<Triplet>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub shot_size: usize,
    pub entities: Vec<TaskEntity>,
}

impl Task {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Splits one entity's triplets: a uniform subset of `min(k, M - 1)` for
/// support, the rest (order preserved) for query.
pub fn split_support<R: Rng + ?Sized>(entity: EntityId, triplets: &[Triplet], k: usize, rng: &mut R) -> TaskEntity {
    let m = triplets.len();
    let s = k.min(m.saturating_sub(1));
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    let mut in_support = vec![false; m];
    for &i in &idx[..s] {
        in_support[i] = true;
    }
    let (mut support, mut query) = (Vec::with_capacity(s), Vec::with_capacity(m - s));
    for (t, sup) in triplets.iter().zip(in_support) {
        if sup {
            support.push(*t);
        } else {
            query.push(*t);
        }
    }
    TaskEntity {
        entity,
        support,
        query,
    }
}

/// Samples `n` distinct entities (each with at least two triplets) and
/// splits each into support and query.
pub fn sample_task<R: Rng + ?Sized>(meta_set: &MetaSet, n: usize, k: usize, rng: &mut R) -> Result<Task> {
    let eligible: Vec<usize> = meta_set
        .entities
        .iter()
        .enumerate()
        .filter(|(_, u)| u.triplets.len() >= 2)
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < n || n == 0 {
        return Err(GenError::InsufficientEntities {
            eligible: eligible.len(),
            requested: n,
        });
    }
    let picks = rand::seq::index::sample(rng, eligible.len(), n);
    let entities = picks
        .into_iter()
        .map(|p| {
            let u = &meta_set.entities[eligible[p]];
            split_support(u.entity, &u.triplets, k, rng)
        })
        .collect();
    Ok(Task { shot_size: k, entities })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Head,
    Tail,
}

/// The slot opposite the task entity; the tail for self-loops.
pub fn corruptible_slot(q: &Triplet, task_entity: EntityId) -> Slot {
    if q.tail == task_entity && q.head != task_entity {
        Slot::Head
    } else {
        Slot::Tail
    }
}

pub fn with_slot(q: &Triplet, slot: Slot, e: EntityId) -> Triplet {
    match slot {
        Slot::Head => Triplet { head: e, ..*q },
        Slot::Tail => Triplet { tail: e, ..*q },
    }
}

pub const MAX_REJECTIONS: usize = 1000;

/// Corrupts the slot opposite `task_entity` with uniform draws from
/// `seen`, rejecting the original entity and known positives.
pub fn corrupt<R: Rng + ?Sized>(
    q: &Triplet,
    task_entity: EntityId,
    seen: &[EntityId],
    known: &HashSet<Triplet>,
    num_neg: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    debug_assert!(q.touches(task_entity));
    let slot = corruptible_slot(q, task_entity);
    let original = match slot {
        Slot::Head => q.head,
        Slot::Tail => q.tail,
    };
    let mut out = Vec::with_capacity(num_neg);
    for _ in 0..num_neg {
        let mut found = None;
        for _ in 0..MAX_REJECTIONS {
            if seen.is_empty() {
                break;
            }
            let x = seen[rng.random_range(0..seen.len())];
            let cand = with_slot(q, slot, x);
            if x != original && !known.contains(&cand) {
                found = Some(cand);
                break;
            }
        }
        match found {
            Some(c) => out.push(c),
            None => {
                return Err(GenError::NegativeSamplingExhausted {
                    attempts: MAX_REJECTIONS,
                    context: format!("query {q}"),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumState {
    /// 1-based iteration counter.
    pub iteration: usize,
    pub max_iteration: usize,
    pub target_shots: usize,
    pub enabled: bool,
}

/// Shot size for the current iteration: `floor(log2(max / i)) + K` when
/// enabled, `K` otherwise.
pub fn curriculum_shots(c: &CurriculumState) -> usize {
    if !c.enabled || c.iteration == 0 || c.iteration >= c.max_iteration {
        return c.target_shots;
    }
    // Largest m with i * 2^m <= max.
    let (i, max) = (c.iteration as u128, c.max_iteration as u128);
    let mut m = 0usize;
    while i << (m + 1) <= max {
        m += 1;
    }
    m + c.target_shots
}

/// Private-RNG sampler; one per worker.
pub struct EpisodeSampler {
    rng: GenRng,
}

impl EpisodeSampler {
    pub fn new(rng: GenRng) -> Self {
        EpisodeSampler { rng }
    }

    pub fn rng(&mut self) -> &mut GenRng {
        &mut self.rng
    }

    pub fn task(&mut self, meta_set: &MetaSet, n: usize, k: usize) -> Result<Task> {
        sample_task(meta_set, n, k, &mut self.rng)
    }

    /// Negatives for every query triplet of every task entity, in task order.
    pub fn negatives(
        &mut self,
        task: &Task,
        seen: &[EntityId],
        known: &HashSet<Triplet>,
        num_neg: usize,
    ) -> Result<Vec<Vec<Vec<Triplet>>>> {
        task.entities
            .iter()
            .map(|te| {
                te.query
                    .iter()
                    .map(|q| corrupt(q, te.entity, seen, known, num_neg, &mut self.rng))
                    .collect()
            })
            .collect()
    }
}
