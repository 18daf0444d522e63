//! Embedding layers for unseen entities.
//!
//! The inductive layer averages `W_r · [r ; x_e]` over the support
//! neighbourhood, with every unseen neighbour entering as a zero vector.
//! The transductive heads repeat the aggregation with their own weights,
//! let neighbours that belong to the current task contribute their
//! inductive embedding, and add a self-connection `W_0 · φ_i`. The σ head
//! is made positive with `softplus(x) + 1e-4`.
//!
//! Support entries are sorted before accumulation so the output does not
//! depend on support order, bit for bit.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{GenError, Result};
use crate::graph::{Direction, EntityId, RelationId, Triplet};
use crate::linalg::{axpy, softplus, Matrix};
use crate::model::params::{BasisBlock, ModelParams, TransBlock};
use crate::model::score::triplet_score;
use crate::model::{DropoutMode, Mode, ScoreKind};

pub const SIGMA_FLOOR: f64 = 1e-4;

pub fn sigma_activation(x: f64) -> f64 {
    softplus(x) + SIGMA_FLOOR
}

/// A support triplet seen from its unseen entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SupportEntry {
    /// Relation as stored in the triplet (never an inverse id).
    pub relation: RelationId,
    pub neighbor: EntityId,
    pub direction: Direction,
}

impl SupportEntry {
    /// Incoming entries use the inverse relation when inverses exist.
    pub fn effective_relation(&self, num_raw: usize, inverse: bool) -> RelationId {
        match self.direction {
            Direction::Incoming if inverse => self.relation.inverse(num_raw),
            _ => self.relation,
        }
    }
}

/// Canonically ordered support entries of `entity`. Self-loops count as
/// outgoing.
pub fn support_entries(entity: EntityId, support: &[Triplet]) -> Vec<SupportEntry> {
    let mut out: Vec<SupportEntry> = support
        .iter()
        .map(|t| {
            if t.head == entity {
                SupportEntry {
                    relation: t.rel,
                    neighbor: t.tail,
                    direction: Direction::Outgoing,
                }
            } else {
                SupportEntry {
                    relation: t.rel,
                    neighbor: t.head,
                    direction: Direction::Incoming,
                }
            }
        })
        .collect();
    out.sort();
    out
}

/// `(1/K) Σ W_r [r_emb ; x]` over `entries`, where `lookup` returns the
/// neighbour vector or `None` for a zero vector.
fn aggregate<'w, 'a, W, L>(
    dim: usize,
    weight: W,
    relation_emb: &Matrix,
    entries: &[(RelationId, EntityId)],
    lookup: L,
) -> Result<Vec<f64>>
where
    W: Fn(RelationId) -> &'w Matrix,
    L: Fn(EntityId) -> Option<&'a [f64]>,
{
    if entries.is_empty() {
        return Err(GenError::EmptySupport);
    }
    let mut out = vec![0.0; dim];
    let mut c = vec![0.0; 2 * dim];
    let inv_k = 1.0 / entries.len() as f64;
    for &(r, e) in entries {
        c[..dim].copy_from_slice(relation_emb.row(r.index()));
        match lookup(e) {
            Some(x) => c[dim..].copy_from_slice(x),
            None => c[dim..].fill(0.0),
        }
        let y = weight(r).matvec(&c);
        axpy(inv_k, &y, &mut out);
    }
    Ok(out)
}

fn effective_entries(params: &ModelParams, entries: &[SupportEntry]) -> Vec<(RelationId, EntityId)> {
    let cfg = &params.config;
    entries
        .iter()
        .map(|s| (s.effective_relation(cfg.num_raw_relations, cfg.inverse_relations), s.neighbor))
        .collect()
}

fn weights_for(block: &BasisBlock, rels: impl IntoIterator<Item = RelationId>) -> HashMap<RelationId, Matrix> {
    rels.into_iter().map(|r| (r, block.effective_weight(r))).collect()
}

/// Inductive embedding of one unseen entity. `lookup` gives seen-neighbour
/// embeddings and `None` for unseen neighbours.
pub fn inductive_embed<'a>(
    params: &'a ModelParams,
    entries: &[SupportEntry],
    lookup: impl Fn(EntityId) -> Option<&'a [f64]>,
) -> Result<Vec<f64>> {
    let eff = effective_entries(params, entries);
    let w = weights_for(&params.weights.inductive, eff.iter().map(|e| e.0));
    aggregate(params.dim(), |r| &w[&r], &params.weights.relation_emb, &eff, lookup)
}

/// Raw output of one transductive head for entity `i`: aggregation with
/// that head's weights plus `W_0 · φ_i`. `lookup` should return inductive
/// embeddings for unseen task members. Apply [`sigma_activation`] to the
/// σ head's output.
pub fn transductive_embed<'a>(
    params: &'a ModelParams,
    head: &TransBlock,
    entries: &[SupportEntry],
    lookup: impl Fn(EntityId) -> Option<&'a [f64]>,
    phi_i: &[f64],
) -> Result<Vec<f64>> {
    let eff = effective_entries(params, entries);
    let w = weights_for(&head.basis, eff.iter().map(|e| e.0));
    let mut out = aggregate(params.dim(), |r| &w[&r], &params.weights.relation_emb, &eff, lookup)?;
    let self_term = head.self_weight.matvec(phi_i);
    axpy(1.0, &self_term, &mut out);
    Ok(out)
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 − rate)`. `None` means
/// identity.
pub fn dropout_mask<R: Rng + ?Sized>(dim: usize, rate: f64, mode: DropoutMode, rng: &mut R) -> Option<Vec<f64>> {
    if mode == DropoutMode::Off || rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let u = Uniform::new(0.0, 1.0).expect("unit interval");
    Some((0..dim).map(|_| if u.sample(rng) < rate { 0.0 } else { keep }).collect())
}

pub fn apply_dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, mode: DropoutMode, rng: &mut R) -> Vec<f64> {
    match dropout_mask(x.len(), rate, mode, rng) {
        Some(m) => x.iter().zip(&m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

fn masked(x: &[f64], mask: &Option<Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Reparameterised draw `μ + σ ⊙ z`, `z ~ N(0, I)`.
pub fn sample_embedding<R: Rng + ?Sized>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Vec<f64> {
    let z = standard_normal(mu.len(), rng);
    mu.iter().zip(sigma).zip(&z).map(|((m, s), z)| m + s * z).collect()
}

/// An embedding that is either fixed or drawn per Monte Carlo sample.
#[derive(Clone, Copy, Debug)]
pub enum EmbeddingDist<'a> {
    Fixed(&'a [f64]),
    Gaussian { mu: &'a [f64], sigma: &'a [f64] },
}

impl EmbeddingDist<'_> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            EmbeddingDist::Fixed(x) => x.to_vec(),
            EmbeddingDist::Gaussian { mu, sigma } => sample_embedding(mu, sigma, rng),
        }
    }
}

/// Monte Carlo score: the mean over `samples` independent draws.
pub fn stochastic_score<R: Rng + ?Sized>(
    kind: ScoreKind,
    head: EmbeddingDist<'_>,
    relation: &[f64],
    tail: EmbeddingDist<'_>,
    samples: usize,
    rng: &mut R,
) -> f64 {
    assert!(samples >= 1, "at least one Monte Carlo sample");
    let mut total = 0.0;
    for _ in 0..samples {
        let h = head.draw(rng);
        let t = tail.draw(rng);
        total += triplet_score(kind, &h, relation, &t);
    }
    total / samples as f64
}

// ---------------------------------------------------------------------------
// Task-level forward pass
// ---------------------------------------------------------------------------

/// What a support neighbour contributes as its entity half.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborRef {
    /// Seen entity: its embedding row (a parameter).
    Seen(EntityId),
    /// Member `j` of the current task: zero inductively, `φ_j`
    /// transductively.
    Task(usize),
    /// Unseen entity outside the task: always zero.
    Zero,
}

/// Per-entity randomness for one pass: dropout masks and Gaussian noise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntityNoise {
    pub phi: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Noise {
    pub entities: Vec<EntityNoise>,
}

impl Noise {
    /// No dropout, `z = 0`.
    pub fn none(n: usize) -> Self {
        Noise {
            entities: vec![EntityNoise::default(); n],
        }
    }

    /// Draws masks (and `z` in stochastic mode) for `n` task entities.
    pub fn sample<R: Rng + ?Sized>(n: usize, dim: usize, rate: f64, mode: Mode, dropout: DropoutMode, rng: &mut R) -> Self {
        let entities = (0..n)
            .map(|_| {
                let phi = dropout_mask(dim, rate, dropout, rng);
                let (mu, sigma, z) = match mode {
                    Mode::Inductive => (None, None, None),
                    Mode::Transductive => (dropout_mask(dim, rate, dropout, rng), None, None),
                    Mode::Stochastic => (
                        dropout_mask(dim, rate, dropout, rng),
                        dropout_mask(dim, rate, dropout, rng),
                        Some(standard_normal(dim, rng)),
                    ),
                };
                EntityNoise { phi, mu, sigma, z }
            })
            .collect();
        Noise { entities }
    }
}

/// Forward values for one task entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityTrace {
    pub entity: EntityId,
    /// (effective relation, neighbour), canonical order.
    pub entries: Vec<(RelationId, NeighborRef)>,
    /// Inductive aggregation before dropout.
    pub agg: Vec<f64>,
    pub phi: Vec<f64>,
    /// Transductive head outputs before dropout.
    pub mu_pre: Vec<f64>,
    pub sigma_pre: Vec<f64>,
    pub mu: Vec<f64>,
    /// σ head after dropout, before the softplus.
    pub sigma_in: Vec<f64>,
    pub sigma: Vec<f64>,
    /// The embedding used for scoring.
    pub out: Vec<f64>,
}

impl EntityTrace {
    /// A fresh Monte Carlo draw of the output: new dropout masks on both
    /// transductive heads and a new Gaussian sample.
    pub fn resample_output<R: Rng + ?Sized>(&self, rate: f64, dropout: DropoutMode, rng: &mut R) -> Vec<f64> {
        let d = self.mu_pre.len();
        let mu = masked(&self.mu_pre, &dropout_mask(d, rate, dropout, rng));
        let sig_in = masked(&self.sigma_pre, &dropout_mask(d, rate, dropout, rng));
        let z = standard_normal(d, rng);
        (0..d).map(|k| mu[k] + sigma_activation(sig_in[k]) * z[k]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TaskTrace {
    pub mode: Mode,
    pub entities: Vec<EntityTrace>,
    pub index: HashMap<EntityId, usize>,
    pub inductive_w: HashMap<RelationId, Matrix>,
    pub mu_w: HashMap<RelationId, Matrix>,
    pub sigma_w: HashMap<RelationId, Matrix>,
}

impl TaskTrace {
    /// Embedding of `e` for scoring, seen from task member `own`: the
    /// member's own output, another member's output (transductive only),
    /// a seen embedding, or `None` for zero.
    pub fn resolve<'a>(&'a self, params: &'a ModelParams, unseen: &[bool], own: usize, e: EntityId) -> Option<&'a [f64]> {
        if self.entities[own].entity == e {
            return Some(&self.entities[own].out);
        }
        if !unseen[e.index()] {
            return Some(params.weights.entity_emb.row(e.index()));
        }
        match self.index.get(&e) {
            Some(&j) if self.mode.is_transductive() => Some(&self.entities[j].out),
            _ => None,
        }
    }
}

/// Runs the embedding layers for every entity of a task.
///
/// `supports[i]` is the support set of `entities[i]`; `unseen` masks the
/// entities whose embedding rows are fixed at zero.
pub fn embed_task(
    params: &ModelParams,
    unseen: &[bool],
    entities: &[EntityId],
    supports: &[&[Triplet]],
    mode: Mode,
    noise: &Noise,
) -> Result<TaskTrace> {
    let d = params.dim();
    let w = &params.weights;
    let cfg = &params.config;
    let index: HashMap<EntityId, usize> = entities.iter().enumerate().map(|(i, &e)| (e, i)).collect();

    let mut all_entries = Vec::with_capacity(entities.len());
    let mut rels = BTreeSet::new();
    for (&e, support) in entities.iter().zip(supports) {
        let entries: Vec<(RelationId, NeighborRef)> = support_entries(e, support)
            .into_iter()
            .map(|s| {
                let r = s.effective_relation(cfg.num_raw_relations, cfg.inverse_relations);
                let n = if !unseen[s.neighbor.index()] {
                    NeighborRef::Seen(s.neighbor)
                } else if let Some(&j) = index.get(&s.neighbor) {
                    NeighborRef::Task(j)
                } else {
                    NeighborRef::Zero
                };
                rels.insert(r);
                (r, n)
            })
            .collect();
        if entries.is_empty() {
            return Err(GenError::EmptySupport);
        }
        all_entries.push(entries);
    }

    let inductive_w = weights_for(&w.inductive, rels.iter().copied());
    let (mu_w, sigma_w) = match mode {
        Mode::Inductive => (HashMap::new(), HashMap::new()),
        Mode::Transductive => (weights_for(&w.trans_mu.basis, rels.iter().copied()), HashMap::new()),
        Mode::Stochastic => (
            weights_for(&w.trans_mu.basis, rels.iter().copied()),
            weights_for(&w.trans_sigma.basis, rels.iter().copied()),
        ),
    };

    let seen_lookup = |n: NeighborRef| match n {
        NeighborRef::Seen(e) => Some(w.entity_emb.row(e.index())),
        _ => None,
    };

    let mut traces: Vec<EntityTrace> = Vec::with_capacity(entities.len());
    for (i, entries) in all_entries.into_iter().enumerate() {
        let agg = aggregate_refs(d, &inductive_w, &w.relation_emb, &entries, seen_lookup);
        let phi = masked(&agg, &noise.entities[i].phi);
        traces.push(EntityTrace {
            entity: entities[i],
            entries,
            agg,
            out: phi.clone(),
            phi,
            mu_pre: Vec::new(),
            sigma_pre: Vec::new(),
            mu: Vec::new(),
            sigma_in: Vec::new(),
            sigma: Vec::new(),
        });
    }

    if mode.is_transductive() {
        let phis: Vec<Vec<f64>> = traces.iter().map(|t| t.phi.clone()).collect();
        let trans_lookup = |n: NeighborRef| match n {
            NeighborRef::Seen(e) => Some(w.entity_emb.row(e.index())),
            NeighborRef::Task(j) => Some(phis[j].as_slice()),
            NeighborRef::Zero => None,
        };
        for (i, t) in traces.iter_mut().enumerate() {
            let nz = &noise.entities[i];
            let mut mu_pre = aggregate_refs(d, &mu_w, &w.relation_emb, &t.entries, trans_lookup);
            axpy(1.0, &w.trans_mu.self_weight.matvec(&t.phi), &mut mu_pre);
            t.mu = masked(&mu_pre, &nz.mu);
            t.mu_pre = mu_pre;
            if mode == Mode::Stochastic {
                let mut sigma_pre = aggregate_refs(d, &sigma_w, &w.relation_emb, &t.entries, trans_lookup);
                axpy(1.0, &w.trans_sigma.self_weight.matvec(&t.phi), &mut sigma_pre);
                t.sigma_in = masked(&sigma_pre, &nz.sigma);
                t.sigma = t.sigma_in.iter().map(|&x| sigma_activation(x)).collect();
                t.sigma_pre = sigma_pre;
                t.out = match &nz.z {
                    Some(z) => (0..d).map(|k| t.mu[k] + t.sigma[k] * z[k]).collect(),
                    None => t.mu.clone(),
                };
            } else {
                t.out = t.mu.clone();
            }
        }
    }

    Ok(TaskTrace {
        mode,
        entities: traces,
        index,
        inductive_w,
        mu_w,
        sigma_w,
    })
}

fn aggregate_refs<'a>(
    dim: usize,
    weights: &HashMap<RelationId, Matrix>,
    relation_emb: &Matrix,
    entries: &[(RelationId, NeighborRef)],
    lookup: impl Fn(NeighborRef) -> Option<&'a [f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let mut c = vec![0.0; 2 * dim];
    let inv_k = 1.0 / entries.len() as f64;
    for &(r, n) in entries {
        c[..dim].copy_from_slice(relation_emb.row(r.index()));
        match lookup(n) {
            Some(x) => c[dim..].copy_from_slice(x),
            None => c[dim..].fill(0.0),
        }
        let y = weights[&r].matvec(&c);
        axpy(inv_k, &y, &mut out);
    }
    out
}
