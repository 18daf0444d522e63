//! Filtered ranking and relation-classification metrics.
//!
//! Entity prediction corrupts the slot opposite the unseen entity being
//! evaluated. Candidates are every seen entity plus the unseen entities of
//! the evaluated meta-set; corrupted triplets that are known anywhere (in
//! the in-graph or any meta-set) are filtered out, the true triplet is
//! always kept. Ties are resolved by one of three rules and every report
//! carries all of them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{corruptible_slot, split_support, with_slot, Slot};
use crate::error::{GenError, Result};
use crate::graph::{EntityId, RelationId, Triplet};
use crate::linalg::sigmoid;
use crate::model::layers::{embed_task, Noise, TaskTrace};
use crate::model::score::{linear_logits, triplet_score};
use crate::model::{DropoutMode, Mode, ModelParams, ScoreKind};
use crate::rng::rng_for_indexed;
use crate::split::{MetaSetKind, OogSplit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// The true entity wins every tie.
    Optimistic,
    /// The true entity loses every tie.
    Pessimistic,
    /// Average of the two.
    Mean,
}

impl TieRule {
    pub const ALL: [TieRule; 3] = [TieRule::Optimistic, TieRule::Pessimistic, TieRule::Mean];

    pub fn name(self) -> &'static str {
        match self {
            TieRule::Optimistic => "optimistic",
            TieRule::Pessimistic => "pessimistic",
            TieRule::Mean => "mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SeenUnseen,
    UnseenUnseen,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankResult {
    pub query: Triplet,
    pub slot: Slot,
    /// Surviving candidates scoring strictly higher than the true triplet.
    pub greater: usize,
    /// Surviving candidates scoring exactly the same.
    pub ties: usize,
    pub category: Category,
}

impl RankResult {
    pub fn rank(&self, rule: TieRule) -> f64 {
        let base = 1.0 + self.greater as f64;
        match rule {
            TieRule::Optimistic => base,
            TieRule::Pessimistic => base + self.ties as f64,
            TieRule::Mean => base + self.ties as f64 / 2.0,
        }
    }
}

/// Counts candidates that beat or tie the true entity of `query` in
/// `slot`. `scorer` maps an entity placed in that slot to a score.
pub fn filtered_rank(
    query: &Triplet,
    slot: Slot,
    known: &HashSet<Triplet>,
    candidates: &[EntityId],
    unseen: &[bool],
    mut scorer: impl FnMut(EntityId) -> f64,
) -> RankResult {
    let truth = match slot {
        Slot::Head => query.head,
        Slot::Tail => query.tail,
    };
    let target = scorer(truth);
    let (mut greater, mut ties) = (0, 0);
    for &c in candidates {
        if c == truth || known.contains(&with_slot(query, slot, c)) {
            continue;
        }
        let s = scorer(c);
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    let both_unseen = unseen[query.head.index()] && unseen[query.tail.index()];
    RankResult {
        query: *query,
        slot,
        greater,
        ties,
        category: if both_unseen {
            Category::UnseenUnseen
        } else {
            Category::SeenUnseen
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
}

impl MetricSummary {
    fn from_ranks(ranks: &[f64]) -> Option<Self> {
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Some(MetricSummary {
            count: ranks.len(),
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits_at_1: hits(1.0),
            hits_at_3: hits(3.0),
            hits_at_10: hits(10.0),
        })
    }

    pub fn hits_at(&self, n: usize) -> Option<f64> {
        match n {
            1 => Some(self.hits_at_1),
            3 => Some(self.hits_at_3),
            10 => Some(self.hits_at_10),
            _ => None,
        }
    }
}

/// Totals plus per-category summaries; a category without queries is
/// `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub total: MetricSummary,
    pub seen_unseen: Option<MetricSummary>,
    pub unseen_unseen: Option<MetricSummary>,
}

pub fn aggregate(results: &[RankResult], rule: TieRule) -> Result<MetricReport> {
    let ranks = |cat: Option<Category>| -> Vec<f64> {
        results
            .iter()
            .filter(|r| cat.is_none_or(|c| r.category == c))
            .map(|r| r.rank(rule))
            .collect()
    };
    let total = MetricSummary::from_ranks(&ranks(None)).ok_or(GenError::EmptyInput("rank results"))?;
    Ok(MetricReport {
        total,
        seen_unseen: MetricSummary::from_ranks(&ranks(Some(Category::SeenUnseen))),
        unseen_unseen: MetricSummary::from_ranks(&ranks(Some(Category::UnseenUnseen))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdiReport {
    pub count: usize,
    /// `None` when every label is positive or every label is negative.
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub accuracy: f64,
}

/// ROC-AUC as the normalised Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ordered correctly, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Twice the pair count, to stay in integers.
    let (mut twice, mut neg_below) = (0u64, 0u64);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let neg = (j - i) as u64 - pos;
        twice += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Some(twice as f64 / (2 * n_pos * n_neg) as f64)
}

/// Area under the precision-recall curve as average precision, with tied
/// scores entering as one threshold.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let new_tp = idx[i..j].iter().filter(|&&k| labels[k]).count();
        tp += new_tp;
        seen += j - i;
        ap += (new_tp as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        i = j;
    }
    Some(ap)
}

/// Micro-averaged AUCs over the flattened (query × relation) matrix of
/// sigmoid scores, and argmax accuracy against `truth`.
pub fn ddi_metrics(logits: &[Vec<f64>], labels: &[Vec<bool>], truth: &[RelationId]) -> Result<DdiReport> {
    if logits.is_empty() {
        return Err(GenError::EmptyInput("relation logits"));
    }
    let scores: Vec<f64> = logits.iter().flatten().map(|&x| sigmoid(x)).collect();
    let flat: Vec<bool> = labels.iter().flatten().copied().collect();
    if scores.len() != flat.len() {
        return Err(GenError::InvalidConfig("logit and label shapes differ".into()));
    }
    let correct = logits
        .iter()
        .zip(truth)
        .filter(|(l, t)| argmax(l) == t.index())
        .count();
    Ok(DdiReport {
        count: logits.len(),
        roc_auc: roc_auc(&scores, &flat),
        pr_auc: pr_auc(&scores, &flat),
        accuracy: correct as f64 / logits.len() as f64,
    })
}

/// First index of the maximum.
fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Split evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: Mode,
    pub shots: usize,
    /// Monte Carlo samples per score in stochastic mode.
    pub mc_samples: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: Mode::Stochastic,
            shots: 3,
            mc_samples: 10,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalOutput {
    Entity(Vec<RankResult>),
    Relation {
        logits: Vec<Vec<f64>>,
        labels: Vec<Vec<bool>>,
        truth: Vec<RelationId>,
    },
}

impl EvalOutput {
    /// Mean-rule MRR for entity prediction, ROC-AUC (falling back to
    /// accuracy) for relation prediction.
    pub fn headline(&self) -> Result<f64> {
        match self {
            EvalOutput::Entity(r) => Ok(aggregate(r, TieRule::Mean)?.total.mrr),
            EvalOutput::Relation { logits, labels, truth } => {
                let rep = ddi_metrics(logits, labels, truth)?;
                Ok(rep.roc_auc.unwrap_or(rep.accuracy))
            }
        }
    }
}

struct Query {
    own: usize,
    index: usize,
    triplet: Triplet,
}

/// Evaluates one meta-set: each entity gets a seeded support of up to
/// `shots` triplets, the whole set is embedded as one task, and every
/// remaining triplet is ranked (or classified for the linear score).
pub fn evaluate_split(params: &ModelParams, split: &OogSplit, kind: MetaSetKind, cfg: &EvalConfig) -> Result<EvalOutput> {
    if cfg.mc_samples == 0 || cfg.shots == 0 {
        return Err(GenError::InvalidConfig("shots and mc_samples must be >= 1".into()));
    }
    let meta = split.meta_set(kind);
    if meta.is_empty() {
        return Err(GenError::EmptyInput("meta-set"));
    }
    let unseen = split.unseen_mask();
    let entities: Vec<EntityId> = meta.entities.iter().map(|u| u.entity).collect();
    let task: Vec<_> = meta
        .entities
        .iter()
        .map(|u| {
            let mut rng = rng_for_indexed(cfg.seed, "eval-support", &[u64::from(u.entity.0)]);
            split_support(u.entity, &u.triplets, cfg.shots, &mut rng)
        })
        .collect();
    let supports: Vec<&[Triplet]> = task.iter().map(|t| t.support.as_slice()).collect();
    let trace = embed_task(params, &unseen, &entities, &supports, cfg.mode, &Noise::none(entities.len()))?;

    let known = split.known_triplets(&MetaSetKind::ALL);
    let mut candidates = split.seen_entities();
    candidates.extend(&entities);
    candidates.sort();

    let queries: Vec<Query> = task
        .iter()
        .enumerate()
        .flat_map(|(own, te)| {
            te.query.iter().enumerate().map(move |(index, &triplet)| Query { own, index, triplet })
        })
        .collect();
    if queries.is_empty() {
        return Err(GenError::EmptyInput("evaluation queries"));
    }

    let ctx = Ctx {
        params,
        trace: &trace,
        unseen: &unseen,
        cfg,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| GenError::InvalidConfig(format!("thread pool: {e}")))?;

    if params.config.score == ScoreKind::Linear {
        let mut pair_labels: HashMap<(EntityId, EntityId), Vec<RelationId>> = HashMap::new();
        for t in &known {
            pair_labels.entry((t.head, t.tail)).or_default().push(t.rel);
        }
        let num = params.config.num_raw_relations;
        let rows: Vec<(Vec<f64>, Vec<bool>)> = pool.install(|| {
            queries
                .par_iter()
                .map(|q| {
                    let logits = ctx.relation_logits(q);
                    let mut y = vec![false; num];
                    for r in &pair_labels[&(q.triplet.head, q.triplet.tail)] {
                        y[r.index()] = true;
                    }
                    (logits, y)
                })
                .collect()
        });
        let (logits, labels) = rows.into_iter().unzip();
        let truth = queries.iter().map(|q| q.triplet.rel).collect();
        return Ok(EvalOutput::Relation { logits, labels, truth });
    }

    let ranks = pool.install(|| {
        queries
            .par_iter()
            .map(|q| ctx.rank(q, &known, &candidates))
            .collect()
    });
    Ok(EvalOutput::Entity(ranks))
}

struct Ctx<'a> {
    params: &'a ModelParams,
    trace: &'a TaskTrace,
    unseen: &'a [bool],
    cfg: &'a EvalConfig,
}

impl Ctx<'_> {
    /// Output embeddings of the query's own entity, one per Monte Carlo
    /// sample. Other task members enter with their mean output.
    fn own_samples(&self, q: &Query) -> Vec<Vec<f64>> {
        let t = &self.trace.entities[q.own];
        if self.cfg.mode != Mode::Stochastic {
            return vec![t.out.clone()];
        }
        let mut rng = rng_for_indexed(
            self.cfg.seed,
            "eval-mc",
            &[u64::from(t.entity.0), q.index as u64],
        );
        (0..self.cfg.mc_samples)
            .map(|_| t.resample_output(self.params.config.dropout, DropoutMode::McTest, &mut rng))
            .collect()
    }

    fn embedding<'b>(&'b self, q: &Query, own: &'b [f64], e: EntityId, zero: &'b [f64]) -> &'b [f64] {
        if e == self.trace.entities[q.own].entity {
            return own;
        }
        self.trace.resolve(self.params, self.unseen, q.own, e).unwrap_or(zero)
    }

    fn rank(&self, q: &Query, known: &HashSet<Triplet>, candidates: &[EntityId]) -> RankResult {
        let own_entity = self.trace.entities[q.own].entity;
        let slot = corruptible_slot(&q.triplet, own_entity);
        let samples = self.own_samples(q);
        let zero = vec![0.0; self.params.dim()];
        let kind = self.params.config.score;
        let rel = self.params.weights.relation_emb.row(q.triplet.rel.index());
        let inv = 1.0 / samples.len() as f64;
        filtered_rank(&q.triplet, slot, known, candidates, self.unseen, |c| {
            let t = with_slot(&q.triplet, slot, c);
            let mut s = 0.0;
            for own in &samples {
                let h = self.embedding(q, own, t.head, &zero);
                let tl = self.embedding(q, own, t.tail, &zero);
                s += triplet_score(kind, h, rel, tl);
            }
            if samples.len() == 1 {
                s
            } else {
                s * inv
            }
        })
    }

    fn relation_logits(&self, q: &Query) -> Vec<f64> {
        let samples = self.own_samples(q);
        let zero = vec![0.0; self.params.dim()];
        let head = self.params.weights.linear.as_ref().expect("linear head");
        let mut acc = vec![0.0; self.params.config.num_raw_relations];
        for own in &samples {
            let h = self.embedding(q, own, q.triplet.head, &zero);
            let t = self.embedding(q, own, q.triplet.tail, &zero);
            for (a, l) in acc.iter_mut().zip(linear_logits(head, h, t)) {
                *a += l;
            }
        }
        if samples.len() > 1 {
            let inv = 1.0 / samples.len() as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

pub const BUILD_ID: &str = concat!("oog-gen-v", env!("CARGO_PKG_VERSION"));

/// JSON report with every tie rule (entity prediction) or the
/// classification metrics (relation prediction), plus an echo of `config`.
pub fn report_json(output: &EvalOutput, config: serde_json::Value) -> Result<serde_json::Value> {
    let body = match output {
        EvalOutput::Entity(ranks) => {
            let mut metrics = BTreeMap::new();
            for rule in TieRule::ALL {
                metrics.insert(rule.name(), serde_json::to_value(aggregate(ranks, rule)?)?);
            }
            serde_json::json!({ "task": "entity", "queries": ranks.len(), "metrics": metrics })
        }
        EvalOutput::Relation { logits, labels, truth } => {
            let rep = ddi_metrics(logits, labels, truth)?;
            serde_json::json!({ "task": "relation", "queries": rep.count, "metrics": rep })
        }
    };
    let mut obj = body;
    obj["config"] = config;
    obj["build"] = serde_json::Value::from(BUILD_ID);
    Ok(obj)
}

/// Per-query ranks as CSV: `head,relation,tail,slot,category,optimistic,pessimistic,mean`.
pub fn write_ranks_csv(path: &Path, ranks: &[RankResult]) -> Result<()> {
    let mut s = String::from("head,relation,tail,slot,category,optimistic,pessimistic,mean\n");
    for r in ranks {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.query.head.0,
            r.query.rel.0,
            r.query.tail.0,
            match r.slot {
                Slot::Head => "head",
                Slot::Tail => "tail",
            },
            match r.category {
                Category::SeenUnseen => "seen_unseen",
                Category::UnseenUnseen => "unseen_unseen",
            },
            r.rank(TieRule::Optimistic),
            r.rank(TieRule::Pessimistic),
            r.rank(TieRule::Mean),
        ));
    }
    std::fs::write(path, s).map_err(|e| GenError::io(path, e))
}
