//! Exact gradients of the episode loss.
//!
//! The forward pass records every intermediate vector (see
//! [`TaskTrace`]); the backward pass below applies hand-derived adjoints in
//! reverse order: score functions and losses, the reparameterised sample
//! `μ + σ ⊙ z` (with `z` held fixed), both transductive heads, the inductive
//! layer, and finally the basis decomposition. Dropout masks and `z` live in
//! the episode, so the loss is a deterministic function of the parameters
//! and can be checked against finite differences.

use std::collections::{BTreeMap, BTreeSet};

use crate::episode::Task;
use crate::error::{GenError, Result};
use crate::graph::{EntityId, RelationId, Triplet};
use crate::linalg::{axpy, sigmoid, Matrix};
use crate::model::layers::{embed_task, NeighborRef, Noise, TaskTrace};
use crate::model::params::{BasisBlock, ModelParams, ParamSet, TransBlock};
use crate::model::score::{linear_backward, linear_forward, triplet_score, triplet_score_backward};
use crate::model::{Mode, ScoreKind};
use crate::train::loss::{bce_grad, bce_loss, hinge_term};

/// One sampled training episode with all of its randomness fixed.
#[derive(Clone, Debug)]
pub struct Episode {
    pub task: Task,
    /// Margin loss: `negatives[i][q]` corrupts query `q` of task entity `i`.
    pub negatives: Vec<Vec<Vec<Triplet>>>,
    /// BCE loss: `labels[i][q]` lists every raw relation known between the
    /// endpoints of query `q` of task entity `i`.
    pub labels: Vec<Vec<Vec<RelationId>>>,
    pub noise: Noise,
}

/// Gradient buffer shaped like the parameters, plus the set of entity rows
/// that received gradient.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub grads: ParamSet,
    pub touched: BTreeSet<EntityId>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            grads: ParamSet::zeros(&params.config),
            touched: BTreeSet::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.grads.tensors().iter().all(|(_, m)| m.as_slice().iter().all(|&x| x == 0.0))
    }
}

pub fn episode_loss(params: &ModelParams, unseen: &[bool], ep: &Episode, mode: Mode, margin: f64) -> Result<f64> {
    run(params, unseen, ep, mode, margin, false).map(|(l, _)| l)
}

pub fn episode_loss_and_grad(
    params: &ModelParams,
    unseen: &[bool],
    ep: &Episode,
    mode: Mode,
    margin: f64,
) -> Result<(f64, GradientSet)> {
    let (loss, grad) = run(params, unseen, ep, mode, margin, true)?;
    let grad = grad.expect("gradient requested");
    if let Some(name) = grad.grads.first_non_finite() {
        return Err(GenError::NonFinite(format!("gradient of {name}")));
    }
    if !loss.is_finite() {
        return Err(GenError::NonFinite("episode loss".into()));
    }
    Ok((loss, grad))
}

#[derive(Clone, Copy)]
enum Src {
    Out(usize),
    Seen(EntityId),
    Zero,
}

fn source(trace: &TaskTrace, unseen: &[bool], own: usize, e: EntityId) -> Src {
    if trace.entities[own].entity == e {
        return Src::Out(own);
    }
    if !unseen[e.index()] {
        return Src::Seen(e);
    }
    match trace.index.get(&e) {
        Some(&j) if trace.mode.is_transductive() => Src::Out(j),
        _ => Src::Zero,
    }
}

struct Backward<'a> {
    grad: GradientSet,
    dout: Vec<Vec<f64>>,
    params: &'a ModelParams,
}

impl Backward<'_> {
    fn route(&mut self, src: Src, g: &[f64]) {
        match src {
            Src::Out(j) => axpy(1.0, g, &mut self.dout[j]),
            Src::Seen(e) => {
                axpy(1.0, g, self.grad.grads.entity_emb.row_mut(e.index()));
                self.grad.touched.insert(e);
            }
            Src::Zero => {}
        }
    }

    fn relation(&mut self, r: RelationId, g: &[f64]) {
        axpy(1.0, g, self.grad.grads.relation_emb.row_mut(r.index()));
    }
}

fn run(
    params: &ModelParams,
    unseen: &[bool],
    ep: &Episode,
    mode: Mode,
    margin: f64,
    want_grad: bool,
) -> Result<(f64, Option<GradientSet>)> {
    let d = params.dim();
    let task = &ep.task;
    let n = task.entities.len();
    if n == 0 {
        return Err(GenError::EmptyInput("task"));
    }
    let entities: Vec<EntityId> = task.entities.iter().map(|t| t.entity).collect();
    let supports: Vec<&[Triplet]> = task.entities.iter().map(|t| t.support.as_slice()).collect();
    let trace = embed_task(params, unseen, &entities, &supports, mode, &ep.noise)?;

    let zero = vec![0.0; d];
    let w = &params.weights;
    let vec_of = |s: Src| -> &[f64] {
        match s {
            Src::Out(j) => &trace.entities[j].out,
            Src::Seen(e) => w.entity_emb.row(e.index()),
            Src::Zero => &zero,
        }
    };

    let mut bw = want_grad.then(|| Backward {
        grad: GradientSet::zeros_like(params),
        dout: vec![vec![0.0; d]; n],
        params,
    });
    let mut loss = 0.0;
    let kind = params.config.score;

    for (i, te) in task.entities.iter().enumerate() {
        let nq = te.query.len();
        if nq == 0 {
            continue;
        }
        for (qi, q) in te.query.iter().enumerate() {
            let (sh, st) = (source(&trace, unseen, i, q.head), source(&trace, unseen, i, q.tail));
            match kind {
                ScoreKind::Linear => {
                    let head = w.linear.as_ref().expect("linear head");
                    let tr = linear_forward(head, vec_of(sh), vec_of(st));
                    let mut y = vec![0.0; params.config.num_raw_relations];
                    for r in &ep.labels[i][qi] {
                        y[r.index()] = 1.0;
                    }
                    let norm = 1.0 / (n * nq) as f64;
                    loss += norm * bce_loss(&tr.logits, &y);
                    if let Some(bw) = bw.as_mut() {
                        let mut dl = bce_grad(&tr.logits, &y);
                        dl.iter_mut().for_each(|x| *x *= norm);
                        let (mut dh, mut dt) = (vec![0.0; d], vec![0.0; d]);
                        let gl = bw.grad.grads.linear.as_mut().expect("linear grad");
                        linear_backward(head, &tr, &dl, gl, &mut dh, &mut dt);
                        bw.route(sh, &dh);
                        bw.route(st, &dt);
                    }
                }
                _ => {
                    let negs = &ep.negatives[i][qi];
                    if negs.is_empty() {
                        continue;
                    }
                    let norm = 1.0 / (n * nq * negs.len()) as f64;
                    let rv = w.relation_emb.row(q.rel.index());
                    let s_pos = triplet_score(kind, vec_of(sh), rv, vec_of(st));
                    let mut pos_up = 0.0;
                    for neg in negs {
                        let (nh, nt) = (source(&trace, unseen, i, neg.head), source(&trace, unseen, i, neg.tail));
                        let s_neg = triplet_score(kind, vec_of(nh), rv, vec_of(nt));
                        let term = hinge_term(s_pos, s_neg, margin);
                        if term <= 0.0 {
                            continue;
                        }
                        loss += norm * term;
                        if let Some(bw) = bw.as_mut() {
                            pos_up -= norm;
                            let (mut dh, mut dr, mut dt) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                            triplet_score_backward(kind, vec_of(nh), rv, vec_of(nt), norm, &mut dh, &mut dr, &mut dt);
                            bw.route(nh, &dh);
                            bw.relation(neg.rel, &dr);
                            bw.route(nt, &dt);
                        }
                    }
                    if let Some(bw) = bw.as_mut() {
                        if pos_up != 0.0 {
                            let (mut dh, mut dr, mut dt) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                            triplet_score_backward(kind, vec_of(sh), rv, vec_of(st), pos_up, &mut dh, &mut dr, &mut dt);
                            bw.route(sh, &dh);
                            bw.relation(q.rel, &dr);
                            bw.route(st, &dt);
                        }
                    }
                }
            }
        }
    }

    let grad = bw.map(|bw| backprop_layers(bw, &trace, &ep.noise));
    Ok((loss, grad))
}

type WeightGrads = BTreeMap<RelationId, Matrix>;

fn backprop_layers(mut bw: Backward<'_>, trace: &TaskTrace, noise: &Noise) -> GradientSet {
    let params = bw.params;
    let w = &params.weights;
    let d = params.dim();
    let n = trace.entities.len();
    let mut dphi = vec![vec![0.0; d]; n];
    let mut ind_dw = WeightGrads::new();
    let mut mu_dw = WeightGrads::new();
    let mut sigma_dw = WeightGrads::new();

    if trace.mode.is_transductive() {
        for i in 0..n {
            let t = &trace.entities[i];
            let nz = &noise.entities[i];
            let dout = bw.dout[i].clone();
            let dmu_pre = mask_grad(&dout, &nz.mu);
            head_backward(
                &mut bw,
                trace,
                i,
                &w.trans_mu,
                &trace.mu_w,
                &dmu_pre,
                |g| &mut g.trans_mu,
                &mut mu_dw,
                &mut dphi,
            );
            if trace.mode == crate::model::Mode::Stochastic {
                if let Some(z) = &nz.z {
                    let dsig_in: Vec<f64> = (0..d).map(|k| dout[k] * z[k] * sigmoid(t.sigma_in[k])).collect();
                    let dsig_pre = mask_grad(&dsig_in, &nz.sigma);
                    head_backward(
                        &mut bw,
                        trace,
                        i,
                        &w.trans_sigma,
                        &trace.sigma_w,
                        &dsig_pre,
                        |g| &mut g.trans_sigma,
                        &mut sigma_dw,
                        &mut dphi,
                    );
                }
            }
        }
    } else {
        dphi.clone_from(&bw.dout);
    }

    let mut c = vec![0.0; 2 * d];
    for (i, t) in trace.entities.iter().enumerate() {
        let dagg = mask_grad(&dphi[i], &noise.entities[i].phi);
        if dagg.iter().all(|&x| x == 0.0) {
            continue;
        }
        let inv_k = 1.0 / t.entries.len() as f64;
        for &(r, nb) in &t.entries {
            c[..d].copy_from_slice(w.relation_emb.row(r.index()));
            match nb {
                NeighborRef::Seen(e) => c[d..].copy_from_slice(w.entity_emb.row(e.index())),
                _ => c[d..].fill(0.0),
            }
            ind_dw.entry(r).or_insert_with(|| Matrix::zeros(d, 2 * d)).add_outer(inv_k, &dagg, &c);
            let mut dc = vec![0.0; 2 * d];
            trace.inductive_w[&r].matvec_t_acc(&dagg, inv_k, &mut dc);
            bw.relation(r, &dc[..d]);
            if let NeighborRef::Seen(e) = nb {
                bw.route(Src::Seen(e), &dc[d..]);
            }
        }
    }

    let mut grad = bw.grad;
    pull_back(&w.inductive, &ind_dw, &mut grad.grads.inductive);
    pull_back(&w.trans_mu.basis, &mu_dw, &mut grad.grads.trans_mu.basis);
    pull_back(&w.trans_sigma.basis, &sigma_dw, &mut grad.grads.trans_sigma.basis);
    grad
}

fn mask_grad(g: &[f64], mask: &Option<Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => g.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => g.to_vec(),
    }
}

#[allow(clippy::too_many_arguments)]
fn head_backward(
    bw: &mut Backward<'_>,
    trace: &TaskTrace,
    i: usize,
    block: &TransBlock,
    weights: &std::collections::HashMap<RelationId, Matrix>,
    dpre: &[f64],
    grad_block: impl Fn(&mut ParamSet) -> &mut TransBlock,
    dw: &mut WeightGrads,
    dphi: &mut [Vec<f64>],
) {
    if dpre.iter().all(|&x| x == 0.0) {
        return;
    }
    let params = bw.params;
    let w = &params.weights;
    let d = params.dim();
    let t = &trace.entities[i];
    grad_block(&mut bw.grad.grads).self_weight.add_outer(1.0, dpre, &t.phi);
    block.self_weight.matvec_t_acc(dpre, 1.0, &mut dphi[i]);

    let inv_k = 1.0 / t.entries.len() as f64;
    let mut c = vec![0.0; 2 * d];
    for &(r, nb) in &t.entries {
        c[..d].copy_from_slice(w.relation_emb.row(r.index()));
        match nb {
            NeighborRef::Seen(e) => c[d..].copy_from_slice(w.entity_emb.row(e.index())),
            NeighborRef::Task(j) => c[d..].copy_from_slice(&trace.entities[j].phi),
            NeighborRef::Zero => c[d..].fill(0.0),
        }
        dw.entry(r).or_insert_with(|| Matrix::zeros(d, 2 * d)).add_outer(inv_k, dpre, &c);
        let mut dc = vec![0.0; 2 * d];
        weights[&r].matvec_t_acc(dpre, inv_k, &mut dc);
        bw.relation(r, &dc[..d]);
        match nb {
            NeighborRef::Seen(e) => bw.route(Src::Seen(e), &dc[d..]),
            NeighborRef::Task(j) => axpy(1.0, &dc[d..], &mut dphi[j]),
            NeighborRef::Zero => {}
        }
    }
}

fn pull_back(block: &BasisBlock, dw: &WeightGrads, grad: &mut BasisBlock) {
    for (&r, m) in dw {
        block.accumulate_weight_grad(r, m, grad);
    }
}
