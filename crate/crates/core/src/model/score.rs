//! Triplet score functions and the relation-classification head.

use crate::linalg::{axpy, dot, Matrix};
use crate::model::params::{LinearHead, ModelParams};
use crate::model::ScoreKind;
use crate::graph::RelationId;

/// `TransE: −‖h + r − t‖₂`, `DistMult: Σ h·r·t`.
///
/// # Panics
/// For [`ScoreKind::Linear`], which produces logits; see [`linear_logits`].
pub fn triplet_score(kind: ScoreKind, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match kind {
        ScoreKind::DistMult => {
            let mut s = 0.0;
            for k in 0..h.len() {
                s += h[k] * r[k] * t[k];
            }
            s
        }
        ScoreKind::TransE => {
            let mut s = 0.0;
            for k in 0..h.len() {
                let v = h[k] + r[k] - t[k];
                s += v * v;
            }
            -s.sqrt()
        }
        ScoreKind::Linear => panic!("linear score yields logits, not a scalar"),
    }
}

/// Accumulates `upstream · ∂s/∂{h,r,t}`. TransE uses a zero subgradient at
/// the origin.
#[allow(clippy::too_many_arguments)]
pub fn triplet_score_backward(
    kind: ScoreKind,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    upstream: f64,
    dh: &mut [f64],
    dr: &mut [f64],
    dt: &mut [f64],
) {
    match kind {
        ScoreKind::DistMult => {
            for k in 0..h.len() {
                dh[k] += upstream * r[k] * t[k];
                dr[k] += upstream * h[k] * t[k];
                dt[k] += upstream * h[k] * r[k];
            }
        }
        ScoreKind::TransE => {
            let v: Vec<f64> = (0..h.len()).map(|k| h[k] + r[k] - t[k]).collect();
            let n = dot(&v, &v).sqrt();
            if n == 0.0 {
                return;
            }
            let g = -upstream / n;
            for k in 0..h.len() {
                dh[k] += g * v[k];
                dr[k] += g * v[k];
                dt[k] -= g * v[k];
            }
        }
        ScoreKind::Linear => panic!("linear score has no scalar backward"),
    }
}

/// Single-precision DistMult/TransE for bulk candidate scoring.
pub fn triplet_score_f32(kind: ScoreKind, h: &[f32], r: &[f32], t: &[f32]) -> f32 {
    match kind {
        ScoreKind::DistMult => h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum(),
        ScoreKind::TransE => -h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((a, b), c)| {
                let v = a + b - c;
                v * v
            })
            .sum::<f32>()
            .sqrt(),
        ScoreKind::Linear => panic!("linear score yields logits, not a scalar"),
    }
}

/// Intermediate values of one head evaluation, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LinearTrace {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn linear_forward(head: &LinearHead, h: &[f64], t: &[f64]) -> LinearTrace {
    let mut input = Vec::with_capacity(h.len() + t.len());
    input.extend_from_slice(h);
    input.extend_from_slice(t);
    let mut hidden_pre = head.w1.matvec(&input);
    axpy(1.0, head.b1.as_slice(), &mut hidden_pre);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&x| x.max(0.0)).collect();
    let mut logits = head.w2.matvec(&hidden);
    axpy(1.0, head.b2.as_slice(), &mut logits);
    LinearTrace {
        input,
        hidden_pre,
        hidden,
        logits,
    }
}

pub fn linear_logits(head: &LinearHead, h: &[f64], t: &[f64]) -> Vec<f64> {
    linear_forward(head, h, t).logits
}

/// Back-propagates `dlogits`; accumulates into `grad` and `dh`, `dt`.
pub fn linear_backward(
    head: &LinearHead,
    trace: &LinearTrace,
    dlogits: &[f64],
    grad: &mut LinearHead,
    dh: &mut [f64],
    dt: &mut [f64],
) {
    grad.w2.add_outer(1.0, dlogits, &trace.hidden);
    axpy(1.0, dlogits, grad.b2.as_mut_slice());
    let mut dhidden = vec![0.0; trace.hidden.len()];
    head.w2.matvec_t_acc(dlogits, 1.0, &mut dhidden);
    for (g, &p) in dhidden.iter_mut().zip(&trace.hidden_pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    grad.w1.add_outer(1.0, &dhidden, &trace.input);
    axpy(1.0, &dhidden, grad.b1.as_mut_slice());
    let mut dinput = vec![0.0; trace.input.len()];
    head.w1.matvec_t_acc(&dhidden, 1.0, &mut dinput);
    let d = dh.len();
    axpy(1.0, &dinput[..d], dh);
    axpy(1.0, &dinput[d..], dt);
}

/// A score: a scalar for entity-prediction functions, a logit per raw
/// relation for the linear head.
#[derive(Clone, Debug, PartialEq)]
pub enum Score {
    Scalar(f64),
    Logits(Vec<f64>),
}

pub fn score(params: &ModelParams, h: &[f64], r: RelationId, t: &[f64]) -> Score {
    let w = &params.weights;
    match params.config.score {
        ScoreKind::Linear => Score::Logits(linear_logits(w.linear.as_ref().expect("linear head"), h, t)),
        kind => Score::Scalar(triplet_score(kind, h, w.relation_emb.row(r.index()), t)),
    }
}

/// Materialised `W_r` for every relation id of a block.
pub fn all_weights(block: &crate::model::params::BasisBlock) -> Vec<Matrix> {
    (0..block.coeffs.rows())
        .map(|r| block.effective_weight(RelationId(r as u32)))
        .collect()
}
