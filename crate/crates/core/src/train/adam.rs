//! Adam with bias correction.
//!
//! Entity embedding rows are updated lazily: only rows that received
//! gradient in the current step move, so entities absent from an episode
//! keep their exact values. All other tensors take the dense update.

use serde::{Deserialize, Serialize};

use crate::model::params::{ModelConfig, ModelParams, ParamSet};
use crate::train::grad::GradientSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl OptimizerState {
    pub fn new(model: &ModelConfig, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            m: ParamSet::zeros(model),
            v: ParamSet::zeros(model),
        }
    }
}

fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, lr: f64, c1: f64, c2: f64) {
    for k in 0..p.len() {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        p[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One Adam step with learning rate `lr`.
pub fn adam_step(params: &mut ModelParams, grads: &GradientSet, state: &mut OptimizerState, lr: f64) {
    step(params, grads, state, lr, false)
}

/// Adam on the entity and relation embeddings only; every other tensor
/// and its moments are left alone.
pub fn adam_step_embeddings(params: &mut ModelParams, grads: &GradientSet, state: &mut OptimizerState, lr: f64) {
    step(params, grads, state, lr, true)
}

fn step(params: &mut ModelParams, grads: &GradientSet, state: &mut OptimizerState, lr: f64, embeddings_only: bool) {
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);

    let d = params.dim();
    for e in &grads.touched {
        let i = e.index();
        let range = i * d..(i + 1) * d;
        update(
            &mut params.weights.entity_emb.as_mut_slice()[range.clone()],
            &grads.grads.entity_emb.as_slice()[range.clone()],
            &mut state.m.entity_emb.as_mut_slice()[range.clone()],
            &mut state.v.entity_emb.as_mut_slice()[range],
            &cfg,
            lr,
            c1,
            c2,
        );
    }

    let g = grads.grads.tensors();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for ((((name, p), (_, g)), (_, m)), (_, v)) in params.weights.tensors_mut().into_iter().zip(g).zip(m).zip(v).skip(1) {
        if embeddings_only && name != "relation_emb" {
            continue;
        }
        update(p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice(), &cfg, lr, c1, c2);
    }
}
