use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GenError, Result};
use crate::graph::RelationId;
use crate::linalg::Matrix;
use crate::model::ScoreKind;

/// Shapes and switches fixed at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_bases: usize,
    pub num_entities: usize,
    pub num_raw_relations: usize,
    /// Reserve inverse-relation ids `raw..2*raw`.
    pub inverse_relations: bool,
    pub score: ScoreKind,
    pub dropout: f64,
    /// Hidden width of the relation-classification head.
    pub hidden: usize,
}

impl ModelConfig {
    pub fn num_relations(&self) -> usize {
        if self.inverse_relations {
            2 * self.num_raw_relations
        } else {
            self.num_raw_relations
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.dim == 0 {
            bad.push("dim must be > 0".to_string());
        }
        if self.num_bases == 0 {
            bad.push("num_bases must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.score == ScoreKind::Linear && self.hidden == 0 {
            bad.push("hidden must be > 0 for the linear score".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(GenError::InvalidConfig(bad.join("; ")))
        }
    }
}

/// Relation weights `W_r = Σ_b coeffs[r, b] · V_b`, each `d × 2d`.
/// `bases` stores one flattened row-major `V_b` per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisBlock {
    pub dim: usize,
    pub bases: Matrix,
    pub coeffs: Matrix,
}

impl BasisBlock {
    pub fn zeros(dim: usize, num_bases: usize, num_relations: usize) -> Self {
        BasisBlock {
            dim,
            bases: Matrix::zeros(num_bases, 2 * dim * dim),
            coeffs: Matrix::zeros(num_relations, num_bases),
        }
    }

    fn init<R: Rng + ?Sized>(dim: usize, num_bases: usize, num_relations: usize, rng: &mut R) -> Self {
        let mut bases = Matrix::zeros(num_bases, 2 * dim * dim);
        for b in 0..num_bases {
            let v = Matrix::glorot(dim, 2 * dim, rng);
            bases.row_mut(b).copy_from_slice(v.as_slice());
        }
        let coeffs = Matrix::normal(num_relations, num_bases, 1.0 / (num_bases as f64).sqrt(), rng);
        BasisBlock { dim, bases, coeffs }
    }

    pub fn num_bases(&self) -> usize {
        self.bases.rows()
    }

    pub fn basis(&self, b: usize) -> Matrix {
        Matrix::from_vec(self.dim, 2 * self.dim, self.bases.row(b).to_vec())
    }

    /// Materialises `W_r`.
    pub fn effective_weight(&self, r: RelationId) -> Matrix {
        let mut w = Matrix::zeros(self.dim, 2 * self.dim);
        let coeffs = self.coeffs.row(r.index());
        for (b, &a) in coeffs.iter().enumerate() {
            if a != 0.0 {
                crate::linalg::axpy(a, self.bases.row(b), w.as_mut_slice());
            }
        }
        w
    }

    /// Pulls a weight gradient `dW_r` back onto the bases and coefficients.
    pub fn accumulate_weight_grad(&self, r: RelationId, dw: &Matrix, grad: &mut BasisBlock) {
        let coeffs = self.coeffs.row(r.index());
        for b in 0..self.num_bases() {
            let vb = self.bases.row(b);
            let da = crate::linalg::dot(vb, dw.as_slice());
            let g = grad.coeffs.row_mut(r.index());
            g[b] += da;
            if coeffs[b] != 0.0 {
                crate::linalg::axpy(coeffs[b], dw.as_slice(), grad.bases.row_mut(b));
            }
        }
    }
}

/// One transductive head: relation aggregation plus a self-connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransBlock {
    pub basis: BasisBlock,
    pub self_weight: Matrix,
}

impl TransBlock {
    pub fn zeros(dim: usize, num_bases: usize, num_relations: usize) -> Self {
        TransBlock {
            basis: BasisBlock::zeros(dim, num_bases, num_relations),
            self_weight: Matrix::zeros(dim, dim),
        }
    }
}

/// Two-layer relation classifier over `(h ⊕ t)`:
/// `logits = w2 · relu(w1 · (h ⊕ t) + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl LinearHead {
    pub fn zeros(dim: usize, hidden: usize, num_labels: usize) -> Self {
        LinearHead {
            w1: Matrix::zeros(hidden, 2 * dim),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(num_labels, hidden),
            b2: Matrix::zeros(1, num_labels),
        }
    }
}

/// Every trainable tensor. Also used, zero-filled, as a gradient buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub entity_emb: Matrix,
    pub relation_emb: Matrix,
    pub inductive: BasisBlock,
    pub trans_mu: TransBlock,
    pub trans_sigma: TransBlock,
    pub linear: Option<LinearHead>,
}

impl ParamSet {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, b, r) = (cfg.dim, cfg.num_bases, cfg.num_relations());
        ParamSet {
            entity_emb: Matrix::zeros(cfg.num_entities, d),
            relation_emb: Matrix::zeros(r, d),
            inductive: BasisBlock::zeros(d, b, r),
            trans_mu: TransBlock::zeros(d, b, r),
            trans_sigma: TransBlock::zeros(d, b, r),
            linear: (cfg.score == ScoreKind::Linear).then(|| LinearHead::zeros(d, cfg.hidden, cfg.num_raw_relations)),
        }
    }

    /// Tensors in canonical order, with stable names.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![
            ("entity_emb", &self.entity_emb),
            ("relation_emb", &self.relation_emb),
            ("inductive.bases", &self.inductive.bases),
            ("inductive.coeffs", &self.inductive.coeffs),
            ("trans_mu.bases", &self.trans_mu.basis.bases),
            ("trans_mu.coeffs", &self.trans_mu.basis.coeffs),
            ("trans_mu.self_weight", &self.trans_mu.self_weight),
            ("trans_sigma.bases", &self.trans_sigma.basis.bases),
            ("trans_sigma.coeffs", &self.trans_sigma.basis.coeffs),
            ("trans_sigma.self_weight", &self.trans_sigma.self_weight),
        ];
        if let Some(l) = &self.linear {
            v.extend([("linear.w1", &l.w1), ("linear.b1", &l.b1), ("linear.w2", &l.w2), ("linear.b2", &l.b2)]);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v = vec![
            ("entity_emb", &mut self.entity_emb),
            ("relation_emb", &mut self.relation_emb),
            ("inductive.bases", &mut self.inductive.bases),
            ("inductive.coeffs", &mut self.inductive.coeffs),
            ("trans_mu.bases", &mut self.trans_mu.basis.bases),
            ("trans_mu.coeffs", &mut self.trans_mu.basis.coeffs),
            ("trans_mu.self_weight", &mut self.trans_mu.self_weight),
            ("trans_sigma.bases", &mut self.trans_sigma.basis.bases),
            ("trans_sigma.coeffs", &mut self.trans_sigma.basis.coeffs),
            ("trans_sigma.self_weight", &mut self.trans_sigma.self_weight),
        ];
        if let Some(l) = &mut self.linear {
            v.extend([
                ("linear.w1", &mut l.w1),
                ("linear.b1", &mut l.b1),
                ("linear.w2", &mut l.w2),
                ("linear.b2", &mut l.b2),
            ]);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors().into_iter().find(|(_, m)| !m.is_finite()).map(|(n, _)| n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: ParamSet,
}

impl ModelParams {
    /// Random initialisation. Rows of `unseen` entities start, and stay,
    /// at zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, unseen: &[bool], rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, b, r) = (config.dim, config.num_bases, config.num_relations());
        let std = 1.0 / (d as f64).sqrt();
        let mut entity_emb = Matrix::normal(config.num_entities, d, std, rng);
        for (e, &u) in unseen.iter().enumerate() {
            if u {
                entity_emb.row_mut(e).fill(0.0);
            }
        }
        let relation_emb = Matrix::normal(r, d, std, rng);
        let inductive = BasisBlock::init(d, b, r, rng);
        let trans_mu = TransBlock {
            basis: BasisBlock::init(d, b, r, rng),
            self_weight: Matrix::glorot(d, d, rng),
        };
        let trans_sigma = TransBlock {
            basis: BasisBlock::init(d, b, r, rng),
            self_weight: Matrix::glorot(d, d, rng),
        };
        let linear = (config.score == ScoreKind::Linear).then(|| LinearHead {
            w1: Matrix::glorot(config.hidden, 2 * d, rng),
            b1: Matrix::zeros(1, config.hidden),
            w2: Matrix::glorot(config.num_raw_relations, config.hidden, rng),
            b2: Matrix::zeros(1, config.num_raw_relations),
        });
        Ok(ModelParams {
            config,
            weights: ParamSet {
                entity_emb,
                relation_emb,
                inductive,
                trans_mu,
                trans_sigma,
                linear,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }
}
