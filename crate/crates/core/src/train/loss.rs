//! Margin ranking and binary cross-entropy losses.

use crate::linalg::{sigmoid, softplus};

/// `Σ_i Σ_j max(γ − pos_i + neg_ij, 0)`.
pub fn hinge_loss(pos: &[f64], neg: &[Vec<f64>], margin: f64) -> f64 {
    debug_assert_eq!(pos.len(), neg.len());
    let mut total = 0.0;
    for (p, ns) in pos.iter().zip(neg) {
        for n in ns {
            total += hinge_term(*p, *n, margin);
        }
    }
    total
}

pub fn hinge_term(pos: f64, neg: f64, margin: f64) -> f64 {
    (margin - pos + neg).max(0.0)
}

/// Mean over labels of `−[y ln σ(x) + (1 − y) ln(1 − σ(x))]`, evaluated as
/// `softplus(x) − y·x`.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> f64 {
    debug_assert_eq!(logits.len(), labels.len());
    let mut total = 0.0;
    for (&x, &y) in logits.iter().zip(labels) {
        total += softplus(x) - y * x;
    }
    total / logits.len() as f64
}

/// `∂ bce_loss / ∂ logits`.
pub fn bce_grad(logits: &[f64], labels: &[f64]) -> Vec<f64> {
    let n = logits.len() as f64;
    logits.iter().zip(labels).map(|(&x, &y)| (sigmoid(x) - y) / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_boundary_is_zero() {
        let gamma = 0.75;
        assert_eq!(hinge_loss(&[1.0, -2.0], &[vec![1.0 - gamma], vec![-2.0 - gamma, -5.0]], gamma), 0.0);
    }

    #[test]
    fn hinge_equal_scores() {
        assert_eq!(hinge_loss(&[0.3], &[vec![0.3]], 1.0), 1.0);
    }

    #[test]
    fn hinge_mixed() {
        // max(0.5 − 2 + 0, 0) + max(0.5 − 2 + 3, 0) = 0 + 1.5
        assert_eq!(hinge_loss(&[2.0], &[vec![0.0, 3.0]], 0.5), 1.5);
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce_loss(&[0.0], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[1e6], &[1.0]).abs() < 1e-12);
        let sp = (1.0 + (-1.0f64).exp()).ln();
        assert!((bce_loss(&[1.0, -1.0], &[1.0, 0.0]) - sp).abs() < 1e-15);
    }

    #[test]
    fn bce_grad_matches_finite_difference() {
        let x = [0.3, -1.7, 2.2];
        let y = [1.0, 0.0, 1.0];
        let g = bce_grad(&x, &y);
        for k in 0..3 {
            let h = 1e-6;
            let mut xp = x;
            xp[k] += h;
            let mut xm = x;
            xm[k] -= h;
            let fd = (bce_loss(&xp, &y) - bce_loss(&xm, &y)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-9);
        }
    }
}
