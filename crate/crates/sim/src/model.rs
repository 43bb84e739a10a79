//! Linear softmax classifier.
//!
//! Deliberately minimal: `logits = W x + b` followed by softmax
//! cross-entropy. Its output-layer gradient is exactly the outer product of
//! `softmax(logits) - onehot(label)` with the input, which is the same
//! structure the selection engine's feature pipeline consumes, so the
//! pipeline is exercised faithfully at negligible cost.

use slap_core::matrix::Matrix;
use slap_core::{Result, SlapError};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(n_classes: usize, hidden_dim: usize) -> Self {
        Self { weight: Matrix::zeros(n_classes, hidden_dim), bias: vec![0.0; n_classes] }
    }

    pub fn n_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = self.n_classes();
        let mut out = self.bias.clone();
        for i in 0..d {
            let row = self.weight.row(i);
            out[i] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Stable softmax cross-entropy: `logsumexp(z) - z[label]`.
pub fn loss_from_logits(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Forward pass plus the analytic output-layer gradient for one sample.
///
/// Returns `(loss, output_grad, hidden)` where
/// `output_grad = softmax(logits) - onehot(label)` and `hidden` is the input
/// itself, mirroring the last-layer quantities the feature pipeline expects.
pub fn forward_backward(model: &ToyModel, x: &[f64], label: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if x.len() != model.hidden_dim() {
        return Err(SlapError::DimensionMismatch(format!(
            "input has length {}, model expects {}",
            x.len(),
            model.hidden_dim()
        )));
    }
    if label >= model.n_classes() {
        return Err(SlapError::Config(format!(
            "label {} out of range for {} classes",
            label,
            model.n_classes()
        )));
    }
    let logits = model.logits(x);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = max + total.ln() - logits[label];
    let mut output_grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    output_grad[label] -= 1.0;
    Ok((loss, output_grad, x.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use slap_core::rng::{RandomStream, Xoshiro256PlusPlus};

    #[test]
    fn uniform_logits_give_ln_d_loss() {
        let model = ToyModel::zeros(5, 3);
        let (loss, _, _) = forward_backward(&model, &[0.4, -1.0, 2.0], 2).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_vanishing_loss_and_gradient() {
        let mut model = ToyModel::zeros(3, 1);
        model.bias = vec![50.0, 0.0, 0.0];
        let (loss, grad, _) = forward_backward(&model, &[0.0], 0).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from(17);
        for _ in 0..100 {
            let d = 2 + rng.uniform_usize(5);
            let logits: Vec<f64> = (0..d).map(|_| rng.normal() * 2.0).collect();
            let label = rng.uniform_usize(d);
            // analytic gradient w.r.t. logits
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
            grad[label] -= 1.0;

            let h = 1e-5;
            for j in 0..d {
                let mut plus = logits.clone();
                plus[j] += h;
                let mut minus = logits.clone();
                minus[j] -= h;
                let fd = (loss_from_logits(&plus, label) - loss_from_logits(&minus, label))
                    / (2.0 * h);
                let denom = grad[j].abs().max(1e-3);
                assert!(
                    ((fd - grad[j]) / denom).abs() <= 1e-6,
                    "component {j}: fd {fd} vs analytic {}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn forward_backward_rejects_bad_shapes() {
        let model = ToyModel::zeros(3, 2);
        assert!(forward_backward(&model, &[1.0], 0).is_err());
        assert!(forward_backward(&model, &[1.0, 2.0], 5).is_err());
    }
}
