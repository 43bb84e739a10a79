//! Per-sample gradient feature vectors.
//!
//! A sample's output-layer gradient is the sum over its tokens of the outer
//! product `output_grad x hidden` (shape D x H, D = vocabulary size, H =
//! hidden width). Summation, not averaging: the weight of important tokens
//! must survive aggregation. The feature used for pairwise distances is the
//! per-vocabulary-row L2 norm of that matrix after elementwise division by
//! `sqrt(v_hat + eps)`, where `v_hat` is the bias-corrected Adam-style second
//! moment maintained across training steps. The norm collapses only the
//! hidden dimension, so the feature lives in R^D.
//!
//! The second moment is a single shared D x H state, updated once per
//! training step with the mean gradient of the kept samples; per-sample
//! features are preconditioned with the state as of the start of the step.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlapError};
use crate::matrix::Matrix;

/// Gradient contributions of one token: the loss gradient w.r.t. the output
/// logits and the last-layer hidden state it multiplies.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGradientInput {
    pub output_grad: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl TokenGradientInput {
    pub fn new(output_grad: Vec<f64>, hidden: Vec<f64>) -> Result<Self> {
        if output_grad.is_empty() || hidden.is_empty() {
            return Err(SlapError::DimensionMismatch(
                "token gradient requires D >= 1 and H >= 1".into(),
            ));
        }
        if !output_grad.iter().chain(&hidden).all(|x| x.is_finite()) {
            return Err(SlapError::Numeric("non-finite token gradient entry".into()));
        }
        Ok(Self { output_grad, hidden })
    }
}

/// Sum of a sequence's token outer-product gradients, shape D x H.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceGradient {
    matrix: Matrix,
}

impl SequenceGradient {
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(SlapError::Numeric("non-finite sequence gradient".into()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn vocab_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// Running second moment over the D x H output-layer gradient entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentState {
    v: Matrix,
    step: u64,
    beta2: f64,
    epsilon: f64,
}

impl SecondMomentState {
    pub fn new(vocab_dim: usize, hidden_dim: usize, beta2: f64, epsilon: f64) -> Result<Self> {
        if vocab_dim == 0 || hidden_dim == 0 {
            return Err(SlapError::DimensionMismatch("state requires D >= 1 and H >= 1".into()));
        }
        if !(beta2 > 0.0 && beta2 < 1.0) {
            return Err(SlapError::Config(format!("beta2 must lie in (0,1), got {beta2}")));
        }
        if !(epsilon > 0.0) {
            return Err(SlapError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { v: Matrix::zeros(vocab_dim, hidden_dim), step: 0, beta2, epsilon })
    }

    /// Rebuild from persisted parts. Validates the same invariants as `new`.
    pub fn from_parts(v: Matrix, step: u64, beta2: f64, epsilon: f64) -> Result<Self> {
        let mut state = Self::new(v.rows(), v.cols(), beta2, epsilon)?;
        if !v.is_finite() || v.data().iter().any(|&x| x < 0.0) {
            return Err(SlapError::Numeric("second moment must be finite and >= 0".into()));
        }
        state.v = v;
        state.step = step;
        Ok(state)
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn vocab_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.v.cols()
    }
}

/// Length-D feature vector of non-negative per-row norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(SlapError::Numeric(
                "feature entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Outer product `output_grad x hidden`: entry `[i][j] = output_grad[i] * hidden[j]`.
pub fn token_gradient(inp: &TokenGradientInput) -> Matrix {
    let d = inp.output_grad.len();
    let h = inp.hidden.len();
    let mut out = Matrix::zeros(d, h);
    for (i, &g) in inp.output_grad.iter().enumerate() {
        for (j, &x) in inp.hidden.iter().enumerate() {
            out.set(i, j, g * x);
        }
    }
    out
}

/// Elementwise sum of `token_gradient` over all tokens, in token order.
///
/// Rejects an empty list and any token whose dimensions disagree with the
/// first token's D and H.
pub fn sequence_gradient(tokens: &[TokenGradientInput]) -> Result<SequenceGradient> {
    let first = tokens.first().ok_or(SlapError::EmptySequence)?;
    let (d, h) = (first.output_grad.len(), first.hidden.len());
    let mut sum = Matrix::zeros(d, h);
    for (index, token) in tokens.iter().enumerate() {
        if token.output_grad.len() != d || token.hidden.len() != h {
            return Err(SlapError::DimensionMismatch(format!(
                "token {index} has shape {}x{}, expected {d}x{h}",
                token.output_grad.len(),
                token.hidden.len()
            )));
        }
        sum.add_assign(&token_gradient(token))?;
    }
    SequenceGradient::from_matrix(sum)
}

/// One step of the second-moment recurrence:
/// `v' = beta2 * v + (1 - beta2) * g^2`, elementwise. Returns a new state
/// with `step + 1`; the input state is untouched.
pub fn update_second_moment(
    state: &SecondMomentState,
    g: &SequenceGradient,
) -> Result<SecondMomentState> {
    if !state.v.same_shape(g.matrix()) {
        return Err(SlapError::DimensionMismatch(format!(
            "state is {}x{}, gradient is {}x{}",
            state.vocab_dim(),
            state.hidden_dim(),
            g.vocab_dim(),
            g.hidden_dim()
        )));
    }
    let mut next = state.clone();
    let beta2 = state.beta2;
    for (v, &grad) in next.v.data_mut().iter_mut().zip(g.matrix().data()) {
        *v = beta2 * *v + (1.0 - beta2) * grad * grad;
    }
    next.step = state.step + 1;
    Ok(next)
}

/// Bias-corrected second moment `v / (1 - beta2^step)`, elementwise.
pub fn bias_corrected_v(state: &SecondMomentState) -> Result<Matrix> {
    if state.step == 0 {
        return Err(SlapError::UninitializedState);
    }
    let correction = 1.0 - state.beta2.powi(state.step as i32);
    let mut out = state.v.clone();
    out.scale(1.0 / correction);
    Ok(out)
}

/// Preconditioned gradient feature: divide `g` elementwise by
/// `sqrt(v_hat + eps)` and take the L2 norm of each vocabulary row.
pub fn hessian_feature(g: &SequenceGradient, state: &SecondMomentState) -> Result<FeatureVector> {
    if !state.v.same_shape(g.matrix()) {
        return Err(SlapError::DimensionMismatch(format!(
            "state is {}x{}, gradient is {}x{}",
            state.vocab_dim(),
            state.hidden_dim(),
            g.vocab_dim(),
            g.hidden_dim()
        )));
    }
    let v_hat = bias_corrected_v(state)?;
    let d = g.vocab_dim();
    let h = g.hidden_dim();
    let mut values = Vec::with_capacity(d);
    for i in 0..d {
        let g_row = g.matrix().row(i);
        let v_row = v_hat.row(i);
        let mut sum_sq = 0.0;
        for j in 0..h {
            let p = g_row[j] / (v_row[j] + state.epsilon).sqrt();
            sum_sq += p * p;
        }
        let norm = sum_sq.sqrt();
        if !norm.is_finite() {
            return Err(SlapError::Numeric(format!(
                "preconditioned row {i} norm is not finite"
            )));
        }
        values.push(norm);
    }
    FeatureVector::new(values)
}

/// Unpreconditioned per-row norms of `g`, the plain gradient-norm feature.
///
/// Used in place of [`hessian_feature`] only while the shared state has seen
/// no updates (step 0), where the bias-corrected moment is undefined.
pub fn raw_feature(g: &SequenceGradient) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(g.vocab_dim());
    for i in 0..g.vocab_dim() {
        let norm = g.matrix().row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(SlapError::Numeric(format!("gradient row {i} norm is not finite")));
        }
        values.push(norm);
    }
    FeatureVector::new(values)
}
