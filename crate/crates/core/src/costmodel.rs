//! FLOPs accounting for pruned-batch training.
//!
//! Full-batch cost is `B*(L_i+L_o)*F_f + B*L_o*F_b`; pruning scales only the
//! backward term by `(1 - alpha)`. Selection overhead (softmax, pairwise
//! distances) is excluded from the pruned cost, matching the accounting the
//! savings claims are made under; an optional estimate of that overhead is
//! reported separately for transparency.

use crate::error::{Result, SlapError};
use crate::stratify::coreset_target_size;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlopsModel {
    /// Batch size.
    pub batch_size: u64,
    /// Input length in tokens.
    pub input_len: u64,
    /// Output length in tokens.
    pub output_len: u64,
    /// Forward FLOPs per token.
    pub forward_per_token: f64,
    /// Backward FLOPs per token; conventionally about twice the forward cost.
    pub backward_per_token: f64,
    /// Fraction of the batch pruned before the backward pass.
    pub prune_rate: f64,
}

impl FlopsModel {
    /// Validates positivity and `prune_rate` in `[0, 1)`. A `None` backward
    /// cost defaults to twice the forward cost.
    pub fn new(
        batch_size: u64,
        input_len: u64,
        output_len: u64,
        forward_per_token: f64,
        backward_per_token: Option<f64>,
        prune_rate: f64,
    ) -> Result<Self> {
        let backward_per_token = backward_per_token.unwrap_or(2.0 * forward_per_token);
        let model = Self {
            batch_size,
            input_len,
            output_len,
            forward_per_token,
            backward_per_token,
            prune_rate,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.input_len == 0 || self.output_len == 0 {
            return Err(SlapError::Config(
                "batch size and token lengths must be positive".into(),
            ));
        }
        if !(self.forward_per_token > 0.0) || !(self.backward_per_token > 0.0) {
            return Err(SlapError::Config("per-token FLOPs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return Err(SlapError::Config(format!(
                "prune rate must lie in [0, 1), got {}",
                self.prune_rate
            )));
        }
        Ok(())
    }

    /// Forward cost over input and output tokens: `B * (L_i + L_o) * F_f`.
    pub fn forward_term(&self) -> f64 {
        self.batch_size as f64 * (self.input_len + self.output_len) as f64 * self.forward_per_token
    }

    /// Full backward cost: `B * L_o * F_b`.
    pub fn backward_term(&self) -> f64 {
        self.batch_size as f64 * self.output_len as f64 * self.backward_per_token
    }

    /// Backward cost after pruning: `(1 - alpha) * B * L_o * F_b`.
    pub fn pruned_backward_term(&self) -> f64 {
        (1.0 - self.prune_rate) * self.backward_term()
    }
}

/// Cost of processing the whole batch through forward and backward passes.
pub fn full_batch_flops(model: &FlopsModel) -> f64 {
    model.forward_term() + model.backward_term()
}

/// Cost with the backward pass restricted to the kept fraction.
pub fn slap_flops(model: &FlopsModel) -> f64 {
    model.forward_term() + model.pruned_backward_term()
}

/// Pruned cost as a fraction of the full cost, in (0, 1].
pub fn savings_ratio(model: &FlopsModel) -> f64 {
    slap_flops(model) / full_batch_flops(model)
}

/// Rough selection-overhead estimate in multiply-adds: every batch member is
/// compared against every selected point in D-dimensional feature space.
pub fn selection_overhead_mult_adds(model: &FlopsModel, feature_dim: u64) -> f64 {
    let b = model.batch_size as usize;
    let kept = coreset_target_size(1.0 - model.prune_rate, b);
    (b as f64) * (kept as f64) * feature_dim as f64
}
