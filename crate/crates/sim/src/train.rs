//! On-policy pruned training loop.
//!
//! Each step forwards every sample in the batch (losses and output-layer
//! gradients), hands the batch to the selection policy, and applies one plain
//! gradient-descent step using the kept samples scaled by their coreset
//! weights. The step gradient is the weight-normalized mean
//! `sum(w_i * g_i) / sum(w_i)`, accumulated in batch order so the trajectory
//! is independent of the policy's selection order; with keep_fraction = 1 it
//! reduces to the full-batch mean for every policy.
//!
//! The slap policy runs its raw-gradient path, threading the shared
//! second-moment state across steps; the state starts at step 0 and the very
//! first batch is selected on plain gradient-norm features. The policy
//! config's own seed field is ignored here: the run seed derives two labeled
//! streams, one for epoch shuffles and one for policy decisions. Keeping the
//! shuffle stream separate means policies that consume different numbers of
//! draws still see identical batches, which is what makes keep_fraction = 1
//! runs exactly policy-invariant.

use serde::{Deserialize, Serialize};
use slap_core::costmodel::{slap_flops, FlopsModel};
use slap_core::features::SecondMomentState;
use slap_core::matrix::Matrix;
use slap_core::rng::{RandomStream, Xoshiro256PlusPlus};
use slap_core::selector::{slap_select_raw, PolicyKind, RawSample, SelectionPolicy};
use slap_core::stratify::{Batch, SampleRecord};
use slap_core::features::{FeatureVector, SequenceGradient};
use slap_core::{Result, SlapError};

use crate::dataset::DataPoint;
use crate::model::{forward_backward, loss_from_logits, ToyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SlapError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SlapError::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One step of the emitted run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Mean loss over the full batch before pruning; `None` on the abort
    /// record of a diverged run.
    pub mean_train_loss: Option<f64>,
    pub kept: usize,
    /// Mean validation loss, present on the last step of each epoch.
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub policy: SelectionPolicy,
    pub params: TrainParams,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub final_val_loss: f64,
    /// Simulated training cost, summed per step from the pruned-batch model.
    pub total_flops: f64,
    pub diverged_at: Option<u64>,
}

impl TrainRun {
    /// Line-delimited JSON log, one record per step.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

fn mean_val_loss(model: &ToyModel, val: &[DataPoint]) -> f64 {
    let total: f64 = val
        .iter()
        .map(|p| loss_from_logits(&model.logits(&p.x), p.label))
        .sum();
    total / val.len() as f64
}

/// Per-token forward cost of the linear model, counted as one multiply-add
/// per weight entry.
fn forward_flops_per_token(n_classes: usize, hidden_dim: usize) -> f64 {
    2.0 * (n_classes * hidden_dim) as f64
}

pub fn run_training(
    train: &[DataPoint],
    val: &[DataPoint],
    policy: &SelectionPolicy,
    params: &TrainParams,
    seed: u64,
) -> Result<TrainRun> {
    params.validate()?;
    policy.config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(SlapError::Config("train and validation sets must be non-empty".into()));
    }
    let hidden_dim = train[0].x.len();
    let n_classes = 1 + train
        .iter()
        .chain(val.iter())
        .map(|p| p.label)
        .max()
        .expect("non-empty");

    let mut model = ToyModel::zeros(n_classes, hidden_dim);
    let mut state = SecondMomentState::new(
        n_classes,
        hidden_dim,
        policy.config.beta2,
        policy.config.epsilon,
    )?;
    let mut shuffle_rng = Xoshiro256PlusPlus::seed_from_labeled(seed, "train/shuffle");
    let mut policy_rng = Xoshiro256PlusPlus::seed_from_labeled(seed, "train/policy");

    let mut records = Vec::new();
    let mut step: u64 = 0;
    let mut total_flops = 0.0;
    let mut diverged_at = None;

    'epochs: for _epoch in 0..params.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        // Fisher-Yates with the shuffle stream.
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.uniform_usize(i + 1);
            order.swap(i, j);
        }
        let n_steps = order.len().div_ceil(params.batch_size);
        for step_in_epoch in 0..n_steps {
            step += 1;
            let lo = step_in_epoch * params.batch_size;
            let hi = (lo + params.batch_size).min(order.len());
            let batch_indices = &order[lo..hi];

            let mut losses = Vec::with_capacity(batch_indices.len());
            let mut grads: Vec<(Vec<f64>, &[f64])> = Vec::with_capacity(batch_indices.len());
            for &index in batch_indices {
                let point = &train[index];
                let (loss, output_grad, _) = forward_backward(&model, &point.x, point.label)?;
                losses.push(loss);
                grads.push((output_grad, &point.x));
            }
            let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
            if !mean_loss.is_finite() {
                records.push(StepRecord {
                    step,
                    mean_train_loss: None,
                    kept: 0,
                    val_loss: None,
                    diverged: true,
                });
                diverged_at = Some(step);
                break 'epochs;
            }

            let coreset = match policy.kind {
                PolicyKind::Slap => {
                    let raw: Vec<RawSample> = batch_indices
                        .iter()
                        .zip(&losses)
                        .zip(&grads)
                        .map(|((&index, &loss), (output_grad, hidden))| {
                            let mut matrix = Matrix::zeros(n_classes, hidden_dim);
                            for (i, &g) in output_grad.iter().enumerate() {
                                for (j, &x) in hidden.iter().enumerate() {
                                    matrix.set(i, j, g * x);
                                }
                            }
                            Ok(RawSample {
                                id: index as u64,
                                loss,
                                gradient: SequenceGradient::from_matrix(matrix)?,
                            })
                        })
                        .collect::<Result<_>>()?;
                    let selection = slap_select_raw(&raw, &policy.config, &state, &mut policy_rng)?;
                    state = selection.state;
                    selection.coreset
                }
                _ => {
                    let samples: Vec<SampleRecord> = batch_indices
                        .iter()
                        .zip(&losses)
                        .map(|(&index, &loss)| {
                            SampleRecord::new(
                                index as u64,
                                loss,
                                FeatureVector::new(Vec::new()).expect("empty is valid"),
                            )
                        })
                        .collect::<Result<_>>()?;
                    policy.select(&Batch::new(samples)?, &mut policy_rng)?
                }
            };

            // Weighted mean gradient, accumulated in batch order.
            let weight_of: std::collections::HashMap<u64, f64> =
                coreset.entries().iter().map(|e| (e.id, e.weight)).collect();
            let mut grad_w = Matrix::zeros(n_classes, hidden_dim);
            let mut grad_b = vec![0.0; n_classes];
            let mut total_weight = 0.0;
            for (&index, (output_grad, hidden)) in batch_indices.iter().zip(&grads) {
                let Some(&weight) = weight_of.get(&(index as u64)) else { continue };
                total_weight += weight;
                for (i, &g) in output_grad.iter().enumerate() {
                    grad_b[i] += weight * g;
                    for (j, &x) in hidden.iter().enumerate() {
                        let at = grad_w.get(i, j);
                        grad_w.set(i, j, at + weight * g * x);
                    }
                }
            }
            let scale = params.learning_rate / total_weight;
            for i in 0..n_classes {
                model.bias[i] -= scale * grad_b[i];
                for j in 0..hidden_dim {
                    let w = model.weight.get(i, j);
                    model.weight.set(i, j, w - scale * grad_w.get(i, j));
                }
            }
            if !model.is_finite() {
                records.push(StepRecord {
                    step,
                    mean_train_loss: None,
                    kept: coreset.len(),
                    val_loss: None,
                    diverged: true,
                });
                diverged_at = Some(step);
                break 'epochs;
            }

            let cost_model = FlopsModel::new(
                batch_indices.len() as u64,
                1,
                1,
                forward_flops_per_token(n_classes, hidden_dim),
                None,
                1.0 - policy.config.keep_fraction,
            )?;
            total_flops += slap_flops(&cost_model);

            let val_loss = if step_in_epoch + 1 == n_steps {
                Some(mean_val_loss(&model, val))
            } else {
                None
            };
            records.push(StepRecord {
                step,
                mean_train_loss: Some(mean_loss),
                kept: coreset.len(),
                val_loss,
                diverged: false,
            });
        }
    }

    let final_val_loss = records
        .iter()
        .rev()
        .find_map(|r| r.val_loss)
        .unwrap_or_else(|| mean_val_loss(&model, val));
    Ok(TrainRun {
        policy: policy.clone(),
        params: params.clone(),
        seed,
        records,
        final_val_loss,
        total_flops,
        diverged_at,
    })
}
