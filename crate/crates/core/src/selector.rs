//! Selection policies behind a common interface.
//!
//! `slap` composes stratification, quota sampling, and greedy max-min
//! diversification. The baselines are uniform random sampling, highest-loss
//! selection (online hard), even-quota stratified random choice (ccs), and
//! threshold pruning with gradient rescaling (infobatch).
//!
//! All policies are pure in (batch, config, seed) except the slap raw-input
//! path, which threads the shared second-moment state: one update per batch
//! with the mean gradient of the kept samples. Distinct batches must flow
//! through one state sequentially.

use std::str::FromStr;

use crate::diversify::{greedy_max_min_select, Coreset, CoresetEntry};
use crate::error::{Result, SlapError};
use crate::features::{
    hessian_feature, raw_feature, update_second_moment, SecondMomentState, SequenceGradient,
};
use crate::matrix::Matrix;
use crate::rng::RandomStream;
use crate::stratify::{
    coreset_target_size, partition_by_loss, sample_selection_counts, Batch, SampleId,
    SampleRecord, SelectionConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Slap,
    Random,
    OnlineHard,
    Ccs,
    InfoBatch,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Slap => "slap",
            PolicyKind::Random => "random",
            PolicyKind::OnlineHard => "online_hard",
            PolicyKind::Ccs => "ccs",
            PolicyKind::InfoBatch => "infobatch",
        }
    }

    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Slap,
        PolicyKind::Random,
        PolicyKind::OnlineHard,
        PolicyKind::Ccs,
        PolicyKind::InfoBatch,
    ];
}

impl FromStr for PolicyKind {
    type Err = SlapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slap" => Ok(PolicyKind::Slap),
            "random" => Ok(PolicyKind::Random),
            "online_hard" => Ok(PolicyKind::OnlineHard),
            "ccs" => Ok(PolicyKind::Ccs),
            "infobatch" => Ok(PolicyKind::InfoBatch),
            other => Err(SlapError::Config(format!(
                "unknown policy {other:?}; expected one of slap, random, online_hard, ccs, infobatch"
            ))),
        }
    }
}

/// A policy kind plus its configuration. `config.k` is consulted by slap and
/// ccs; `beta2`/`epsilon` only by the slap raw-gradient path; the rest is
/// ignored by policies that do not use it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelectionPolicy {
    pub kind: PolicyKind,
    pub config: SelectionConfig,
}

impl SelectionPolicy {
    pub fn new(kind: PolicyKind, config: SelectionConfig) -> Self {
        Self { kind, config }
    }

    /// Dispatch on a batch with precomputed features. Identical to calling
    /// the per-policy function directly.
    pub fn select(&self, batch: &Batch, rng: &mut impl RandomStream) -> Result<Coreset> {
        match self.kind {
            PolicyKind::Slap => slap_select(batch, &self.config, rng),
            PolicyKind::Random => random_select(batch, self.config.keep_fraction, rng),
            PolicyKind::OnlineHard => online_hard_select(batch, self.config.keep_fraction),
            PolicyKind::Ccs => ccs_select(batch, self.config.keep_fraction, self.config.k, rng),
            PolicyKind::InfoBatch => infobatch_select(batch, self.config.keep_fraction, rng),
        }
    }
}

/// One sample carrying its raw output-layer gradient, the input to the slap
/// feature pipeline.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub id: SampleId,
    pub loss: f64,
    pub gradient: SequenceGradient,
}

/// Output of [`slap_select_raw`].
#[derive(Debug)]
pub struct RawSelection {
    pub coreset: Coreset,
    pub state: SecondMomentState,
    /// The batch with the features that were used for selection, for callers
    /// that persist them.
    pub batch: Batch,
}

/// SLAP on a batch whose features are already present: stratify by loss,
/// draw per-stratum quotas under exp(loss) weighting, then fill each quota by
/// greedy max-min selection. No raw gradients are supplied on this path, so
/// there is no second-moment update.
pub fn slap_select(
    batch: &Batch,
    config: &SelectionConfig,
    rng: &mut impl RandomStream,
) -> Result<Coreset> {
    config.validate()?;
    let partition = partition_by_loss(batch, config.k)?;
    let counts = sample_selection_counts(batch, &partition, config.keep_fraction, rng)?;
    greedy_max_min_select(&partition, &counts, batch, rng)
}

/// SLAP from raw gradients: compute each sample's feature with the current
/// second-moment state (plain gradient-row norms while the state is at step
/// 0), select, then advance the state once with the mean gradient of the
/// kept samples.
pub fn slap_select_raw(
    samples: &[RawSample],
    config: &SelectionConfig,
    state: &SecondMomentState,
    rng: &mut impl RandomStream,
) -> Result<RawSelection> {
    config.validate()?;
    if samples.is_empty() {
        return Err(SlapError::Integrity("batch must be non-empty".into()));
    }
    let records: Vec<SampleRecord> = samples
        .iter()
        .map(|raw| {
            if raw.gradient.vocab_dim() != state.vocab_dim()
                || raw.gradient.hidden_dim() != state.hidden_dim()
            {
                return Err(SlapError::DimensionMismatch(format!(
                    "sample {} gradient is {}x{}, state is {}x{}",
                    raw.id,
                    raw.gradient.vocab_dim(),
                    raw.gradient.hidden_dim(),
                    state.vocab_dim(),
                    state.hidden_dim()
                )));
            }
            let feature = if state.step() == 0 {
                raw_feature(&raw.gradient)?
            } else {
                hessian_feature(&raw.gradient, state)?
            };
            SampleRecord::new(raw.id, raw.loss, feature)
        })
        .collect::<Result<_>>()?;
    let batch = Batch::new(records)?;
    let coreset = slap_select(&batch, config, rng)?;

    let kept: std::collections::HashSet<SampleId> = coreset.ids().into_iter().collect();
    let mut mean = Matrix::zeros(state.vocab_dim(), state.hidden_dim());
    let mut kept_count = 0usize;
    for raw in samples {
        if kept.contains(&raw.id) {
            mean.add_assign(raw.gradient.matrix())?;
            kept_count += 1;
        }
    }
    mean.scale(1.0 / kept_count as f64);
    let next_state = update_second_moment(state, &SequenceGradient::from_matrix(mean)?)?;
    Ok(RawSelection { coreset, state: next_state, batch })
}

/// Uniform sample without replacement of the target size; weights 1.0.
pub fn random_select(
    batch: &Batch,
    keep_fraction: f64,
    rng: &mut impl RandomStream,
) -> Result<Coreset> {
    validate_keep(keep_fraction)?;
    let target = coreset_target_size(keep_fraction, batch.len());
    let mut pool: Vec<usize> = (0..batch.len()).collect();
    let mut entries = Vec::with_capacity(target);
    for order in 0..target {
        let pick = rng.uniform_usize(pool.len());
        let pos = pool.remove(pick);
        entries.push(CoresetEntry {
            id: batch.samples()[pos].id,
            order,
            weight: 1.0,
            stratum: 0,
            min_dist_at_selection: None,
        });
    }
    Ok(Coreset::new(entries))
}

/// Top samples by descending loss, ties broken by lowest id; seed-free.
pub fn online_hard_select(batch: &Batch, keep_fraction: f64) -> Result<Coreset> {
    validate_keep(keep_fraction)?;
    let target = coreset_target_size(keep_fraction, batch.len());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = &batch.samples()[a];
        let sb = &batch.samples()[b];
        sb.loss
            .partial_cmp(&sa.loss)
            .expect("losses are finite")
            .then(sa.id.cmp(&sb.id))
    });
    let entries = order[..target]
        .iter()
        .enumerate()
        .map(|(rank, &pos)| CoresetEntry {
            id: batch.samples()[pos].id,
            order: rank,
            weight: 1.0,
            stratum: 0,
            min_dist_at_selection: None,
        })
        .collect();
    Ok(Coreset::new(entries))
}

/// Per-stratum quotas for ccs: split the target as evenly as possible over
/// nonempty strata (remainder to the lowest indices), clip to populations,
/// and cascade any shortfall to the remaining spare capacity in ascending
/// stratum order.
fn ccs_quotas(sizes: &[usize], target: usize) -> Vec<usize> {
    let nonempty: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    let mut quotas = vec![0usize; sizes.len()];
    let base = target / nonempty.len();
    let remainder = target % nonempty.len();
    for (rank, &index) in nonempty.iter().enumerate() {
        quotas[index] = base + usize::from(rank < remainder);
    }
    let mut shortfall = 0usize;
    for &index in &nonempty {
        if quotas[index] > sizes[index] {
            shortfall += quotas[index] - sizes[index];
            quotas[index] = sizes[index];
        }
    }
    for &index in &nonempty {
        if shortfall == 0 {
            break;
        }
        let spare = sizes[index] - quotas[index];
        let take = spare.min(shortfall);
        quotas[index] += take;
        shortfall -= take;
    }
    debug_assert_eq!(shortfall, 0, "target exceeds population");
    quotas
}

/// Loss-stratified uniform choice: even per-stratum quotas with shortfall
/// cascade, then uniform draws without replacement inside each stratum.
pub fn ccs_select(
    batch: &Batch,
    keep_fraction: f64,
    k: usize,
    rng: &mut impl RandomStream,
) -> Result<Coreset> {
    validate_keep(keep_fraction)?;
    let target = coreset_target_size(keep_fraction, batch.len());
    let partition = partition_by_loss(batch, k)?;
    let sizes = partition.stratum_sizes(batch);
    let quotas = ccs_quotas(&sizes, target);
    let mut entries = Vec::with_capacity(target);
    for stratum in 0..k {
        let mut pool = partition.members(batch, stratum);
        for _ in 0..quotas[stratum] {
            let pick = rng.uniform_usize(pool.len());
            let pos = pool.remove(pick);
            entries.push(CoresetEntry {
                id: batch.samples()[pos].id,
                order: entries.len(),
                weight: 1.0,
                stratum,
                min_dist_at_selection: None,
            });
        }
    }
    Ok(Coreset::new(entries))
}

/// Threshold rule solved for infobatch: samples at or above the threshold are
/// always kept; the rest survive a Bernoulli draw tuned so the expected kept
/// count equals the target.
#[derive(Debug, Clone, PartialEq)]
struct InfoBatchRule {
    /// Batch positions that are always kept, in batch order.
    always_kept: Vec<usize>,
    /// Remaining positions (the pruning region), in batch order.
    pruning_region: Vec<usize>,
    keep_probability: f64,
}

fn infobatch_rule(losses: &[f64], target: usize) -> InfoBatchRule {
    let n = losses.len();
    let mean = losses.iter().sum::<f64>() / n as f64;
    let above: Vec<usize> = (0..n).filter(|&i| losses[i] >= mean).collect();
    let (always_kept, pruning_region): (Vec<usize>, Vec<usize>) = if above.len() <= target {
        let below = (0..n).filter(|&i| losses[i] < mean).collect();
        (above, below)
    } else {
        // The mean threshold keeps too many samples; raise it to the lowest
        // distinct loss value whose strictly-greater count fits the target.
        let mut distinct: Vec<f64> = losses.to_vec();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        distinct.dedup();
        let cut = distinct
            .iter()
            .copied()
            .find(|&d| losses.iter().filter(|&&l| l > d).count() <= target)
            .expect("the maximum loss always satisfies the bound");
        let above: Vec<usize> = (0..n).filter(|&i| losses[i] > cut).collect();
        let below = (0..n).filter(|&i| losses[i] <= cut).collect();
        (above, below)
    };
    let keep_probability = if pruning_region.is_empty() {
        1.0
    } else {
        (target - always_kept.len()) as f64 / pruning_region.len() as f64
    };
    InfoBatchRule { always_kept, pruning_region, keep_probability }
}

/// Keep all samples at or above the solved loss threshold with weight 1.0;
/// keep each below-threshold sample independently with probability `p` and
/// weight `1/p`. The coreset size is random with expectation equal to the
/// target; the expected total weight equals `|B|` whenever `p > 0`.
pub fn infobatch_select(
    batch: &Batch,
    keep_fraction: f64,
    rng: &mut impl RandomStream,
) -> Result<Coreset> {
    validate_keep(keep_fraction)?;
    let target = coreset_target_size(keep_fraction, batch.len());
    let rule = infobatch_rule(&batch.losses(), target);
    let mut kept: Vec<(usize, f64)> = rule.always_kept.iter().map(|&p| (p, 1.0)).collect();
    for &pos in &rule.pruning_region {
        // One uniform per below-threshold sample, in batch order.
        let u = rng.next_f64();
        if u < rule.keep_probability {
            kept.push((pos, 1.0 / rule.keep_probability));
        }
    }
    kept.sort_by_key(|&(pos, _)| pos);
    let entries = kept
        .into_iter()
        .enumerate()
        .map(|(order, (pos, weight))| CoresetEntry {
            id: batch.samples()[pos].id,
            order,
            weight,
            stratum: 0,
            min_dist_at_selection: None,
        })
        .collect();
    Ok(Coreset::new(entries))
}

fn validate_keep(keep_fraction: f64) -> Result<()> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SlapError::Config(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    Ok(())
}
