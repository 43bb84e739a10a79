//! Loss stratification and per-stratum quota allocation.
//!
//! A batch is split into K intervals of even width over its loss range.
//! The coreset size is `round(keep_fraction * |B|)` clamped to `[1, |B|]`;
//! that many samples are drawn without replacement with probability
//! proportional to normalized exp(loss), and the per-stratum tally of the
//! drawn ids becomes the selection quota. The drawn identities themselves are
//! discarded; only the counts flow downstream.
//!
//! Sampling without replacement means sequential weighted draws: each draw
//! renormalizes by recomputing the total weight of the remaining pool in
//! batch order, consumes exactly one uniform from the stream, and walks the
//! cumulative weights in batch order. Keep that procedure stable: it is part
//! of the reproducibility contract alongside [`crate::rng::STREAM_VERSION`].

use crate::error::{Result, SlapError};
use crate::features::FeatureVector;
use crate::rng::RandomStream;
use std::collections::HashMap;

pub type SampleId = u64;

/// One training example's selection-relevant state.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: SampleId,
    pub loss: f64,
    pub feature: FeatureVector,
}

impl SampleRecord {
    pub fn new(id: SampleId, loss: f64, feature: FeatureVector) -> Result<Self> {
        if !loss.is_finite() {
            return Err(SlapError::Numeric(format!("sample {id} has non-finite loss")));
        }
        Ok(Self { id, loss, feature })
    }
}

/// Non-empty ordered collection of samples with unique ids and a common
/// feature length.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    samples: Vec<SampleRecord>,
}

impl Batch {
    pub fn new(samples: Vec<SampleRecord>) -> Result<Self> {
        if samples.is_empty() {
            return Err(SlapError::Integrity("batch must be non-empty".into()));
        }
        let feature_len = samples[0].feature.len();
        let mut seen = HashMap::with_capacity(samples.len());
        for sample in &samples {
            if sample.feature.len() != feature_len {
                return Err(SlapError::DimensionMismatch(format!(
                    "sample {} has feature length {}, batch declared {}",
                    sample.id,
                    sample.feature.len(),
                    feature_len
                )));
            }
            if seen.insert(sample.id, ()).is_some() {
                return Err(SlapError::Integrity(format!(
                    "duplicate sample id {} within a batch",
                    sample.id
                )));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.loss).collect()
    }
}

/// K even-width loss intervals with per-sample assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumPartition {
    k: usize,
    lower: f64,
    width: f64,
    assignment: HashMap<SampleId, usize>,
}

impl StratumPartition {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn stratum_of(&self, id: SampleId) -> Option<usize> {
        self.assignment.get(&id).copied()
    }

    /// Members of stratum `index` as positions into the batch, in batch order.
    pub fn members(&self, batch: &Batch, index: usize) -> Vec<usize> {
        batch
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| self.assignment[&s.id] == index)
            .map(|(pos, _)| pos)
            .collect()
    }

    pub fn stratum_sizes(&self, batch: &Batch) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for sample in batch.samples() {
            sizes[self.assignment[&sample.id]] += 1;
        }
        sizes
    }
}

/// Per-stratum quotas, summing to the coreset size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionCounts {
    counts: Vec<usize>,
}

impl SelectionCounts {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Engine configuration shared by the selection policies.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelectionConfig {
    pub keep_fraction: f64,
    pub k: usize,
    pub seed: u64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { keep_fraction: 1.0, k: 8, seed: 0, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(SlapError::Config(format!(
                "keep_fraction must lie in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        if self.k == 0 {
            return Err(SlapError::Config("k must be >= 1".into()));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(SlapError::Config(format!("beta2 must lie in (0,1), got {}", self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(SlapError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Coreset size for a batch of `n` samples: round-half-up of
/// `keep_fraction * n`, clamped to `[1, n]`.
pub fn coreset_target_size(keep_fraction: f64, n: usize) -> usize {
    ((keep_fraction * n as f64).round() as usize).clamp(1, n)
}

/// Split the batch's loss range into `k` even-width intervals and assign each
/// sample by `floor((loss - min) / width)`, clamped so the maximum loss lands
/// in the last stratum. A zero-width range puts every sample in stratum 0.
pub fn partition_by_loss(batch: &Batch, k: usize) -> Result<StratumPartition> {
    if k == 0 {
        return Err(SlapError::Config("k must be >= 1".into()));
    }
    let min_loss = batch.samples().iter().map(|s| s.loss).fold(f64::INFINITY, f64::min);
    let max_loss = batch.samples().iter().map(|s| s.loss).fold(f64::NEG_INFINITY, f64::max);
    let width = (max_loss - min_loss) / k as f64;
    let mut assignment = HashMap::with_capacity(batch.len());
    for sample in batch.samples() {
        let index = if width == 0.0 {
            0
        } else {
            (((sample.loss - min_loss) / width).floor() as usize).min(k - 1)
        };
        assignment.insert(sample.id, index);
    }
    Ok(StratumPartition { k, lower: min_loss, width, assignment })
}

/// Normalized exp(loss) weights with max-subtraction for overflow safety.
pub fn softmax_weights(losses: &[f64]) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(SlapError::Config("softmax_weights requires at least one loss".into()));
    }
    if let Some(bad) = losses.iter().find(|x| !x.is_finite()) {
        return Err(SlapError::Numeric(format!("non-finite loss {bad}")));
    }
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = losses.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Draw the coreset size without replacement under exp(loss) weights and
/// tally the drawn ids per stratum. Consumes one uniform per draw.
pub fn sample_selection_counts(
    batch: &Batch,
    partition: &StratumPartition,
    keep_fraction: f64,
    rng: &mut impl RandomStream,
) -> Result<SelectionCounts> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SlapError::Config(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let target = coreset_target_size(keep_fraction, batch.len());
    let weights = softmax_weights(&batch.losses())?;
    let mut alive = vec![true; batch.len()];
    let mut counts = vec![0usize; partition.k()];
    for _ in 0..target {
        let total: f64 = weights
            .iter()
            .zip(&alive)
            .filter(|(_, &a)| a)
            .map(|(w, _)| w)
            .sum();
        let u = rng.next_f64() * total;
        let mut cumulative = 0.0;
        let mut drawn = None;
        for (pos, (&w, &a)) in weights.iter().zip(&alive).enumerate() {
            if !a {
                continue;
            }
            cumulative += w;
            if u < cumulative {
                drawn = Some(pos);
                break;
            }
        }
        // Round-off can leave the cumulative walk short of u; fall back to
        // the last remaining sample.
        let pos = drawn.unwrap_or_else(|| {
            alive.iter().rposition(|&a| a).expect("pool cannot be empty mid-draw")
        });
        alive[pos] = false;
        let id = batch.samples()[pos].id;
        counts[partition.stratum_of(id).expect("every sample is assigned")] += 1;
    }
    Ok(SelectionCounts { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256PlusPlus;
    use proptest::prelude::*;

    fn batch_from_losses(losses: &[f64]) -> Batch {
        let samples = losses
            .iter()
            .enumerate()
            .map(|(i, &loss)| {
                SampleRecord::new(i as u64, loss, FeatureVector::new(vec![0.0]).unwrap()).unwrap()
            })
            .collect();
        Batch::new(samples).unwrap()
    }

    #[test]
    fn batch_rejects_duplicates_and_empty() {
        let f = FeatureVector::new(vec![0.0]).unwrap();
        let dup = vec![
            SampleRecord::new(1, 0.0, f.clone()).unwrap(),
            SampleRecord::new(1, 1.0, f.clone()).unwrap(),
        ];
        assert!(matches!(Batch::new(dup), Err(SlapError::Integrity(_))));
        assert!(matches!(Batch::new(vec![]), Err(SlapError::Integrity(_))));
    }

    #[test]
    fn batch_rejects_ragged_features() {
        let a = SampleRecord::new(0, 0.0, FeatureVector::new(vec![0.0]).unwrap()).unwrap();
        let b = SampleRecord::new(1, 0.0, FeatureVector::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(Batch::new(vec![a, b]), Err(SlapError::DimensionMismatch(_))));
    }

    #[test]
    fn partition_floor_arithmetic_with_max_clamped() {
        let batch = batch_from_losses(&[0.0, 1.0, 2.0, 3.0]);
        let p = partition_by_loss(&batch, 3).unwrap();
        assert_eq!(p.width(), 1.0);
        assert_eq!(p.stratum_of(0), Some(0));
        assert_eq!(p.stratum_of(1), Some(1));
        assert_eq!(p.stratum_of(2), Some(2));
        assert_eq!(p.stratum_of(3), Some(2));
    }

    #[test]
    fn partition_degenerate_equal_losses() {
        let batch = batch_from_losses(&[0.7, 0.7, 0.7]);
        let p = partition_by_loss(&batch, 5).unwrap();
        assert_eq!(p.width(), 0.0);
        for id in 0..3 {
            assert_eq!(p.stratum_of(id), Some(0));
        }
    }

    #[test]
    fn partition_hand_case_two_strata() {
        let batch = batch_from_losses(&[0.0, 0.4, 0.5, 0.9, 1.0]);
        let p = partition_by_loss(&batch, 2).unwrap();
        assert_eq!(p.width(), 0.5);
        assert_eq!(p.stratum_of(0), Some(0));
        assert_eq!(p.stratum_of(1), Some(0));
        assert_eq!(p.stratum_of(2), Some(1));
        assert_eq!(p.stratum_of(3), Some(1));
        assert_eq!(p.stratum_of(4), Some(1));
    }

    #[test]
    fn partition_is_deterministic() {
        let batch = batch_from_losses(&[0.3, 1.8, 0.9, 2.4, 0.1]);
        let a = partition_by_loss(&batch, 4).unwrap();
        let b = partition_by_loss(&batch, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_uniform_losses() {
        let w = softmax_weights(&[1.0, 1.0, 1.0]).unwrap();
        for &x in &w {
            assert_eq!(x, 1.0 / 3.0);
        }
    }

    #[test]
    fn softmax_ln2_case() {
        let w = softmax_weights(&[0.0, 2f64.ln()]).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_shift_case() {
        let w = softmax_weights(&[1000.0, 1000.0 + 3f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12);
        assert!((w[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_stable_at_large_magnitudes() {
        let w = softmax_weights(&[1e4, 1e4 - 1.0, -1e4]).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax_weights(&[1.0, f64::INFINITY]), Err(SlapError::Numeric(_))));
    }

    #[test]
    fn keep_everything_returns_stratum_sizes() {
        let batch = batch_from_losses(&[0.0, 0.2, 1.1, 2.9, 3.0, 1.4]);
        let p = partition_by_loss(&batch, 3).unwrap();
        let sizes = p.stratum_sizes(&batch);
        for seed in 0..5 {
            let mut rng = Xoshiro256PlusPlus::seed_from(seed);
            let counts = sample_selection_counts(&batch, &p, 1.0, &mut rng).unwrap();
            assert_eq!(counts.counts(), &sizes[..]);
        }
    }

    #[test]
    fn singleton_batch_keep_all() {
        let batch = batch_from_losses(&[0.4]);
        let p = partition_by_loss(&batch, 1).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from(1);
        let counts = sample_selection_counts(&batch, &p, 1.0, &mut rng).unwrap();
        assert_eq!(counts.counts(), &[1]);
    }

    #[test]
    fn rejects_out_of_range_keep_fraction() {
        let batch = batch_from_losses(&[0.0, 1.0]);
        let p = partition_by_loss(&batch, 2).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from(0);
        assert!(matches!(
            sample_selection_counts(&batch, &p, 0.0, &mut rng),
            Err(SlapError::Config(_))
        ));
        assert!(matches!(
            sample_selection_counts(&batch, &p, 1.5, &mut rng),
            Err(SlapError::Config(_))
        ));
    }

    /// Expected per-stratum count under sequential weighted draws without
    /// replacement, by exhaustive enumeration of ordered draw sequences.
    fn enumerate_expected_counts(
        losses: &[f64],
        target: usize,
        stratum: &[usize],
        k: usize,
    ) -> Vec<f64> {
        fn recurse(
            weights: &[f64],
            taken: &mut Vec<usize>,
            prob: f64,
            remaining: usize,
            expected: &mut [f64],
            stratum: &[usize],
        ) {
            if remaining == 0 {
                for &pos in taken.iter() {
                    expected[stratum[pos]] += prob;
                }
                return;
            }
            let total: f64 = weights
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken.contains(i))
                .map(|(_, w)| w)
                .sum();
            for i in 0..weights.len() {
                if taken.contains(&i) {
                    continue;
                }
                taken.push(i);
                recurse(
                    weights,
                    taken,
                    prob * weights[i] / total,
                    remaining - 1,
                    expected,
                    stratum,
                );
                taken.pop();
            }
        }
        let weights = softmax_weights(losses).unwrap();
        let mut expected = vec![0.0; k];
        recurse(&weights, &mut Vec::new(), 1.0, target.min(losses.len()), &mut expected, stratum);
        expected
    }

    #[test]
    fn high_loss_stratum_dominates_draws() {
        // losses [0, 0, 10, 10], K = 2, keep 2: the enumeration oracle puts
        // the expected high-stratum count essentially at 2, and the seeded
        // empirical mean over 100k trials agrees.
        let losses = [0.0, 0.0, 10.0, 10.0];
        let batch = batch_from_losses(&losses);
        let p = partition_by_loss(&batch, 2).unwrap();
        let strata: Vec<usize> = (0..4).map(|id| p.stratum_of(id as u64).unwrap()).collect();
        let expected = enumerate_expected_counts(&losses, 2, &strata, 2);
        assert!(expected[1] >= 1.99, "enumerated expectation {expected:?}");

        let mut rng = Xoshiro256PlusPlus::seed_from(2024);
        let trials = 100_000;
        let mut total_high = 0usize;
        for _ in 0..trials {
            let counts = sample_selection_counts(&batch, &p, 0.5, &mut rng).unwrap();
            total_high += counts.counts()[1];
        }
        let mean_high = total_high as f64 / trials as f64;
        assert!(mean_high >= 1.99, "empirical mean {mean_high}");
        assert!((mean_high - expected[1]).abs() < 0.005);
    }

    #[test]
    fn enumeration_oracle_matches_empirical_on_mixed_batch() {
        let losses = [0.0, 0.5, 1.0, 1.5, 2.0];
        let batch = batch_from_losses(&losses);
        let p = partition_by_loss(&batch, 3).unwrap();
        let strata: Vec<usize> = (0..5).map(|id| p.stratum_of(id as u64).unwrap()).collect();
        let expected = enumerate_expected_counts(&losses, 3, &strata, 3);

        let mut rng = Xoshiro256PlusPlus::seed_from(99);
        let trials = 200_000;
        let mut sums = [0usize; 3];
        for _ in 0..trials {
            let counts = sample_selection_counts(&batch, &p, 0.6, &mut rng).unwrap();
            for (s, &c) in sums.iter_mut().zip(counts.counts()) {
                *s += c;
            }
        }
        for (i, &s) in sums.iter().enumerate() {
            let mean = s as f64 / trials as f64;
            assert!(
                (mean - expected[i]).abs() < 0.01,
                "stratum {i}: empirical {mean} vs enumerated {}",
                expected[i]
            );
        }
    }

    #[test]
    fn first_draw_probability_is_monotone_in_loss() {
        let w = softmax_weights(&[0.1, 0.4, 0.2, 1.7]).unwrap();
        assert!(w[3] > w[1] && w[1] > w[2] && w[2] > w[0]);
    }

    proptest! {
        #[test]
        fn counts_sum_to_target_for_every_seed(
            losses in proptest::collection::vec(-50.0f64..50.0, 1..20),
            k in 1usize..6,
            keep in 0.05f64..1.0,
            seed in 0u64..500,
        ) {
            let batch = batch_from_losses(&losses);
            let p = partition_by_loss(&batch, k).unwrap();
            let mut rng = Xoshiro256PlusPlus::seed_from(seed);
            let counts = sample_selection_counts(&batch, &p, keep, &mut rng).unwrap();
            prop_assert_eq!(counts.total(), coreset_target_size(keep, batch.len()));
            // structural: tallied draws cannot exceed stratum populations
            let sizes = p.stratum_sizes(&batch);
            for (c, s) in counts.counts().iter().zip(&sizes) {
                prop_assert!(c <= s);
            }
        }

        #[test]
        fn softmax_is_shift_invariant(
            losses in proptest::collection::vec(-100.0f64..100.0, 1..16),
            shift in -500.0f64..500.0,
        ) {
            let base = softmax_weights(&losses).unwrap();
            let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
            let moved = softmax_weights(&shifted).unwrap();
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_sums_to_one(
            losses in proptest::collection::vec(-1e4f64..1e4, 1..16),
        ) {
            let w = softmax_weights(&losses).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn partition_assignment_is_total_and_in_range(
            losses in proptest::collection::vec(-1e3f64..1e3, 1..24),
            k in 1usize..8,
        ) {
            let batch = batch_from_losses(&losses);
            let p = partition_by_loss(&batch, k).unwrap();
            for s in batch.samples() {
                let index = p.stratum_of(s.id).expect("assignment total");
                prop_assert!(index < k);
            }
        }
    }
}
