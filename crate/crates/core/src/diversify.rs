//! Greedy max-min selection within strata.
//!
//! The first point is drawn uniformly at random from the lowest-indexed
//! stratum with a nonzero quota. Every later point is the candidate in the
//! current stratum whose minimum L2 feature distance to ALL previously
//! selected points (across strata) is largest, ties broken by lowest sample
//! id. Strata are filled in ascending index order. A per-candidate cache of
//! the minimum distance to the selected set is updated incrementally after
//! each pick, so the total number of distance evaluations is at most
//! `|B| * |S|`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlapError};
use crate::features::FeatureVector;
use crate::rng::RandomStream;
use crate::stratify::{Batch, SampleId, SelectionCounts, StratumPartition};

/// One selected sample, in greedy selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetEntry {
    pub id: SampleId,
    /// Position in the selection order, starting at 0.
    pub order: usize,
    /// Gradient weight applied downstream; 1.0 for all policies except
    /// InfoBatch's rescaled survivors.
    pub weight: f64,
    /// Stratum the sample was selected from.
    pub stratum: usize,
    /// Minimum distance to the already-selected set at the moment of
    /// selection; `None` for the randomly initialized first point. Enables
    /// external replay audits.
    pub min_dist_at_selection: Option<f64>,
}

/// Ordered selection output of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coreset {
    entries: Vec<CoresetEntry>,
}

impl Coreset {
    pub fn new(entries: Vec<CoresetEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[CoresetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<SampleId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }
}

/// Euclidean distance between two feature vectors of equal length.
pub fn l2_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SlapError::DimensionMismatch(format!(
            "feature lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let sum_sq: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum_sq.sqrt())
}

/// Minimum [`l2_distance`] from `candidate` to any feature in `selected`.
pub fn min_distance_to_set(candidate: &FeatureVector, selected: &[FeatureVector]) -> Result<f64> {
    if selected.is_empty() {
        return Err(SlapError::Config(
            "min_distance_to_set requires a non-empty selected set".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for other in selected {
        let d = l2_distance(candidate, other)?;
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// Per-step audit record captured by [`greedy_max_min_select_traced`].
#[derive(Debug, Clone)]
pub struct GreedyStep {
    pub chosen_position: usize,
    pub stratum: usize,
    /// Cached min distance of every not-yet-selected batch position to the
    /// selected set, snapshotted immediately before this step's argmax.
    pub cache_before: Vec<(usize, f64)>,
}

/// Instrumentation for the greedy loop.
#[derive(Debug, Clone, Default)]
pub struct GreedyStats {
    /// Number of pairwise distance evaluations performed.
    pub distance_evals: u64,
    pub steps: Vec<GreedyStep>,
}

pub fn greedy_max_min_select(
    partition: &StratumPartition,
    counts: &SelectionCounts,
    batch: &Batch,
    rng: &mut impl RandomStream,
) -> Result<Coreset> {
    greedy_max_min_select_traced(partition, counts, batch, rng, false).map(|(c, _)| c)
}

/// As [`greedy_max_min_select`], also returning instrumentation. Cache
/// snapshots are collected only when `trace` is set.
pub fn greedy_max_min_select_traced(
    partition: &StratumPartition,
    counts: &SelectionCounts,
    batch: &Batch,
    rng: &mut impl RandomStream,
    trace: bool,
) -> Result<(Coreset, GreedyStats)> {
    if counts.counts().len() != partition.k() {
        return Err(SlapError::Config(format!(
            "counts cover {} strata, partition has {}",
            counts.counts().len(),
            partition.k()
        )));
    }
    let sizes = partition.stratum_sizes(batch);
    for (index, (&quota, &size)) in counts.counts().iter().zip(&sizes).enumerate() {
        if quota > size {
            return Err(SlapError::Integrity(format!(
                "stratum {index} quota {quota} exceeds population {size}"
            )));
        }
    }

    let mut stats = GreedyStats::default();
    let mut entries = Vec::with_capacity(counts.total());
    let mut selected = vec![false; batch.len()];
    let mut min_dist = vec![f64::INFINITY; batch.len()];

    let first_stratum = match counts.counts().iter().position(|&c| c > 0) {
        Some(index) => index,
        None => return Ok((Coreset::new(entries), stats)),
    };

    // Random initialization happens exactly once, in the first stratum that
    // has a quota; all other picks are max-min.
    let init_members = partition.members(batch, first_stratum);
    let init_pos = init_members[rng.uniform_usize(init_members.len())];
    select_point(
        batch,
        init_pos,
        first_stratum,
        None,
        &mut entries,
        &mut selected,
        &mut min_dist,
        &mut stats,
    )?;

    for stratum in first_stratum..partition.k() {
        let quota = counts.counts()[stratum];
        let already = if stratum == first_stratum { 1 } else { 0 };
        if quota == already {
            continue;
        }
        let members = partition.members(batch, stratum);
        for _ in already..quota {
            if trace {
                stats.steps.push(GreedyStep {
                    chosen_position: usize::MAX, // patched below
                    stratum,
                    cache_before: (0..batch.len())
                        .filter(|&p| !selected[p])
                        .map(|p| (p, min_dist[p]))
                        .collect(),
                });
            }
            let mut best: Option<(usize, f64, SampleId)> = None;
            for &pos in &members {
                if selected[pos] {
                    continue;
                }
                let d = min_dist[pos];
                let id = batch.samples()[pos].id;
                let better = match best {
                    None => true,
                    Some((_, bd, bid)) => d > bd || (d == bd && id < bid),
                };
                if better {
                    best = Some((pos, d, id));
                }
            }
            let (pos, dist, _) = best.expect("quota <= population guarantees a candidate");
            if trace {
                stats.steps.last_mut().expect("pushed above").chosen_position = pos;
            }
            select_point(
                batch,
                pos,
                stratum,
                Some(dist),
                &mut entries,
                &mut selected,
                &mut min_dist,
                &mut stats,
            )?;
        }
    }
    Ok((Coreset::new(entries), stats))
}

#[allow(clippy::too_many_arguments)]
fn select_point(
    batch: &Batch,
    pos: usize,
    stratum: usize,
    dist_at_selection: Option<f64>,
    entries: &mut Vec<CoresetEntry>,
    selected: &mut [bool],
    min_dist: &mut [f64],
    stats: &mut GreedyStats,
) -> Result<()> {
    selected[pos] = true;
    entries.push(CoresetEntry {
        id: batch.samples()[pos].id,
        order: entries.len(),
        weight: 1.0,
        stratum,
        min_dist_at_selection: dist_at_selection,
    });
    let chosen_feature = &batch.samples()[pos].feature;
    for (other, sample) in batch.samples().iter().enumerate() {
        if selected[other] {
            continue;
        }
        let d = l2_distance(&sample.feature, chosen_feature)?;
        stats.distance_evals += 1;
        if d < min_dist[other] {
            min_dist[other] = d;
        }
    }
    Ok(())
}
