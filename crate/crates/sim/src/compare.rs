//! Cross-product policy comparison.
//!
//! Runs every (policy, keep rate, seed) combination on one generated dataset
//! and aggregates per-cell mean/stdev of the final validation loss together
//! with the simulated FLOPs. Runs execute in parallel; results are merged in
//! job order, so the report is deterministic regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use slap_core::selector::{PolicyKind, SelectionPolicy};
use slap_core::stratify::SelectionConfig;
use slap_core::Result;

use crate::dataset::{generate_dataset, SyntheticDatasetSpec};
use crate::train::{run_training, TrainParams, TrainRun};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub policy: String,
    pub keep_fraction: f64,
    pub seeds: Vec<u64>,
    pub final_val_losses: Vec<f64>,
    pub mean_final_val_loss: f64,
    pub std_final_val_loss: f64,
    pub mean_total_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cells: Vec<ComparisonCell>,
    pub runs: Vec<TrainRun>,
}

pub fn compare_policies(
    spec: &SyntheticDatasetSpec,
    base_config: &SelectionConfig,
    params: &TrainParams,
    kinds: &[PolicyKind],
    keep_rates: &[f64],
    seeds: &[u64],
) -> Result<ComparisonReport> {
    let (train, val) = generate_dataset(spec)?;
    let jobs: Vec<(PolicyKind, f64, u64)> = kinds
        .iter()
        .flat_map(|&kind| {
            keep_rates.iter().flat_map(move |&keep| {
                seeds.iter().map(move |&seed| (kind, keep, seed))
            })
        })
        .collect();
    let runs: Vec<TrainRun> = jobs
        .par_iter()
        .map(|&(kind, keep, seed)| {
            let config = SelectionConfig { keep_fraction: keep, ..base_config.clone() };
            let policy = SelectionPolicy::new(kind, config);
            run_training(&train, &val, &policy, params, seed)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(kinds.len() * keep_rates.len());
    for &kind in kinds {
        for &keep in keep_rates {
            let cell_runs: Vec<&TrainRun> = runs
                .iter()
                .filter(|r| r.policy.kind == kind && r.policy.config.keep_fraction == keep)
                .collect();
            let losses: Vec<f64> = cell_runs.iter().map(|r| r.final_val_loss).collect();
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            let variance = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
                / losses.len() as f64;
            let mean_flops =
                cell_runs.iter().map(|r| r.total_flops).sum::<f64>() / cell_runs.len() as f64;
            cells.push(ComparisonCell {
                policy: kind.name().to_string(),
                keep_fraction: keep,
                seeds: seeds.to_vec(),
                final_val_losses: losses,
                mean_final_val_loss: mean,
                std_final_val_loss: variance.sqrt(),
                mean_total_flops: mean_flops,
            });
        }
    }
    Ok(ComparisonReport { cells, runs })
}

/// Delimited table of the per-cell aggregates.
pub fn report_to_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(
        "policy,keep_fraction,n_seeds,mean_final_val_loss,std_final_val_loss,mean_total_flops\n",
    );
    for cell in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.policy,
            cell.keep_fraction,
            cell.seeds.len(),
            cell.mean_final_val_loss,
            cell.std_final_val_loss,
            cell.mean_total_flops
        ));
    }
    out
}
