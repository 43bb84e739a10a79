//! Dev scratch: sweep trend-check configurations.

use slap_core::selector::PolicyKind;
use slap_core::stratify::SelectionConfig;
use slap_sim::compare::compare_policies;
use slap_sim::dataset::SyntheticDatasetSpec;
use slap_sim::train::TrainParams;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let n_classes: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let hidden: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(16);
    let clusters: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(4);
    let dataset_seed: u64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(7);
    let noise: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let batch: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(64);
    let k: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(8);

    let n_protos = n_classes * clusters;
    let spec = SyntheticDatasetSpec {
        n_classes,
        hidden_dim: hidden,
        n_train: args.get(10).map(|s: &String| s.parse().unwrap()).unwrap_or(n_protos * 20),
        n_val: n_protos * 10,
        clusters_per_class: clusters,
        redundancy: 20,
        noise_fraction: noise,
        seed: dataset_seed,
    };
    let params = TrainParams { epochs, learning_rate: lr, batch_size: batch };
    let mut config = SelectionConfig::default();
    config.k = k;
    let seeds: Vec<u64> = (0..10).collect();
    let kinds = [PolicyKind::Slap, PolicyKind::Random, PolicyKind::OnlineHard, PolicyKind::Ccs, PolicyKind::InfoBatch];

    let t0 = std::time::Instant::now();
    let report = compare_policies(&spec, &config, &params, &kinds, &[0.5], &seeds).unwrap();
    let slap: Vec<f64> = report.cells[0].final_val_losses.clone();
    let random: Vec<f64> = report.cells[1].final_val_losses.clone();
    let hard: Vec<f64> = report.cells[2].final_val_losses.clone();
    let slap_vs_random = slap.iter().zip(&random).filter(|(s, r)| s <= r).count();
    let slap_vs_hard = slap.iter().zip(&hard).filter(|(s, h)| s <= h).count();
    println!(
        "lr={lr} ep={epochs} D={n_classes} H={hidden} cl={clusters} ds={dataset_seed} noise={noise} b={batch} k={k}: slap<=random {slap_vs_random}/10, slap<=hard {slap_vs_hard}/10  ({:.1}s)",
        t0.elapsed().as_secs_f64()
    );
    for cell in &report.cells {
        println!(
            "  {:12} keep={} mean={:.4} std={:.4}",
            cell.policy, cell.keep_fraction, cell.mean_final_val_loss, cell.std_final_val_loss
        );
    }
    for (i, (s, r)) in slap.iter().zip(&random).enumerate() {
        println!("    seed {i}: slap {s:.4} random {r:.4} hard {:.4}", hard[i]);
    }
}
