//! Dev scratch: inspect kept-set composition per step for slap vs random.

use slap_core::features::{FeatureVector, SecondMomentState, SequenceGradient};
use slap_core::matrix::Matrix;
use slap_core::rng::{RandomStream, Xoshiro256PlusPlus};
use slap_core::selector::{random_select, slap_select_raw, RawSample};
use slap_core::stratify::SelectionConfig;
use slap_sim::dataset::{generate_dataset, SyntheticDatasetSpec};
use slap_sim::model::{forward_backward, ToyModel};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let hidden: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(16);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let n_classes = 8usize;
    let clusters = 4usize;
    let n_protos = n_classes * clusters;
    let spec = SyntheticDatasetSpec {
        n_classes,
        hidden_dim: hidden,
        n_train: n_protos * 20,
        n_val: n_protos * 10,
        clusters_per_class: clusters,
        redundancy: 20,
        noise_fraction: 0.1,
        seed: 7,
    };
    let (train, _val) = generate_dataset(&spec).unwrap();
    let config = SelectionConfig { keep_fraction: 0.5, k: 8, seed: 0, beta2: 0.999, epsilon: 1e-8 };

    let mut model = ToyModel::zeros(n_classes, hidden);
    let mut state = SecondMomentState::new(n_classes, hidden, 0.999, 1e-8).unwrap();
    let mut shuffle_rng = Xoshiro256PlusPlus::seed_from_labeled(0, "train/shuffle");
    let mut policy_rng = Xoshiro256PlusPlus::seed_from_labeled(0, "train/policy");

    for epoch in 0..3 {
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.uniform_usize(i + 1);
            order.swap(i, j);
        }
        for (step, chunk) in order.chunks(64).enumerate() {
            let mut raw = Vec::new();
            let mut losses = Vec::new();
            for &index in chunk {
                let p = &train[index];
                let (loss, og, _) = forward_backward(&model, &p.x, p.label).unwrap();
                let mut m = Matrix::zeros(n_classes, hidden);
                for (i, &g) in og.iter().enumerate() {
                    for (j, &x) in p.x.iter().enumerate() {
                        m.set(i, j, g * x);
                    }
                }
                raw.push(RawSample {
                    id: index as u64,
                    loss,
                    gradient: SequenceGradient::from_matrix(m).unwrap(),
                });
                losses.push(loss);
            }
            let sel = slap_select_raw(&raw, &config, &state, &mut policy_rng).unwrap();
            state = sel.state;
            let slap_ids: Vec<usize> = sel.coreset.ids().iter().map(|&i| i as usize).collect();
            let rand_ids: Vec<usize> = {
                let batch = slap_core::stratify::Batch::new(
                    chunk
                        .iter()
                        .zip(&losses)
                        .map(|(&i, &l)| {
                            slap_core::stratify::SampleRecord::new(
                                i as u64,
                                l,
                                FeatureVector::new(vec![]).unwrap(),
                            )
                            .unwrap()
                        })
                        .collect(),
                )
                .unwrap();
                random_select(&batch, 0.5, &mut policy_rng)
                    .unwrap()
                    .ids()
                    .iter()
                    .map(|&i| i as usize)
                    .collect()
            };
            let stats = |ids: &[usize]| {
                let noisy = ids.iter().filter(|&&i| train[i].label != train[i].clean_label).count();
                let protos: std::collections::HashSet<usize> =
                    ids.iter().map(|&i| (i / 20) % n_protos).collect();
                (noisy, protos.len())
            };
            let batch_noisy = chunk
                .iter()
                .filter(|&&i| train[i].label != train[i].clean_label)
                .count();
            let (sn, sp) = stats(&slap_ids);
            let (rn, rp) = stats(&rand_ids);
            if step % 4 == 0 {
                let lmin = losses.iter().cloned().fold(f64::INFINITY, f64::min);
                let lmax = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                println!(
                    "ep{epoch} step{step}: loss range [{lmin:.2},{lmax:.2}] batch_noisy={batch_noisy} | slap: noisy={sn} protos={sp} | random: noisy={rn} protos={rp}"
                );
            }

            // train on the slap selection (arbitrary; just to evolve losses)
            let kept: std::collections::HashSet<usize> = slap_ids.iter().cloned().collect();
            let mut grad_w = Matrix::zeros(n_classes, hidden);
            let mut grad_b = vec![0.0; n_classes];
            let mut total_w = 0.0;
            for &index in chunk {
                if !kept.contains(&index) {
                    continue;
                }
                let p = &train[index];
                let (_, og, _) = forward_backward(&model, &p.x, p.label).unwrap();
                total_w += 1.0;
                for (i, &g) in og.iter().enumerate() {
                    grad_b[i] += g;
                    for (j, &x) in p.x.iter().enumerate() {
                        let at = grad_w.get(i, j);
                        grad_w.set(i, j, at + g * x);
                    }
                }
            }
            let scale = lr / total_w;
            for i in 0..n_classes {
                model.bias[i] -= scale * grad_b[i];
                for j in 0..hidden {
                    let w = model.weight.get(i, j);
                    model.weight.set(i, j, w - scale * grad_w.get(i, j));
                }
            }
        }
    }
}
