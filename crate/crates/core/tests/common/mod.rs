#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cascadexml::cascade::{batch_gradients, CascadeModel, ModelConfig};
use cascadexml::data::{Dataset, Instance, SparseVector};
use cascadexml::dismec::ConcatFeatures;
use cascadexml::encoder::EncoderConfig;
use cascadexml::hlt::{build_hlt, LabelTree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sparse(rng: &mut ChaCha8Rng, dim: usize, nnz: usize) -> SparseVector {
    let entries = (0..nnz)
        .map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(0.1..1.0)))
        .collect();
    SparseVector::from_unsorted(dim, entries).unwrap().normalized()
}

/// Every power of `b` strictly between 1 and `num_labels`.
pub fn all_levels(num_labels: usize, b: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = b;
    while k < num_labels {
        out.push(k);
        k *= b;
    }
    out
}

/// Balanced tree over random label centroids.
pub fn random_tree(num_labels: usize, b: usize, levels: &[usize], seed: u64) -> LabelTree {
    let mut r = rng(seed);
    let centroids: Vec<SparseVector> = (0..num_labels).map(|_| random_sparse(&mut r, 64, 6)).collect();
    build_hlt(&centroids, levels, b, seed).unwrap()
}

/// Relabels a perfectly balanced `b`-ary tree's labels by a random permutation,
/// without running k-means.
pub fn permuted_tree(num_labels: usize, b: usize, levels: &[usize], seed: u64) -> LabelTree {
    let mut perm: Vec<u32> = (0..num_labels as u32).collect();
    perm.shuffle(&mut rng(seed));
    let last = *levels.last().unwrap();
    let stride = (num_labels / last) as u32;
    let mut label_parent = vec![0u32; num_labels];
    for (slot, &l) in perm.iter().enumerate() {
        label_parent[l as usize] = slot as u32 / stride;
    }
    let mut parents: Vec<Vec<u32>> = Vec::new();
    for w in levels.windows(2) {
        let s = (w[1] / w[0]) as u32;
        parents.push((0..w[1] as u32).map(|i| i / s).collect());
    }
    parents.push(label_parent);
    let mut sizes = levels.to_vec();
    sizes.push(num_labels);
    let _ = b;
    LabelTree::from_parents(sizes, parents).unwrap()
}

pub fn model_config(input_dim: usize, hidden: usize, levels: usize, beams: Vec<usize>, seed: u64) -> ModelConfig {
    let taps: Vec<usize> = (0..=levels).map(|t| t + 2).collect();
    ModelConfig {
        encoder: EncoderConfig {
            input_dim,
            hidden_dim: hidden,
            num_layers: levels + 2,
            tap_layers: taps,
            dropout_rates: vec![0.0; levels + 1],
            concat_first_tap: false,
            seed,
        },
        beam_widths: beams,
        train_shortlist_caps: None,
        use_bias: true,
    }
}

pub fn random_model(tree: LabelTree, input_dim: usize, hidden: usize, beams: Vec<usize>, seed: u64) -> CascadeModel {
    let levels = tree.num_levels();
    CascadeModel::new(model_config(input_dim, hidden, levels, beams, seed), tree).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, num_labels: usize, max: usize) -> Vec<u32> {
    let n = rng.gen_range(1..=max);
    let mut y: Vec<u32> = (0..n).map(|_| rng.gen_range(0..num_labels as u32)).collect();
    y.sort_unstable();
    y.dedup();
    y
}

pub fn random_dataset(seed: u64, n: usize, dim: usize, num_labels: usize) -> Dataset {
    let mut r = rng(seed);
    let instances = (0..n)
        .map(|_| Instance {
            features: random_sparse(&mut r, dim, 8),
            labels: random_labels(&mut r, num_labels, 3),
        })
        .collect();
    Dataset {
        num_features: dim,
        num_labels,
        instances,
    }
}

/// Brute-force `⟨w_l, φ⟩ + b_l` for every label.
pub fn dense_label_scores(model: &CascadeModel, x: &SparseVector) -> Vec<f64> {
    let (taps, _) = model
        .encoder
        .forward(x, cascadexml::encoder::Mode::Inference)
        .unwrap();
    let phi = taps.last().unwrap();
    let c = model.classifiers.last().unwrap();
    (0..c.num_outputs())
        .map(|l| c.weight.row(l).iter().zip(phi).map(|(a, b)| a * b).sum::<f64>() + c.bias[l])
        .collect()
}

/// Plain gradient descent on the squared-hinge objective, run long.
pub fn gd_oracle(features: &[ConcatFeatures], signs: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let dim = features[0].dim();
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let mut v = vec![0.0; dim];
            f.add_to(&mut v, 1.0);
            v
        })
        .collect();
    let lip = 2.0 * lambda + 2.0 * xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
    let step = 1.0 / lip;
    let mut w = vec![0.0; dim];
    for _ in 0..iters {
        let mut g: Vec<f64> = w.iter().map(|v| 2.0 * lambda * v).collect();
        for (x, &y) in xs.iter().zip(signs) {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            if y * z < 1.0 {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += 2.0 * (z - y) * xi;
                }
            }
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
    }
    w
}

fn batch_loss(model: &CascadeModel, batch: &[&Instance]) -> f64 {
    batch_gradients(model, batch, None, 4, None).unwrap().1.loss
}

fn shortlists(model: &CascadeModel, batch: &[&Instance]) -> Vec<Vec<Vec<u32>>> {
    batch
        .iter()
        .map(|i| {
            model
                .instance_pass(&i.features, &i.labels, None, None)
                .unwrap()
                .shortlists
                .into_iter()
                .map(|s| s.ids)
                .collect()
        })
        .collect()
}

/// Central differences on random coordinates of the full cascade objective;
/// returns (compared coordinates, worst relative error).
pub fn check_full_objective(model: &mut CascadeModel, ds: &Dataset, coords: usize, seed: u64) -> (usize, f64) {
    let batch: Vec<&Instance> = ds.instances.iter().collect();
    let (grads, _) = batch_gradients(model, &batch, None, 4, None).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let base_lists = shortlists(model, &batch);
    let sizes: Vec<usize> = analytic.iter().map(|s| s.len()).collect();
    let mut r = rng(seed);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut attempts = 0;
    while compared < coords && attempts < coords * 20 {
        attempts += 1;
        let tensor = r.gen_range(0..sizes.len());
        if sizes[tensor] == 0 {
            continue;
        }
        let idx = r.gen_range(0..sizes[tensor]);
        let g = analytic[tensor][idx];
        if g == 0.0 {
            continue;
        }
        let orig = model.parameters_mut()[tensor][idx];
        model.parameters_mut()[tensor][idx] = orig + eps;
        let plus = batch_loss(model, &batch);
        let same_plus = shortlists(model, &batch) == base_lists;
        model.parameters_mut()[tensor][idx] = orig - eps;
        let minus = batch_loss(model, &batch);
        let same_minus = shortlists(model, &batch) == base_lists;
        model.parameters_mut()[tensor][idx] = orig;
        model.encoder.bump_generation();
        if !(same_plus && same_minus) {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
        compared += 1;
    }
    (compared, worst)
}

