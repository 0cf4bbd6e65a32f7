mod common;

use cascadexml::bundle::ModelBundle;
use cascadexml::cascade::{training_step, AdamW, CascadeModel};
use cascadexml::config::RunConfig;
use cascadexml::data::{fit_tfidf, generate_synthetic, Dataset, Instance, SyntheticConfig};
use cascadexml::dismec::{objective, predict_linear, DismecParams, SolverParams};
use cascadexml::metrics::{shortlist_recall_all, Metric};
use cascadexml::pipeline;

use common::*;

fn small_data(noise: f64, seed: u64) -> (Dataset, Dataset) {
    generate_synthetic(&SyntheticConfig {
        num_labels: 64,
        depth: 3,
        num_docs: Some(1200),
        vocab: 1024,
        noise,
        extra_labels: 1,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .split_tail(0.25)
}

fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::desk_scale(seed);
    cfg.tree.level_sizes = vec![4, 16];
    cfg.encoder.hidden_dim = 32;
    cfg.encoder.num_layers = 4;
    cfg.encoder.tap_layers = vec![2, 3, 4];
    cfg.encoder.dropout_rates = vec![0.1; 3];
    cfg.beam_widths = vec![2, 4];
    cfg.train.epochs = 10;
    cfg.train.warmup_epochs = 1;
    cfg.train.hold_epochs = 6;
    cfg.train.anneal_epochs = 3;
    cfg
}

fn bundle_bytes(bundle: &ModelBundle) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn noiseless_synthetic_run_finds_true_labels() {
    let (train, test) = small_data(0.0, 3);
    let (bundle, _) = pipeline::train_bundle(&train, None, &small_config(3)).unwrap();
    let recall = pipeline::recall(&bundle, &test, None).unwrap();
    assert!(recall[0] >= 0.99, "level-1 recall {recall:?}");
    let p1 = pipeline::evaluate(&bundle, &test, &[Metric::Precision(1)], None, false).unwrap()[0].1;
    assert!(p1 >= 0.95, "P@1 {p1}");
}

#[test]
fn loss_decreases_over_first_steps() {
    let (train, _) = small_data(0.0, 4);
    let cfg = small_config(4);
    let tfidf = fit_tfidf(&train);
    let tree = pipeline::build_tree(&train, &tfidf, &cfg).unwrap();
    let mut model = CascadeModel::new(cfg.model_config(train.num_features).unwrap(), tree).unwrap();
    let x = tfidf.transform_dataset(&train).unwrap();
    let batch: Vec<&Instance> = x.instances.iter().take(32).collect();
    let mut opt = AdamW::new(0.0);
    let mut losses = Vec::new();
    for _ in 0..11 {
        losses.push(training_step(&mut model, &batch, &mut opt, 1e-4, 1e-3, None, 8, None).unwrap().loss);
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn exhaustive_beams_give_full_recall_and_recall_grows_with_beams() {
    let tree = permuted_tree(64, 2, &[4, 16], 5);
    let model = random_model(tree, 40, 8, vec![1, 1], 5);
    let ds = random_dataset(6, 60, 40, 64);
    assert_eq!(shortlist_recall_all(&model, &ds, &[4, 16]).unwrap(), vec![1.0, 1.0]);
    let mut prev = vec![0.0, 0.0];
    for k in 1..=4 {
        let r = shortlist_recall_all(&model, &ds, &[k, 4 * k]).unwrap();
        assert!(r.iter().zip(&prev).all(|(a, b)| a >= b), "{r:?} < {prev:?}");
        prev = r;
    }
}

#[test]
fn untrained_recall_tracks_beam_coverage() {
    let tree = permuted_tree(256, 2, &[16, 64], 7);
    let model = random_model(tree, 64, 8, vec![4, 8], 7);
    let mut ds = random_dataset(8, 600, 64, 256);
    for inst in &mut ds.instances {
        inst.labels.truncate(1);
    }
    let r = shortlist_recall_all(&model, &ds, &[4, 8]).unwrap();
    assert!((r[0] - 0.25).abs() < 0.1, "level-1 recall {} vs coverage 0.25", r[0]);
}

#[test]
fn scored_candidates_respect_the_structural_bound() {
    let tree = permuted_tree(256, 4, &[4, 16, 64], 9);
    let beams = vec![2, 3, 5];
    let model = random_model(tree, 32, 8, beams.clone(), 9);
    let mut r = rng(9);
    for _ in 0..20 {
        let x = random_sparse(&mut r, 32, 4);
        let pred = model.predict(&x, &beams, 5).unwrap();
        assert!(pred.scored <= 4 + (2 + 3 + 5) * 4);
        assert_eq!(pred.scored, pred.shortlists.iter().map(|s| s.len()).sum::<usize>());
        assert!(pred.labels.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }
}

#[test]
fn bundles_round_trip_and_ignore_worker_count() {
    let (train, test) = small_data(0.1, 10);
    let mut cfg = small_config(10);
    cfg.train.epochs = 3;
    cfg.train.hold_epochs = 1;
    cfg.train.anneal_epochs = 1;
    let (a, _) = pipeline::train_bundle(&train, None, &cfg).unwrap();
    cfg.workers = 4;
    let (mut b, _) = pipeline::train_bundle(&train, None, &cfg).unwrap();
    b.run = a.run.clone();
    assert_eq!(bundle_bytes(&a), bundle_bytes(&b));

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let loaded = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(loaded, a);
    assert_eq!(bundle_bytes(&loaded), bundle_bytes(&a));
    let pa = pipeline::predict_dataset(&a, &test, None, 5).unwrap();
    let pl = pipeline::predict_dataset(&loaded, &test, None, 5).unwrap();
    assert_eq!(pa, pl);
}

#[test]
fn missing_bundle_pieces_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ModelBundle::load(dir.path().join("absent")).is_err());
    let (train, _) = small_data(0.1, 11);
    let mut cfg = small_config(11);
    cfg.train.epochs = 1;
    cfg.train.warmup_epochs = 0;
    cfg.train.hold_epochs = 1;
    cfg.train.anneal_epochs = 0;
    let (bundle, _) = pipeline::train_bundle(&train, None, &cfg).unwrap();
    bundle.save(dir.path()).unwrap();
    let bin = dir.path().join("classifiers.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
    assert!(ModelBundle::load(dir.path()).is_err());
}

#[test]
fn linear_stage_descends_and_matches_dense_scoring() {
    let (train, test) = small_data(0.1, 12);
    let mut cfg = small_config(12);
    cfg.train.epochs = 4;
    cfg.train.hold_epochs = 2;
    cfg.train.anneal_epochs = 1;
    let (bundle, _) = pipeline::train_bundle(&train, None, &cfg).unwrap();
    let x = bundle.tfidf.transform_dataset(&train).unwrap();
    let feats = cascadexml::dismec::features_from_model(&bundle.model, &x).unwrap();
    let params = DismecParams {
        solver: SolverParams::default(),
        delta: 0.0,
        workers: 2,
    };
    let stack = pipeline::train_dismec(&bundle, &train, &params).unwrap();
    assert_eq!(stack.models.len(), 64);
    for m in &stack.models {
        let signs: Vec<f64> = x
            .instances
            .iter()
            .map(|i| if i.labels.contains(&m.label) { 1.0 } else { -1.0 })
            .collect();
        let w = m.weights.to_dense();
        assert!(objective(&feats, &signs, 1.0, &w) <= x.num_points() as f64);
    }

    let xt = bundle.tfidf.transform_dataset(&test).unwrap();
    let test_feats = cascadexml::dismec::features_from_model(&bundle.model, &xt).unwrap();
    for phi in test_feats.iter().take(20) {
        let got = predict_linear(&stack.models, phi, 64, None);
        let mut oracle: Vec<(u32, f64)> = stack
            .models
            .iter()
            .map(|m| (m.label, phi.dot_dense(&m.weights.to_dense())))
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (g, o) in got.iter().zip(&oracle) {
            assert_eq!(g.0, o.0);
            assert!((g.1 - o.1).abs() < 1e-12);
        }
    }

    let restricted = pipeline::predict_dismec(&bundle, &stack.models, &test, 5, true).unwrap();
    let preds = pipeline::predict_dataset(&bundle, &test, None, 0).unwrap();
    for (r, p) in restricted.iter().zip(&preds) {
        let shortlist = p.shortlists.last().unwrap();
        assert!(r.iter().all(|(l, _)| shortlist.contains(*l)));
    }
}
