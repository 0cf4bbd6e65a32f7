//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs single-threaded except where worker invariance is under test.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use cascadexml::bundle::ModelBundle;
use cascadexml::cascade::rescale_alphas;
use cascadexml::config::RunConfig;
use cascadexml::data::{generate_synthetic, Dataset, Instance, SyntheticConfig};
use cascadexml::dismec::{
    concat_features, objective, solve_label, train_ova, write_weights, ConcatFeatures, DismecParams,
    SolverParams,
};
use cascadexml::hlt::Shortlist;
use cascadexml::metrics::{evaluate_rankings, fit_propensity, top_k, Metric, PropensityModel};
use cascadexml::pipeline;

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < budget_secs as f64,
        format!("took {:.1}s, budget {}s", elapsed.as_secs_f64(), budget_secs),
    )
}

fn structural_invariants() -> Outcome {
    let start = Instant::now();
    let mut checks = 0usize;
    for &l in &[16usize, 64, 256, 1024] {
        for &b in &[2usize, 4] {
            let levels = all_levels(l, b);
            let tree = random_tree(l, b, &levels, (l + b) as u64);
            let mut r = rng(l as u64 * 31 + b as u64);
            for t in 1..=tree.num_levels() {
                let mut seen: Vec<u32> = (0..tree.level_size(t) as u32)
                    .flat_map(|c| tree.children(t, c).to_vec())
                    .collect();
                seen.sort_unstable();
                ensure(
                    seen == (0..tree.level_size(t + 1) as u32).collect::<Vec<_>>(),
                    format!("L={l} b={b}: level {t} children do not partition level {}", t + 1),
                )?;
                ensure(tree.child_count_spread(t) <= 1, format!("L={l} b={b}: level {t} unbalanced"))?;
                for _ in 0..20 {
                    let s = Shortlist::new(t, random_labels(&mut r, tree.level_size(t), 8));
                    ensure(
                        tree.coarsen(&tree.refine(&s).unwrap()).unwrap() == s,
                        format!("L={l} b={b}: coarsen(refine(S)) != S at level {t}"),
                    )?;
                    checks += 1;
                }
            }
            for _ in 0..20 {
                let y = random_labels(&mut r, l, 5);
                for t in 2..=tree.num_levels() + 1 {
                    ensure(
                        tree.coarsen(&tree.level_cover(&y, t).unwrap()).unwrap()
                            == tree.level_cover(&y, t - 1).unwrap(),
                        format!("L={l} b={b}: level_cover does not compose at {t}"),
                    )?;
                    checks += 1;
                }
            }
            let beams = vec![2; tree.num_levels()];
            let model = random_model(tree, 32, 8, beams, l as u64);
            let ds = random_dataset(b as u64, 64, 32, l);
            for batch in ds.instances.chunks(16) {
                for inst in batch {
                    let pass = model.instance_pass(&inst.features, &inst.labels, None, None).unwrap();
                    for (t, s) in pass.shortlists.iter().enumerate() {
                        let cover = model.tree.level_cover(&inst.labels, t + 1).unwrap();
                        ensure(
                            cover.ids.iter().all(|&c| s.contains(c)),
                            format!("L={l} b={b}: positive missing from training shortlist at level {}", t + 1),
                        )?;
                        checks += 1;
                    }
                }
            }
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("{checks} checks over 8 trees in {:.1}s", start.elapsed().as_secs_f64()))
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let tree = random_tree(64, 4, &[4, 16], 3);
    let mut model = random_model(tree, 48, 16, vec![2, 3], 4);
    let ds = random_dataset(9, 6, 48, 64);
    let (compared, worst) = check_full_objective(&mut model, &ds, 150, 17);
    ensure(compared >= 100, format!("only {compared} coordinates compared"))?;
    ensure(worst <= 1e-6, format!("worst relative error {worst:.2e}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("{compared} coordinates, worst relative error {worst:.2e}"))
}

fn sparse_dense_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, &l) in [64usize, 256, 1024].iter().enumerate() {
        let levels = all_levels(l, 4);
        let tree = permuted_tree(l, 4, &levels, i as u64);
        let beams = levels.clone();
        let model = random_model(tree, 40, 12, beams.clone(), 100 + i as u64);
        let mut r = rng(i as u64);
        for _ in 0..10 {
            let x = random_sparse(&mut r, 40, 6);
            let pred = model.predict(&x, &beams, l).unwrap();
            let dense = dense_label_scores(&model, &x);
            let mut oracle: Vec<(u32, f64)> = dense.iter().enumerate().map(|(l, &s)| (l as u32, s)).collect();
            oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ensure(pred.labels.len() == l, format!("L={l}: {} labels returned", pred.labels.len()))?;
            for ((pl, ps), (ol, os)) in pred.labels.iter().zip(&oracle) {
                ensure(pl == ol, format!("L={l}: ranking differs ({pl} vs {ol})"))?;
                worst = worst.max((ps - os).abs());
            }
        }
    }
    ensure(worst <= 1e-12, format!("max score difference {worst:.2e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!("rankings identical for L in {{64, 256, 1024}}, max |score diff| {worst:.1e}"))
}

fn complexity() -> Outcome {
    let start = Instant::now();
    let sizes = [64usize, 256, 1024, 4096];
    let mut counts = Vec::new();
    for (i, &l) in sizes.iter().enumerate() {
        let levels = all_levels(l, 2);
        let beams: Vec<usize> = levels.iter().map(|&k| (k as f64).sqrt().ceil() as usize).collect();
        let tree = permuted_tree(l, 2, &levels, i as u64);
        let model = random_model(tree, 32, 8, beams.clone(), i as u64);
        let mut r = rng(7 + i as u64);
        let n = 20;
        let mut total = 0usize;
        for _ in 0..n {
            let x = random_sparse(&mut r, 32, 5);
            total += model.predict(&x, &beams, 5).unwrap().scored;
        }
        counts.push(total as f64 / n as f64);
    }
    let xs: Vec<f64> = sizes.iter().map(|&l| (l as f64).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    ensure(slope <= 0.6, format!("fit exponent {slope:.3} > 0.6 (counts {counts:?})"))?;
    within(start.elapsed(), 60)?;
    Ok(format!("dot products {counts:?}, fit exponent {slope:.3}"))
}

fn desk_data(seed: u64) -> (Dataset, Dataset) {
    let data = generate_synthetic(&SyntheticConfig {
        num_labels: 256,
        depth: 4,
        num_docs: Some(5000),
        noise: 0.1,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    data.split_tail(0.2)
}

struct DeskRun {
    seed: u64,
    recall: Vec<f64>,
    p1: f64,
    p5: f64,
    secs: f64,
    dismec_p1: f64,
}

fn desk_run(seed: u64) -> DeskRun {
    let (train, test) = desk_data(seed);
    let cfg = RunConfig::desk_scale(seed);
    let start = Instant::now();
    let (bundle, _) = pipeline::train_bundle(&train, None, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let recall = pipeline::recall(&bundle, &test, None).unwrap();
    let m = pipeline::evaluate(&bundle, &test, &[Metric::Precision(1), Metric::Precision(5)], None, false).unwrap();
    let stack = pipeline::train_dismec(&bundle, &train, &DismecParams::default()).unwrap();
    let preds = pipeline::predict_dismec(&bundle, &stack.models, &test, 1, true).unwrap();
    let rankings: Vec<Vec<u32>> = preds.iter().map(|p| p.iter().map(|l| l.0).collect()).collect();
    let dismec_p1 = evaluate_rankings(&test, &rankings, &[Metric::Precision(1)], None, false).unwrap()[0].1;
    DeskRun {
        seed,
        recall,
        p1: m[0].1,
        p5: m[1].1,
        secs,
        dismec_p1,
    }
}

fn desk_scale(runs: &[DeskRun]) -> Outcome {
    let mut passed = 0;
    let mut lines = Vec::new();
    for r in runs {
        let ok = r.recall[0] >= 0.95
            && r.recall[1] >= 0.90
            && r.recall[2] >= 0.85
            && r.p1 >= 0.90
            && r.p5 >= 0.35
            && r.secs < 300.0;
        passed += ok as usize;
        lines.push(format!(
            "seed {}: recall {:.3}/{:.3}/{:.3} P@1 {:.3} P@5 {:.3} train {:.1}s{}",
            r.seed,
            r.recall[0],
            r.recall[1],
            r.recall[2],
            r.p1,
            r.p5,
            r.secs,
            if ok { "" } else { " (miss)" }
        ));
    }
    let detail = format!("{passed}/5 seeds pass; {}", lines.join("; "));
    if passed >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn alpha_rescaling() -> Outcome {
    let a = rescale_alphas(&[1024, 1024, 2048, 4096]);
    ensure(a == vec![1.0, 1.0, 2.0, 4.0], format!("got {a:?}"))?;
    Ok(format!("{a:?}"))
}

fn dense_only(v: f64) -> ConcatFeatures {
    ConcatFeatures {
        dense: vec![v],
        sparse: cascadexml::data::SparseVector::zeros(0),
        is_zero: false,
    }
}

fn dismec_oracle() -> Outcome {
    let start = Instant::now();
    for lambda in [0.1, 0.5, 1.0, 2.0, 10.0] {
        let params = SolverParams {
            lambda,
            tol: 1e-12,
            max_newton: 100,
        };
        let sol = solve_label(&[dense_only(1.0), dense_only(-1.0)], &[1.0, -1.0], &params).unwrap();
        let expected = 2.0 / (lambda + 2.0);
        ensure(
            (sol.w[0] - expected).abs() <= 1e-8,
            format!("1-D lambda={lambda}: w={} expected {expected}", sol.w[0]),
        )?;
    }
    let mut worst: f64 = 0.0;
    let mut r = rng(2024);
    for case in 0..40 {
        let n = r.gen_range(1..=50);
        let dense_dim = r.gen_range(1..=5);
        let sparse_dim = r.gen_range(1..=5);
        let lambda = [0.5, 1.0, 4.0][case % 3];
        let feats: Vec<ConcatFeatures> = (0..n)
            .map(|_| {
                let d: Vec<f64> = (0..dense_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
                concat_features(&d, &random_sparse(&mut r, sparse_dim, 2))
            })
            .collect();
        let signs: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.3) { 1.0 } else { -1.0 }).collect();
        let params = SolverParams {
            lambda,
            tol: 1e-9,
            max_newton: 100,
        };
        let sol = solve_label(&feats, &signs, &params).unwrap();
        ensure(sol.converged, format!("case {case} did not converge"))?;
        let gd = gd_oracle(&feats, &signs, lambda, 50_000);
        let diff = (sol.objective - objective(&feats, &signs, lambda, &gd)).abs();
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-6, format!("objective gap to gradient-descent oracle {worst:.2e}"))?;

    let ds = random_dataset(77, 120, 30, 24);
    let feats: Vec<ConcatFeatures> = ds
        .instances
        .iter()
        .map(|i| {
            let d: Vec<f64> = i.features.values().iter().take(4).copied().chain([0.5; 4]).take(4).collect();
            concat_features(&d, &i.features)
        })
        .collect();
    let labels: Vec<Vec<u32>> = ds.instances.iter().map(|i| i.labels.clone()).collect();
    let mut outputs = Vec::new();
    for workers in [1, 3, 8] {
        let params = DismecParams {
            workers,
            ..DismecParams::default()
        };
        let stack = train_ova(&feats, &labels, 24, &params).unwrap();
        outputs.push(write_weights(&stack.models, 4));
    }
    ensure(
        outputs.windows(2).all(|w| w[0] == w[1]),
        "weight files differ across worker counts",
    )?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "1-D closed form within 1e-8; 40 random cases within {worst:.1e} of the oracle; workers 1/3/8 byte-identical"
    ))
}

fn metrics_oracle() -> Outcome {
    let start = Instant::now();
    let fixture: [(&[u32], [f64; 6]); 10] = [
        (&[0], [0.9, 0.1, 0.2, 0.3, 0.0, 0.0]),
        (&[1, 2], [0.5, 0.5, 0.5, 0.1, 0.1, 0.1]),
        (&[4], [0.0; 6]),
        (&[5], [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        (&[3, 4], [0.1, 0.2, 0.3, 0.9, 0.9, 0.0]),
        (&[0, 1, 2], [3.0, 2.0, 1.0, 0.0, 0.0, 0.0]),
        (&[2], [0.0, -1.0, 5.0, 5.0, 0.0, 0.0]),
        (&[3], [0.2; 6]),
        (&[1, 4], [1.0, 0.0, 0.0, 0.0, 2.0, 0.0]),
        (&[0, 5], [-1.0, -1.0, -1.0, -1.0, -1.0, -2.0]),
    ];
    let ds = Dataset {
        num_features: 1,
        num_labels: 6,
        instances: fixture
            .iter()
            .map(|(y, _)| Instance {
                features: cascadexml::data::SparseVector::zeros(1),
                labels: y.to_vec(),
            })
            .collect(),
    };
    let rankings: Vec<Vec<u32>> = fixture
        .iter()
        .map(|(_, s)| {
            let pairs: Vec<(u32, f64)> = s.iter().enumerate().map(|(l, &v)| (l as u32, v)).collect();
            top_k(&pairs, 3)
        })
        .collect();
    let prop = PropensityModel {
        propensities: vec![1.0, 0.5, 0.25, 0.8, 0.4, 0.2],
        a: 0.55,
        b: 1.5,
        num_points: 10,
    };
    let metrics = [Metric::Precision(1), Metric::Precision(3), Metric::Psp(1), Metric::Psp(3)];
    let got = evaluate_rankings(&ds, &rankings, &metrics, Some(&prop), false).unwrap();
    let expected = [0.7, 13.0 / 30.0, 1.575, 1.075];
    for ((m, v), e) in got.iter().zip(expected) {
        ensure((v - e).abs() <= 1e-12, format!("{m}: got {v}, expected {e}"))?;
    }
    let mut r = rng(8);
    for _ in 0..1000 {
        let len = r.gen_range(1..40);
        let freqs: Vec<usize> = (0..len).map(|_| r.gen_range(0..10_000)).collect();
        let n = r.gen_range(2..1_000_000);
        let p = fit_propensity(&freqs, n, 0.55, 1.5).unwrap().propensities;
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by_key(|&i| freqs[i]);
        ensure(
            order.windows(2).all(|w| p[w[0]] <= p[w[1]]) && p.iter().all(|&v| v > 0.0 && v <= 1.0),
            "propensity not monotone in frequency",
        )?;
    }
    within(start.elapsed(), 5)?;
    Ok("P@1/P@3/PSP@1/PSP@3 match the hand fixture; 1000 monotone propensity vectors".into())
}

fn dismec_no_worse(runs: &[DeskRun]) -> Outcome {
    let lines: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: cascade {:.3}, +ova {:.3}", r.seed, r.p1, r.dismec_p1))
        .collect();
    let bad: Vec<u64> = runs.iter().filter(|r| r.dismec_p1 < r.p1 - 0.01).map(|r| r.seed).collect();
    let detail = lines.join("; ");
    if bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("seeds {bad:?} regress: {detail}"))
    }
}

fn run_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let (train, test) = desk_data(42);
    let cfg = RunConfig::desk_scale(42);
    let (bundle, _) = pipeline::train_bundle(&train, None, &cfg).unwrap();
    let model_dir = dir.join("model");
    bundle.save(&model_dir).unwrap();
    let loaded = ModelBundle::load(&model_dir).unwrap();
    let prop = pipeline::propensity(&loaded, 0.55, 1.5).unwrap();
    let metrics = [Metric::Precision(1), Metric::Precision(5), Metric::Psp(1), Metric::Psp(5)];
    let rows = pipeline::evaluate(&loaded, &test, &metrics, Some(&prop), false).unwrap();
    let table: String = rows.iter().map(|(m, v)| format!("{m}\t{v}\n")).collect();
    fs::write(dir.join("metrics.tsv"), table).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&model_dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.push(("metrics.tsv".into(), fs::read(dir.join("metrics.tsv")).unwrap()));
    files.sort();
    files
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = run_pipeline(a.path());
    let fb = run_pipeline(b.path());
    ensure(fa.len() == fb.len(), "different file sets")?;
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        ensure(na == nb && ba == bb, format!("{na} differs between runs"))?;
    }
    let bytes: usize = fa.iter().map(|f| f.1.len()).sum();
    Ok(format!("{} files, {} bytes identical", fa.len(), bytes))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    };
    report(1, "structural invariants", structural_invariants());
    report(2, "gradient oracle", gradient_oracle());
    report(3, "sparse/dense equivalence", sparse_dense_equivalence());
    report(4, "inference complexity", complexity());
    let runs: Vec<DeskRun> = (0..5).map(desk_run).collect();
    report(5, "desk-scale learning run", desk_scale(&runs));
    report(6, "alpha rescaling", alpha_rescaling());
    report(7, "dismec oracle", dismec_oracle());
    report(8, "metrics oracle", metrics_oracle());
    report(9, "concatenated-feature stage", dismec_no_worse(&runs));
    report(10, "reproducibility", reproducibility());
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
