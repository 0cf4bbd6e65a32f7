//! Synthetic desk-scale run: train, then report recall, P@k and runtime.
//!
//! `cargo run --release -p cascadexml --example desk_scale -- [seed]`

use std::time::Instant;

use cascadexml::config::RunConfig;
use cascadexml::data::{generate_synthetic, SyntheticConfig};
use cascadexml::dismec::DismecParams;
use cascadexml::metrics::{evaluate_rankings, Metric};
use cascadexml::pipeline;

fn main() -> cascadexml::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let data = generate_synthetic(&SyntheticConfig {
        num_docs: Some(5000),
        seed,
        ..SyntheticConfig::default()
    })?;
    let (train, test) = data.split_tail(0.2);
    let cfg = RunConfig::desk_scale(seed);
    let start = Instant::now();
    let (bundle, log) = pipeline::train_bundle(&train, None, &cfg)?;
    for e in &log.epochs {
        println!("epoch {:2} loss {:.4} lr {:.3}", e.epoch, e.loss, e.lr_factor);
    }
    let recall = pipeline::recall(&bundle, &test, None)?;
    let metrics = [Metric::Precision(1), Metric::Precision(5)];
    let scores = pipeline::evaluate(&bundle, &test, &metrics, None, false)?;
    println!("recall {:?}", recall);
    for (m, v) in scores {
        println!("{} {:.4}", m, v);
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    let t = Instant::now();
    let stack = pipeline::train_dismec(&bundle, &train, &DismecParams::default())?;
    let nnz: usize = stack.models.iter().map(|m| m.weights.nnz()).sum();
    println!("dismec trained in {:.1}s, {} weights, {} unconverged", t.elapsed().as_secs_f64(), nnz, stack.unconverged.len());
    for restrict in [true, false] {
        let preds = pipeline::predict_dismec(&bundle, &stack.models, &test, 5, restrict)?;
        let rankings: Vec<Vec<u32>> = preds.iter().map(|p| p.iter().map(|l| l.0).collect()).collect();
        let s = evaluate_rankings(&test, &rankings, &metrics, None, false)?;
        println!("dismec restrict={} {:?}", restrict, s);
    }
    Ok(())
}
