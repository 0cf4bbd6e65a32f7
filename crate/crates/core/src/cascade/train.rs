use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::model::{CascadeModel, Gradients};
use crate::cascade::optim::{AdamW, LrSchedule, WarmupShape};
use crate::data::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::metrics::shortlist_recall_all;
use crate::seed::derive_seed;

fn default_workers() -> usize {
    1
}

fn default_shard_size() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub hold_epochs: usize,
    pub anneal_epochs: usize,
    #[serde(default)]
    pub warmup_shape: WarmupShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_encoder: f64,
    pub schedule: ScheduleConfig,
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Instances per gradient shard; shards are summed in a fixed order, so
    /// results do not depend on `workers`.
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 32,
            lr_classifier: 1e-2,
            lr_encoder: 1e-3,
            schedule: ScheduleConfig {
                warmup_epochs: 3,
                hold_epochs: 9,
                anneal_epochs: 3,
                warmup_shape: WarmupShape::Linear,
            },
            weight_decay: 0.01,
            seed: 0,
            workers: 1,
            shard_size: default_shard_size(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let s = &self.schedule;
        if self.epochs != s.warmup_epochs + s.hold_epochs + s.anneal_epochs {
            return bad(format!(
                "epochs={} but schedule covers {}+{}+{}",
                self.epochs, s.warmup_epochs, s.hold_epochs, s.anneal_epochs
            ));
        }
        if self.batch_size == 0 || self.shard_size == 0 || self.workers == 0 {
            return bad("batch_size, shard_size and workers must be positive".into());
        }
        if !(self.lr_classifier > 0.0 && self.lr_encoder > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.lr_encoder > self.lr_classifier {
            return bad(format!(
                "lr_encoder {} exceeds lr_classifier {}",
                self.lr_encoder, self.lr_classifier
            ));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be >= 0".into());
        }
        Ok(())
    }

    pub fn lr_schedule(&self, steps_per_epoch: usize) -> LrSchedule {
        LrSchedule {
            warmup_steps: self.schedule.warmup_epochs * steps_per_epoch,
            hold_steps: self.schedule.hold_epochs * steps_per_epoch,
            anneal_steps: self.schedule.anneal_epochs * steps_per_epoch,
            shape: self.schedule.warmup_shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Batch mean of the α-weighted loss.
    pub loss: f64,
    /// Batch mean of each resolution's unweighted loss.
    pub level_losses: Vec<f64>,
}

/// Gradient of the batch-mean loss, reduced over fixed-size shards in order.
///
/// With `dropout_seed = None` taps are not dropped, which makes the loss a
/// deterministic function of the parameters.
pub fn batch_gradients(
    model: &CascadeModel,
    batch: &[&Instance],
    dropout_seed: Option<u64>,
    shard_size: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Gradients, StepReport)> {
    let scale = 1.0 / batch.len().max(1) as f64;
    let resolutions = model.num_levels() + 1;
    let run_shard = |(shard_idx, shard): (usize, &[&Instance])| -> Result<(Gradients, f64, Vec<f64>)> {
        let mut grads = Gradients::zeros(model);
        let mut loss = 0.0;
        let mut levels = vec![0.0; resolutions];
        for (j, inst) in shard.iter().enumerate() {
            let global = (shard_idx * shard_size + j) as u64;
            let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(derive_seed(s, &[global])));
            let pass = model.instance_pass(
                &inst.features,
                &inst.labels,
                rng.as_mut(),
                Some((&mut grads, scale)),
            )?;
            loss += pass.loss * scale;
            for (acc, l) in levels.iter_mut().zip(&pass.level_losses) {
                *acc += l * scale;
            }
        }
        Ok((grads, loss, levels))
    };
    let shards: Vec<Result<(Gradients, f64, Vec<f64>)>> = match pool {
        Some(pool) => pool.install(|| {
            batch
                .par_chunks(shard_size)
                .enumerate()
                .map(run_shard)
                .collect()
        }),
        None => batch.chunks(shard_size).enumerate().map(run_shard).collect(),
    };
    let mut total: Option<Gradients> = None;
    let mut loss = 0.0;
    let mut level_losses = vec![0.0; resolutions];
    for shard in shards {
        let (g, l, lv) = shard?;
        match total.as_mut() {
            Some(t) => t.add_assign(&g),
            None => total = Some(g),
        }
        loss += l;
        for (a, b) in level_losses.iter_mut().zip(lv) {
            *a += b;
        }
    }
    Ok((
        total.unwrap_or_else(|| Gradients::zeros(model)),
        StepReport { loss, level_losses },
    ))
}

/// Forward, backward and one optimizer update on `batch`.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    model: &mut CascadeModel,
    batch: &[&Instance],
    opt: &mut AdamW,
    lr_encoder: f64,
    lr_classifier: f64,
    dropout_seed: Option<u64>,
    shard_size: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<StepReport> {
    let (grads, report) = batch_gradients(model, batch, dropout_seed, shard_size, pool)?;
    model.apply_gradients(opt, &grads, lr_encoder, lr_classifier);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub level_losses: Vec<f64>,
    pub lr_factor: f64,
    /// Inference shortlist recall at levels `1..=T` on the validation split.
    pub valid_recall: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

pub(crate) fn build_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Trains `model` on tf-idf transformed instances.
pub fn train(
    model: &mut CascadeModel,
    train_set: &Dataset,
    valid: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if train_set.num_labels != model.tree.num_labels() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} labels, tree has {}",
            train_set.num_labels,
            model.tree.num_labels()
        )));
    }
    if train_set.num_features != model.encoder.config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.encoder.config.input_dim,
            actual: train_set.num_features,
        });
    }
    let pool = build_pool(cfg.workers)?;
    let n = train_set.num_points();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = cfg.lr_schedule(steps_per_epoch);
    let mut opt = AdamW::new(cfg.weight_decay);
    let beams = model.config.beam_widths.clone();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64])));
        let mut loss = 0.0;
        let mut level_losses = vec![0.0; model.num_levels() + 1];
        let mut factor = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            factor = schedule.factor(epoch * steps_per_epoch + b);
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set.instances[i]).collect();
            let report = training_step(
                model,
                &batch,
                &mut opt,
                cfg.lr_encoder * factor,
                cfg.lr_classifier * factor,
                Some(derive_seed(cfg.seed, &[epoch as u64, b as u64, 1])),
                cfg.shard_size,
                pool.as_ref(),
            )?;
            let w = chunk.len() as f64 / n as f64;
            loss += report.loss * w;
            for (a, l) in level_losses.iter_mut().zip(&report.level_losses) {
                *a += l * w;
            }
        }
        let valid_recall = match valid {
            Some(v) if !v.is_empty() => Some(shortlist_recall_all(model, v, &beams)?),
            _ => None,
        };
        log::info!(
            "epoch {:>3}  loss {:.5}  levels {:?}  recall {:?}",
            epoch + 1,
            loss,
            level_losses,
            valid_recall
        );
        log.epochs.push(EpochLog {
            epoch: epoch + 1,
            loss,
            level_losses,
            lr_factor: factor,
            valid_recall,
        });
    }
    Ok(log)
}
