//! End-to-end steps shared by the command line, bindings and tests.

use rayon::prelude::*;

use crate::bundle::{LabelStats, ModelBundle};
use crate::cascade::{train, CascadeModel, Prediction, TrainLog};
use crate::config::RunConfig;
use crate::data::{fit_tfidf, Dataset, TfIdfVectorizer};
use crate::dismec::{self, concat_features, DismecParams, OvaLabelModel, OvaStack};
use crate::error::{Error, Result};
use crate::hlt::{build_hlt, label_centroids, resolve_level_sizes, LabelTree};
use crate::metrics::{evaluate_rankings, fit_propensity, shortlist_recall_all, Metric, PropensityModel};

/// Builds the label tree for `ds` with the configured (rounded) level sizes.
pub fn build_tree(ds: &Dataset, tfidf: &TfIdfVectorizer, cfg: &RunConfig) -> Result<LabelTree> {
    let sizes = resolve_level_sizes(&cfg.tree.level_sizes, cfg.tree.branching, ds.num_labels)?;
    if sizes != cfg.tree.level_sizes {
        log::info!(
            "level sizes {:?} realized as {:?} (powers of {})",
            cfg.tree.level_sizes,
            sizes,
            cfg.tree.branching
        );
    }
    let centroids = label_centroids(ds, tfidf)?;
    if !centroids.empty_labels.is_empty() {
        log::warn!("{} labels have no training instance", centroids.empty_labels.len());
    }
    build_hlt(&centroids.vectors, &sizes, cfg.tree.branching, cfg.tree_seed())
}

/// Fits tf-idf, builds the tree unless one is given, and trains the cascade.
pub fn train_bundle(
    train_raw: &Dataset,
    tree: Option<LabelTree>,
    cfg: &RunConfig,
) -> Result<(ModelBundle, TrainLog)> {
    cfg.validate()?;
    let (fit_raw, valid_raw) = if cfg.train.validation_fraction > 0.0 {
        let (a, b) = train_raw.split_tail(cfg.train.validation_fraction);
        (a, Some(b))
    } else {
        (train_raw.clone(), None)
    };
    let tfidf = fit_tfidf(&fit_raw);
    let tree = match tree {
        Some(t) => {
            if t.num_labels() != train_raw.num_labels {
                return Err(Error::InvalidConfig(format!(
                    "tree covers {} labels, dataset has {}",
                    t.num_labels(),
                    train_raw.num_labels
                )));
            }
            t
        }
        None => build_tree(&fit_raw, &tfidf, cfg)?,
    };
    let mut model = CascadeModel::new(cfg.model_config(train_raw.num_features)?, tree)?;
    let train_set = tfidf.transform_dataset(&fit_raw)?;
    let valid_set = valid_raw.map(|v| tfidf.transform_dataset(&v)).transpose()?;
    let log = train(&mut model, &train_set, valid_set.as_ref(), &cfg.train_config())?;
    let bundle = ModelBundle {
        model,
        tfidf,
        label_stats: LabelStats::from_dataset(&fit_raw),
        run: Some(cfg.clone()),
    };
    Ok((bundle, log))
}

/// Cascade predictions for every instance of a raw dataset, in order.
pub fn predict_dataset(
    bundle: &ModelBundle,
    ds: &Dataset,
    beams: Option<&[usize]>,
    k: usize,
) -> Result<Vec<Prediction>> {
    let x = bundle.tfidf.transform_dataset(ds)?;
    let beams = beams.unwrap_or(&bundle.model.config.beam_widths);
    x.instances
        .par_iter()
        .map(|inst| bundle.model.predict(&inst.features, beams, k))
        .collect()
}

/// Per-level inference recall on a raw dataset.
pub fn recall(bundle: &ModelBundle, ds: &Dataset, beams: Option<&[usize]>) -> Result<Vec<f64>> {
    let x = bundle.tfidf.transform_dataset(ds)?;
    let beams = beams.unwrap_or(&bundle.model.config.beam_widths);
    shortlist_recall_all(&bundle.model, &x, beams)
}

pub fn propensity(bundle: &ModelBundle, a: f64, b: f64) -> Result<PropensityModel> {
    fit_propensity(
        &bundle.label_stats.label_frequencies,
        bundle.label_stats.num_points,
        a,
        b,
    )
}

fn max_k(metrics: &[Metric]) -> usize {
    metrics
        .iter()
        .map(|m| match m {
            Metric::Precision(k) | Metric::Psp(k) => *k,
        })
        .max()
        .unwrap_or(1)
}

/// Cascade-only metrics on a raw dataset.
pub fn evaluate(
    bundle: &ModelBundle,
    ds: &Dataset,
    metrics: &[Metric],
    prop: Option<&PropensityModel>,
    normalize_psp: bool,
) -> Result<Vec<(Metric, f64)>> {
    let preds = predict_dataset(bundle, ds, None, max_k(metrics))?;
    let rankings: Vec<Vec<u32>> = preds
        .iter()
        .map(|p| p.labels.iter().map(|l| l.0).collect())
        .collect();
    evaluate_rankings(ds, &rankings, metrics, prop, normalize_psp)
}

/// Trains the linear stage on a raw training set using the bundle's encoder.
pub fn train_dismec(bundle: &ModelBundle, ds: &Dataset, params: &DismecParams) -> Result<OvaStack> {
    let x = bundle.tfidf.transform_dataset(ds)?;
    dismec::train_all(&x, &bundle.model, params)
}

/// Linear-stage top-`k` per instance; with `restrict`, only the labels in the
/// cascade's final shortlist are scored.
pub fn predict_dismec(
    bundle: &ModelBundle,
    models: &[OvaLabelModel],
    ds: &Dataset,
    k: usize,
    restrict: bool,
) -> Result<Vec<Vec<(u32, f64)>>> {
    let expected = bundle.model.encoder.config.hidden_dim + bundle.model.encoder.config.input_dim;
    if models.len() != ds.num_labels {
        return Err(Error::DimensionMismatch {
            expected: ds.num_labels,
            actual: models.len(),
        });
    }
    if let Some(m) = models.iter().find(|m| m.weights.dim() != expected) {
        return Err(Error::DimensionMismatch {
            expected,
            actual: m.weights.dim(),
        });
    }
    let x = bundle.tfidf.transform_dataset(ds)?;
    let beams = &bundle.model.config.beam_widths;
    x.instances
        .par_iter()
        .map(|inst| {
            let phi = concat_features(&bundle.model.embed(&inst.features)?, &inst.features);
            if restrict {
                let pred = bundle.model.predict(&inst.features, beams, 0)?;
                let shortlist = pred.shortlists.last().unwrap();
                Ok(dismec::predict_linear(models, &phi, k, Some(&shortlist.ids)))
            } else {
                Ok(dismec::predict_linear(models, &phi, k, None))
            }
        })
        .collect()
}
