//! Precision@k, propensity-scored precision@k and shortlist recall.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeModel;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Label ids of the `k` best `(label, score)` pairs; ties go to the smaller id.
pub fn top_k(scores: &[(u32, f64)], k: usize) -> Vec<u32> {
    let mut sorted: Vec<(u32, f64)> = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted.into_iter().take(k).map(|(l, _)| l).collect()
}

/// `(1/k) |top_k ∩ y|` for a ranked prediction list; `y` must be sorted.
pub fn precision_at_k(y: &[u32], ranked: &[u32], k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    let hits = ranked
        .iter()
        .take(k)
        .filter(|l| y.binary_search(l).is_ok())
        .count();
    hits as f64 / k as f64
}

/// `(1/k) Σ_{l ∈ top_k} y_l / p_l`, unnormalized.
pub fn psp_at_k(y: &[u32], ranked: &[u32], k: usize, prop: &PropensityModel) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    ranked
        .iter()
        .take(k)
        .filter(|l| y.binary_search(l).is_ok())
        .map(|&l| 1.0 / prop.propensities[l as usize])
        .sum::<f64>()
        / k as f64
}

/// Largest PSP@k any ranking could reach for `y`.
pub fn best_psp_at_k(y: &[u32], k: usize, prop: &PropensityModel) -> f64 {
    let mut inv: Vec<f64> = y.iter().map(|&l| 1.0 / prop.propensities[l as usize]).collect();
    inv.sort_by(|a, b| b.total_cmp(a));
    inv.into_iter().take(k).sum::<f64>() / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub propensities: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub num_points: usize,
}

pub const DEFAULT_PROPENSITY_A: f64 = 0.55;
pub const DEFAULT_PROPENSITY_B: f64 = 1.5;

/// `p_l = 1 / (1 + C (n_l + B)^{-A})` with `C = (ln N - 1)(B + 1)^A`.
///
/// For `N < e` the constant `C` turns negative; propensities are then capped at 1.
pub fn fit_propensity(label_freqs: &[usize], num_points: usize, a: f64, b: f64) -> Result<PropensityModel> {
    if num_points < 2 {
        return Err(Error::InvalidConfig(format!(
            "propensity model needs N >= 2, got {}",
            num_points
        )));
    }
    let c = ((num_points as f64).ln() - 1.0) * (b + 1.0).powf(a);
    let propensities = label_freqs
        .iter()
        .map(|&n| (1.0 / (1.0 + c * (-a * (n as f64 + b).ln()).exp())).min(1.0))
        .collect();
    Ok(PropensityModel {
        propensities,
        a,
        b,
        num_points,
    })
}

/// Level-`t` recall of inference shortlists, `t` in `1..=T`.
pub fn shortlist_recall(model: &CascadeModel, ds: &Dataset, level: usize, beams: &[usize]) -> Result<f64> {
    let levels = model.num_levels();
    if level == 0 || level > levels {
        return Err(Error::LevelOutOfRange { level, max: levels });
    }
    Ok(shortlist_recall_all(model, ds, beams)?[level - 1])
}

/// Recall at every shortlisting level: mean over instances of
/// `|M_{t+1}(y) ∩ S^(t+1)| / |M_{t+1}(y)|`.
pub fn shortlist_recall_all(model: &CascadeModel, ds: &Dataset, beams: &[usize]) -> Result<Vec<f64>> {
    let levels = model.num_levels();
    let per_instance: Vec<Vec<f64>> = ds
        .instances
        .par_iter()
        .map(|inst| {
            let pred = model.predict(&inst.features, beams, 1)?;
            (1..=levels)
                .map(|t| {
                    let cover = model.tree.level_cover(&inst.labels, t + 1)?;
                    let shortlist = &pred.shortlists[t];
                    let hit = cover.ids.iter().filter(|&&c| shortlist.contains(c)).count();
                    Ok(hit as f64 / cover.len() as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; levels];
    for row in &per_instance {
        for (s, r) in sums.iter_mut().zip(row) {
            *s += r;
        }
    }
    let n = per_instance.len().max(1) as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// A metric named like `p@3` or `psp@5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Precision(usize),
    Psp(usize),
}

pub const VALID_METRICS: &str = "p@k or psp@k with k >= 1 (e.g. p@1,p@3,p@5,psp@1,psp@3,psp@5)";

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown metric {:?}; valid metrics: {}", s, VALID_METRICS));
        let (name, k) = s.trim().split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match name.to_ascii_lowercase().as_str() {
            "p" => Ok(Metric::Precision(k)),
            "psp" => Ok(Metric::Psp(k)),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Precision(k) => write!(f, "P@{}", k),
            Metric::Psp(k) => write!(f, "PSP@{}", k),
        }
    }
}

/// Mean of each metric over instances, given ranked predictions per instance.
/// With `normalize_psp`, PSP@k is divided by the best achievable PSP@k.
pub fn evaluate_rankings(
    ds: &Dataset,
    rankings: &[Vec<u32>],
    metrics: &[Metric],
    prop: Option<&PropensityModel>,
    normalize_psp: bool,
) -> Result<Vec<(Metric, f64)>> {
    if rankings.len() != ds.num_points() {
        return Err(Error::DimensionMismatch {
            expected: ds.num_points(),
            actual: rankings.len(),
        });
    }
    let mut out = Vec::with_capacity(metrics.len());
    for &m in metrics {
        let value = match m {
            Metric::Precision(k) => {
                let sum: f64 = ds
                    .instances
                    .iter()
                    .zip(rankings)
                    .map(|(inst, r)| precision_at_k(&inst.labels, r, k))
                    .sum();
                sum / ds.num_points().max(1) as f64
            }
            Metric::Psp(k) => {
                let prop = prop.ok_or_else(|| {
                    Error::InvalidConfig("PSP metrics need a propensity model".into())
                })?;
                let (num, den) = ds.instances.iter().zip(rankings).fold((0.0, 0.0), |acc, (inst, r)| {
                    (
                        acc.0 + psp_at_k(&inst.labels, r, k, prop),
                        acc.1 + best_psp_at_k(&inst.labels, k, prop),
                    )
                });
                if normalize_psp {
                    if den > 0.0 { num / den } else { 0.0 }
                } else {
                    num / ds.num_points().max(1) as f64
                }
            }
        };
        out.push((m, value));
    }
    Ok(out)
}
