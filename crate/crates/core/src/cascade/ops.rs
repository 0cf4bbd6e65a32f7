//! Shortlist scoring, top-k selection, teacher forcing and loss rescaling.

use crate::error::{Error, Result};
use crate::hlt::{LabelTree, Shortlist};
use crate::linalg::{dot, Matrix};

/// Linear scorer for one resolution: row `k` of `weight` is `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelClassifier {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LevelClassifier {
    pub fn num_outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Logits `<w_k, φ> + b_k` for exactly the ids in `s`, in shortlist order.
pub fn score_shortlist(level: &LevelClassifier, phi: &[f64], s: &Shortlist) -> Result<Vec<f64>> {
    if phi.len() != level.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: level.input_dim(),
            actual: phi.len(),
        });
    }
    if let Some(&bad) = s.ids.iter().find(|&&k| k as usize >= level.num_outputs()) {
        return Err(Error::InvalidConfig(format!(
            "shortlist id {} outside classifier with {} outputs",
            bad,
            level.num_outputs()
        )));
    }
    Ok(s.ids
        .iter()
        .map(|&k| dot(level.weight.row(k as usize), phi) + level.bias[k as usize])
        .collect())
}

/// Positions into `scores` ordered by descending score, ties by smaller id.
pub(crate) fn ranked_positions(ids: &[u32], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order
}

/// The `min(k, |s|)` highest-scoring ids of `s`.
pub fn topk_select(s: &Shortlist, scores: &[f64], k: usize) -> Shortlist {
    debug_assert_eq!(s.len(), scores.len());
    let ids = ranked_positions(&s.ids, scores)
        .into_iter()
        .take(k)
        .map(|p| s.ids[p])
        .collect();
    Shortlist::new(s.level, ids)
}

/// `refine(S_top) ∪ M_{t+1}(y)`
pub fn next_train_shortlist(tree: &LabelTree, top: &Shortlist, labels: &[u32]) -> Result<Shortlist> {
    let refined = tree.refine(top)?;
    let cover = tree.level_cover(labels, top.level + 1)?;
    Ok(refined.union(&cover))
}

/// `α_t = |S_t| / min_t |S_t|`
pub fn rescale_alphas(shortlist_sizes: &[usize]) -> Vec<f64> {
    let min = shortlist_sizes.iter().copied().min().unwrap_or(1).max(1) as f64;
    shortlist_sizes.iter().map(|&s| s as f64 / min).collect()
}

/// Drops the lowest-scoring non-positive ids until at most `cap` remain.
/// Positives are always kept, even when they alone exceed `cap`.
pub fn evict_negatives(
    s: &Shortlist,
    scores: &[f64],
    positives: &Shortlist,
    cap: usize,
) -> (Shortlist, Vec<f64>) {
    if s.len() <= cap {
        return (s.clone(), scores.to_vec());
    }
    let budget = cap.saturating_sub(positives.len());
    let mut keep = vec![false; s.len()];
    let mut negatives_kept = 0;
    for p in ranked_positions(&s.ids, scores) {
        if positives.contains(s.ids[p]) {
            keep[p] = true;
        } else if negatives_kept < budget {
            keep[p] = true;
            negatives_kept += 1;
        }
    }
    let mut ids = Vec::new();
    let mut kept_scores = Vec::new();
    for (p, &k) in keep.iter().enumerate() {
        if k {
            ids.push(s.ids[p]);
            kept_scores.push(scores[p]);
        }
    }
    (Shortlist { level: s.level, ids }, kept_scores)
}
