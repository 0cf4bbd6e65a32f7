use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-[y ln σ(p) + (1-y) ln(1-σ(p))]`.
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Mean BCE over a shortlist and its gradient `(σ(p_l) - y_l) / |s|`.
pub fn level_loss(scores: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::EmptyShortlist);
    }
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: targets.len(),
        });
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&p, &y) in scores.iter().zip(targets) {
        loss += bce_with_logits(p, y);
        grad.push((sigmoid(p) - y) / n);
    }
    Ok((loss / n, grad))
}
