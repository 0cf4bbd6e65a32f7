//! One-vs-all squared-hinge classifiers over concatenated dense and tf-idf
//! features, solved per label by truncated Newton and pruned on the spot.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeModel;
use crate::data::{Dataset, SparseVector};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};

const ARMIJO_C: f64 = 1e-4;
const CG_MAX_ITER: usize = 50;
const CG_REL_TOL: f64 = 1e-3;
const MAX_HALVINGS: usize = 60;

/// `[φ_dnn / ‖φ_dnn‖, φ_tfidf / ‖φ_tfidf‖]` with logical dimension `d + D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatFeatures {
    pub dense: Vec<f64>,
    pub sparse: SparseVector,
    /// Set when both parts are zero.
    pub is_zero: bool,
}

impl ConcatFeatures {
    pub fn dim(&self) -> usize {
        self.dense.len() + self.sparse.dim()
    }

    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        let d = self.dense.len();
        dot(&self.dense, &w[..d]) + self.sparse.dot_dense(&w[d..])
    }

    /// `out += scale * self`
    pub fn add_to(&self, out: &mut [f64], scale: f64) {
        let d = self.dense.len();
        axpy(scale, &self.dense, &mut out[..d]);
        self.sparse.add_to_dense(&mut out[d..], scale);
    }

    /// Inner product with a weight vector stored sparsely over `d + D`.
    pub fn dot_sparse(&self, w: &SparseVector) -> f64 {
        let d = self.dense.len() as u32;
        let mut acc = 0.0;
        let split = w.indices().partition_point(|&i| i < d);
        for (&i, &v) in w.indices()[..split].iter().zip(&w.values()[..split]) {
            acc += v * self.dense[i as usize];
        }
        let (si, sv) = (self.sparse.indices(), self.sparse.values());
        let (wi, wv) = (&w.indices()[split..], &w.values()[split..]);
        let (mut a, mut b) = (0, 0);
        while a < si.len() && b < wi.len() {
            let j = wi[b] - d;
            match si[a].cmp(&j) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += sv[a] * wv[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn l1_norm(&self) -> f64 {
        self.dense.iter().map(|v| v.abs()).sum::<f64>() + self.sparse.l1_norm()
    }
}

/// Normalizes both parts independently; zero parts stay zero.
pub fn concat_features(dense: &[f64], sparse: &SparseVector) -> ConcatFeatures {
    let n = norm(dense);
    let dense = if n > 0.0 {
        dense.iter().map(|v| v / n).collect()
    } else {
        dense.to_vec()
    };
    let sparse = sparse.normalized();
    let is_zero = n == 0.0 && sparse.is_empty();
    ConcatFeatures {
        dense,
        sparse,
        is_zero,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub lambda: f64,
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            lambda: 1.0,
            tol: 1e-6,
            max_newton: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when `max_newton` ran out before the gradient certificate held.
    pub converged: bool,
}

/// `λ‖w‖² + Σ max(0, 1 - y_i ⟨Φ_i, w⟩)²`
pub fn objective(features: &[ConcatFeatures], signs: &[f64], lambda: f64, w: &[f64]) -> f64 {
    let hinge: f64 = features
        .iter()
        .zip(signs)
        .map(|(x, &y)| (1.0 - y * x.dot_dense(w)).max(0.0).powi(2))
        .sum();
    lambda * dot(w, w) + hinge
}

/// Minimizes the squared-hinge objective from `w = 0`.
pub fn solve_label(features: &[ConcatFeatures], signs: &[f64], params: &SolverParams) -> Result<Solution> {
    solve_label_from(features, signs, params, None)
}

/// Same as [`solve_label`], optionally warm-started.
pub fn solve_label_from(
    features: &[ConcatFeatures],
    signs: &[f64],
    params: &SolverParams,
    start: Option<&[f64]>,
) -> Result<Solution> {
    if features.is_empty() {
        return Err(Error::InvalidConfig("solve_label needs at least one example".into()));
    }
    if features.len() != signs.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: signs.len(),
        });
    }
    if !(params.lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {}", params.lambda)));
    }
    let dim = features[0].dim();
    if let Some(x) = features.iter().find(|x| x.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.dim(),
        });
    }
    let lambda = params.lambda;
    let mut w = match start {
        Some(s) if s.len() != dim => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.len(),
            })
        }
        Some(s) => s.to_vec(),
        None => vec![0.0; dim],
    };
    let mut z: Vec<f64> = features.iter().map(|x| x.dot_dense(&w)).collect();
    let eval = |w: &[f64], z: &[f64]| -> f64 {
        let hinge: f64 = z
            .iter()
            .zip(signs)
            .map(|(&zi, &y)| (1.0 - y * zi).max(0.0).powi(2))
            .sum();
        lambda * dot(w, w) + hinge
    };
    let mut f = eval(&w, &z);
    let cg_cap = CG_MAX_ITER.min(dim).max(1);
    let mut iterations = 0;
    loop {
        let active: Vec<usize> = (0..features.len())
            .filter(|&i| signs[i] * z[i] < 1.0)
            .collect();
        let mut g: Vec<f64> = w.iter().map(|v| 2.0 * lambda * v).collect();
        for &i in &active {
            features[i].add_to(&mut g, 2.0 * (z[i] - signs[i]));
        }
        let gnorm = norm(&g);
        if gnorm <= params.tol {
            return Ok(Solution {
                w,
                objective: f,
                grad_norm: gnorm,
                iterations,
                converged: true,
            });
        }
        if iterations == params.max_newton {
            return Ok(Solution {
                w,
                objective: f,
                grad_norm: gnorm,
                iterations,
                converged: false,
            });
        }
        iterations += 1;

        let hess = |v: &[f64], out: &mut [f64]| {
            for (o, &vi) in out.iter_mut().zip(v) {
                *o = 2.0 * lambda * vi;
            }
            for &i in &active {
                let xv = features[i].dot_dense(v);
                if xv != 0.0 {
                    features[i].add_to(out, 2.0 * xv);
                }
            }
        };
        let s = conjugate_gradient(&hess, &g, cg_cap, CG_REL_TOL * gnorm);

        let xs: Vec<f64> = features.iter().map(|x| x.dot_dense(&s)).collect();
        let (ws, ss) = (dot(&w, &s), dot(&s, &s));
        let gs = dot(&g, &s);
        let change = |eta: f64| -> f64 {
            let hinge: f64 = z
                .iter()
                .zip(&xs)
                .zip(signs)
                .map(|((&zi, &xi), &y)| {
                    let step = -y * eta * xi;
                    let before = (1.0 - y * zi).max(0.0);
                    let after = (1.0 - y * zi + step).max(0.0);
                    let diff = if before > 0.0 && after > 0.0 { step } else { after - before };
                    diff * (after + before)
                })
                .sum();
            lambda * eta * (2.0 * ws + eta * ss) + hinge
        };
        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let df = change(eta);
            if df <= ARMIJO_C * eta * gs {
                accepted = Some(df);
                break;
            }
            eta *= 0.5;
        }
        let Some(df) = accepted else {
            return Ok(Solution {
                w,
                objective: f,
                grad_norm: gnorm,
                iterations,
                converged: false,
            });
        };
        axpy(eta, &s, &mut w);
        for (zi, &xi) in z.iter_mut().zip(&xs) {
            *zi += eta * xi;
        }
        f += df;
    }
}

/// Truncated CG for `H s = -g`.
fn conjugate_gradient(hess: &dyn Fn(&[f64], &mut [f64]), g: &[f64], max_iter: usize, tol: f64) -> Vec<f64> {
    let n = g.len();
    let mut s = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut hp = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol {
            break;
        }
        hess(&p, &mut hp);
        let php = dot(&p, &hp);
        if php <= 0.0 {
            break;
        }
        let a = rr / php;
        axpy(a, &p, &mut s);
        axpy(-a, &hp, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    s
}

/// Drops entries with `|w_j| < δ`.
pub fn prune(w: &[f64], delta: f64) -> SparseVector {
    SparseVector::from_dense(w).map_values(|_, v| if v.abs() < delta { 0.0 } else { v })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvaLabelModel {
    pub label: u32,
    pub weights: SparseVector,
    pub lambda: f64,
    pub delta: f64,
}

impl OvaLabelModel {
    pub fn score(&self, x: &ConcatFeatures) -> f64 {
        x.dot_sparse(&self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DismecParams {
    pub solver: SolverParams,
    pub delta: f64,
    pub workers: usize,
}

impl Default for DismecParams {
    fn default() -> Self {
        DismecParams {
            solver: SolverParams::default(),
            delta: 0.01,
            workers: 1,
        }
    }
}

/// Trained label models plus the labels whose solver hit `max_newton`.
#[derive(Debug, Clone, PartialEq)]
pub struct OvaStack {
    pub models: Vec<OvaLabelModel>,
    pub unconverged: Vec<u32>,
}

/// Solves and prunes one model per label, emitted in label order.
pub fn train_ova(
    features: &[ConcatFeatures],
    labels: &[Vec<u32>],
    num_labels: usize,
    params: &DismecParams,
) -> Result<OvaStack> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    if !(params.delta >= 0.0) {
        return Err(Error::InvalidConfig(format!("delta must be >= 0, got {}", params.delta)));
    }
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, ys) in labels.iter().enumerate() {
        for &l in ys {
            let slot = positives.get_mut(l as usize).ok_or(Error::LevelOutOfRange {
                level: l as usize,
                max: num_labels,
            })?;
            slot.push(i);
        }
    }
    let solve = |l: usize| -> Result<(OvaLabelModel, bool)> {
        let mut signs = vec![-1.0; features.len()];
        for &i in &positives[l] {
            signs[i] = 1.0;
        }
        let sol = solve_label(features, &signs, &params.solver)?;
        Ok((
            OvaLabelModel {
                label: l as u32,
                weights: prune(&sol.w, params.delta),
                lambda: params.solver.lambda,
                delta: params.delta,
            },
            sol.converged,
        ))
    };
    let solved: Vec<(OvaLabelModel, bool)> = match crate::cascade::build_pool(params.workers)? {
        Some(pool) => pool.install(|| (0..num_labels).into_par_iter().map(solve).collect::<Result<_>>())?,
        None => (0..num_labels).map(solve).collect::<Result<_>>()?,
    };
    let unconverged: Vec<u32> = solved
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(m, _)| m.label)
        .collect();
    if !unconverged.is_empty() {
        log::warn!(
            "{} of {} label solvers stopped before convergence",
            unconverged.len(),
            num_labels
        );
    }
    Ok(OvaStack {
        models: solved.into_iter().map(|(m, _)| m).collect(),
        unconverged,
    })
}

/// Concatenated features for every instance of a tf-idf transformed dataset.
pub fn features_from_model(model: &CascadeModel, ds: &Dataset) -> Result<Vec<ConcatFeatures>> {
    ds.instances
        .par_iter()
        .map(|inst| Ok(concat_features(&model.embed(&inst.features)?, &inst.features)))
        .collect()
}

/// Trains one OVA model per label on `ds` with cascade embeddings as the dense part.
pub fn train_all(ds: &Dataset, model: &CascadeModel, params: &DismecParams) -> Result<OvaStack> {
    let features = features_from_model(model, ds)?;
    let labels: Vec<Vec<u32>> = ds.instances.iter().map(|i| i.labels.clone()).collect();
    train_ova(&features, &labels, ds.num_labels, params)
}

/// Top-`k` labels by `⟨w_l, Φ⟩`, over `candidates` when given, else all labels.
pub fn predict_linear(
    models: &[OvaLabelModel],
    x: &ConcatFeatures,
    k: usize,
    candidates: Option<&[u32]>,
) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> = match candidates {
        Some(c) => c
            .iter()
            .filter_map(|&l| models.get(l as usize))
            .map(|m| (m.label, m.score(x)))
            .collect(),
        None => models.iter().map(|m| (m.label, m.score(x))).collect(),
    };
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Weight store: header `dim dense_dim lambda delta`, then one
/// `label_id count idx:val ...` record per label in id order.
pub fn write_weights(models: &[OvaLabelModel], dense_dim: usize) -> String {
    let mut out = String::new();
    let dim = models.first().map(|m| m.weights.dim()).unwrap_or(dense_dim);
    let (lambda, delta) = models.first().map(|m| (m.lambda, m.delta)).unwrap_or((1.0, 0.0));
    writeln!(out, "{} {} {} {}", dim, dense_dim, lambda, delta).unwrap();
    let mut sorted: Vec<&OvaLabelModel> = models.iter().collect();
    sorted.sort_by_key(|m| m.label);
    for m in sorted {
        write!(out, "{} {}", m.label, m.weights.nnz()).unwrap();
        for (i, v) in m.weights.iter() {
            write!(out, " {}:{}", i, v).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parsed weight store.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub dense_dim: usize,
    pub models: Vec<OvaLabelModel>,
}

pub fn parse_weights(text: &str) -> Result<WeightStore> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty weight file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 {
        return Err(Error::parse(1, "header must be `dim dense_dim lambda delta`"));
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::parse(1, format!("bad {} {:?}", what, s)))
    };
    let dim: usize = h[0].parse().map_err(|_| Error::parse(1, "bad dim"))?;
    let dense_dim: usize = h[1].parse().map_err(|_| Error::parse(1, "bad dense_dim"))?;
    if dense_dim > dim {
        return Err(Error::parse(1, "dense_dim exceeds dim"));
    }
    let (lambda, delta) = (num(h[2], "lambda")?, num(h[3], "delta")?);
    let mut models: Vec<OvaLabelModel> = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        let mut tok = line.split_whitespace();
        let label: u32 = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(ln, "bad label id"))?;
        if label as usize != models.len() {
            return Err(Error::parse(ln, format!("expected label {}, found {}", models.len(), label)));
        }
        let count: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(ln, "bad weight count"))?;
        let mut entries = Vec::with_capacity(count);
        for t in tok {
            let (i, v) = t
                .split_once(':')
                .ok_or_else(|| Error::parse(ln, format!("expected idx:val, found {:?}", t)))?;
            let i: u32 = i.parse().map_err(|_| Error::parse(ln, format!("bad index {:?}", i)))?;
            let v: f64 = v.parse().map_err(|_| Error::parse(ln, format!("bad value {:?}", v)))?;
            entries.push((i, v));
        }
        if entries.len() != count {
            return Err(Error::parse(ln, format!("declared {} weights, found {}", count, entries.len())));
        }
        let weights = SparseVector::new(dim, entries).map_err(|e| Error::parse(ln, e.to_string()))?;
        models.push(OvaLabelModel {
            label,
            weights,
            lambda,
            delta,
        });
    }
    Ok(WeightStore { dense_dim, models })
}

pub fn save_weights(path: impl AsRef<Path>, models: &[OvaLabelModel], dense_dim: usize) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_weights(models, dense_dim)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weights(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dense1(v: f64) -> ConcatFeatures {
        ConcatFeatures {
            dense: vec![v],
            sparse: SparseVector::zeros(0),
            is_zero: v == 0.0,
        }
    }

    #[test]
    fn concat_normalizes_each_part() {
        let s = SparseVector::new(3, vec![(0, 2.0)]).unwrap();
        let c = concat_features(&[3.0, 4.0], &s);
        assert_abs_diff_eq!(c.dense[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(c.dense[1], 0.8, epsilon = 1e-15);
        assert_eq!(c.sparse.values(), &[1.0]);
        assert!(!c.is_zero);
        let z = concat_features(&[0.0, 0.0], &SparseVector::zeros(3));
        assert!(z.is_zero);
        assert_eq!(z.dim(), 5);
    }

    #[test]
    fn one_dimensional_closed_form() {
        for lambda in [0.5, 1.0, 3.0] {
            let params = SolverParams {
                lambda,
                tol: 1e-12,
                max_newton: 50,
            };
            let sol = solve_label(&[dense1(1.0), dense1(-1.0)], &[1.0, -1.0], &params).unwrap();
            assert!(sol.converged);
            assert_abs_diff_eq!(sol.w[0], 2.0 / (lambda + 2.0), epsilon = 1e-8);
        }
    }

    #[test]
    fn prune_threshold() {
        let p = prune(&[0.005, 0.5], 0.01);
        assert_eq!(p.indices(), &[1]);
        assert_eq!(p.values(), &[0.5]);
        assert_eq!(prune(&[0.005, 0.5], 0.0).nnz(), 2);
    }

    #[test]
    fn sparse_dot_matches_dense() {
        let s = SparseVector::new(4, vec![(1, 1.0), (3, -2.0)]).unwrap();
        let x = concat_features(&[1.0, 2.0], &s);
        let w = vec![0.3, -0.1, 0.0, 0.7, 0.0, 0.25];
        let ws = SparseVector::from_dense(&w);
        assert_abs_diff_eq!(x.dot_sparse(&ws), x.dot_dense(&w), epsilon = 1e-15);
    }

    #[test]
    fn weight_store_round_trips() {
        let models = vec![
            OvaLabelModel {
                label: 0,
                weights: SparseVector::new(5, vec![(0, 0.1), (4, -1.0 / 3.0)]).unwrap(),
                lambda: 1.0,
                delta: 0.01,
            },
            OvaLabelModel {
                label: 1,
                weights: SparseVector::zeros(5),
                lambda: 1.0,
                delta: 0.01,
            },
        ];
        let text = write_weights(&models, 2);
        let back = parse_weights(&text).unwrap();
        assert_eq!(back.models, models);
        assert_eq!(back.dense_dim, 2);
        assert!(parse_weights("5 2 1 0.01\n0 2 1:0.5\n").is_err());
    }

    #[test]
    fn shortlist_restriction() {
        let models: Vec<OvaLabelModel> = (0..3)
            .map(|l| OvaLabelModel {
                label: l,
                weights: SparseVector::new(1, vec![(0, l as f64 + 1.0)]).unwrap(),
                lambda: 1.0,
                delta: 0.0,
            })
            .collect();
        let x = dense1(1.0);
        assert_eq!(predict_linear(&models, &x, 1, None)[0].0, 2);
        let r = predict_linear(&models, &x, 3, Some(&[0, 1]));
        assert_eq!(r.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 0]);
    }
}
