use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SparseVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Group index of every input point.
    pub assignment: Vec<usize>,
    /// Sum of point·centroid similarities after each centroid update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn groups(&self, b: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); b];
        for (i, &g) in self.assignment.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

/// Spherical k-means whose groups differ in size by at most one.
///
/// Assignment is greedy best-first over all (point, centroid) pairs: every
/// group may take `n / b` points and the first `n % b` groups to ask get one
/// more. A new assignment is only accepted if it raises the objective under
/// the current centroids, so the objective trace never decreases.
pub fn balanced_kmeans(
    points: &[&SparseVector],
    b: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansResult> {
    let n = points.len();
    if b == 0 || n < b {
        return Err(Error::InvalidConfig(format!(
            "balanced k-means needs at least b={} points, got {}",
            b, n
        )));
    }
    let dim = points[0].dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = seed_centroids(points, b, &mut rng)
        .into_iter()
        .map(|i| points[i].to_dense())
        .collect();

    let mut assignment = greedy_assign(&score_matrix(points, &centroids), n, b);
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        update_centroids(points, &assignment, &mut centroids, dim);
        let scores = score_matrix(points, &centroids);
        let current = objective(&scores, &assignment, b);
        trace.push(current);
        let next = greedy_assign(&scores, n, b);
        if next == assignment || objective(&scores, &next, b) <= current {
            break;
        }
        assignment = next;
    }
    Ok(KMeansResult {
        assignment,
        objective_trace: trace,
        iterations,
    })
}

// Indices of the initial centroids: for b=2 a pair of (approximately) most
// distant points, otherwise farthest-point seeding.
fn seed_centroids(points: &[&SparseVector], b: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let first = rng.gen_range(0..n);
    let farthest_from = |chosen: &[usize]| -> usize {
        let mut best = usize::MAX;
        let mut best_sim = f64::INFINITY;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let sim = chosen
                .iter()
                .map(|&c| points[i].dot(points[c]))
                .fold(f64::NEG_INFINITY, f64::max);
            if sim < best_sim {
                best_sim = sim;
                best = i;
            }
        }
        best
    };
    if b == 2 {
        let a = farthest_from(&[first]);
        let c = farthest_from(&[a]);
        return vec![a, c];
    }
    let mut chosen = vec![first];
    while chosen.len() < b {
        let next = farthest_from(&chosen);
        chosen.push(next);
    }
    chosen
}

fn score_matrix(points: &[&SparseVector], centroids: &[Vec<f64>]) -> Vec<f64> {
    let b = centroids.len();
    let mut scores = vec![0.0; points.len() * b];
    for (i, p) in points.iter().enumerate() {
        for (c, centroid) in centroids.iter().enumerate() {
            scores[i * b + c] = p.dot_dense(centroid);
        }
    }
    scores
}

fn greedy_assign(scores: &[f64], n: usize, b: usize) -> Vec<usize> {
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..b).map(move |c| (i, c))).collect();
    pairs.sort_by(|&(i1, c1), &(i2, c2)| {
        scores[i2 * b + c2]
            .total_cmp(&scores[i1 * b + c1])
            .then(i1.cmp(&i2))
            .then(c1.cmp(&c2))
    });
    let base = n / b;
    let mut bonus = n % b;
    let mut sizes = vec![0usize; b];
    let mut assignment = vec![usize::MAX; n];
    let mut placed = 0;
    for (i, c) in pairs {
        if assignment[i] != usize::MAX {
            continue;
        }
        if sizes[c] < base {
            sizes[c] += 1;
        } else if sizes[c] == base && bonus > 0 {
            sizes[c] += 1;
            bonus -= 1;
        } else {
            continue;
        }
        assignment[i] = c;
        placed += 1;
        if placed == n {
            break;
        }
    }
    assignment
}

fn update_centroids(
    points: &[&SparseVector],
    assignment: &[usize],
    centroids: &mut [Vec<f64>],
    dim: usize,
) {
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    for (p, &g) in points.iter().zip(assignment) {
        p.add_to_dense(&mut sums[g], 1.0);
    }
    for (centroid, sum) in centroids.iter_mut().zip(sums) {
        let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        // a zero mean scores zero against any direction; keep the old centroid
        if norm > 0.0 {
            *centroid = sum.into_iter().map(|v| v / norm).collect();
        }
    }
}

fn objective(scores: &[f64], assignment: &[usize], b: usize) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &g)| scores[i * b + g])
        .sum()
}
