use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SparseVector, TfIdfVectorizer};
use crate::error::{Error, Result};
use crate::hlt::kmeans::balanced_kmeans;
use crate::seed::derive_seed;

const KMEANS_MAX_ITER: usize = 50;

/// A set of cluster (or label) ids at one tree level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortlist {
    pub level: usize,
    pub ids: Vec<u32>,
}

impl Shortlist {
    /// Sorts and deduplicates `ids`.
    pub fn new(level: usize, mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Shortlist { level, ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Sorted union of two shortlists at the same level.
    pub fn union(&self, other: &Shortlist) -> Shortlist {
        debug_assert_eq!(self.level, other.level);
        let mut ids = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (0, 0);
        while a < self.ids.len() || b < other.ids.len() {
            let next = match (self.ids.get(a), other.ids.get(b)) {
                (Some(&x), Some(&y)) if x == y => {
                    a += 1;
                    b += 1;
                    x
                }
                (Some(&x), Some(&y)) if x < y => {
                    a += 1;
                    x
                }
                (Some(_), Some(&y)) => {
                    b += 1;
                    y
                }
                (Some(&x), None) => {
                    a += 1;
                    x
                }
                (None, Some(&y)) => {
                    b += 1;
                    y
                }
                (None, None) => unreachable!(),
            };
            ids.push(next);
        }
        Shortlist {
            level: self.level,
            ids,
        }
    }
}

/// Label centroids plus the labels that had no positive instance.
#[derive(Debug, Clone)]
pub struct LabelCentroids {
    pub vectors: Vec<SparseVector>,
    pub empty_labels: Vec<u32>,
}

/// z_l = normalized sum of the tf-idf vectors of the label's positive instances.
pub fn label_centroids(ds: &Dataset, vec: &TfIdfVectorizer) -> Result<LabelCentroids> {
    let mut buckets: Vec<Vec<(u32, f64)>> = vec![Vec::new(); ds.num_labels];
    for inst in &ds.instances {
        let x = vec.transform(&inst.features)?;
        for &l in &inst.labels {
            buckets[l as usize].extend(x.iter());
        }
    }
    let mut vectors = Vec::with_capacity(ds.num_labels);
    let mut empty_labels = Vec::new();
    for (l, entries) in buckets.into_iter().enumerate() {
        let v = SparseVector::from_unsorted(ds.num_features, entries)?.normalized();
        if v.is_empty() {
            empty_labels.push(l as u32);
        }
        vectors.push(v);
    }
    Ok(LabelCentroids {
        vectors,
        empty_labels,
    })
}

/// Hierarchical label tree with `T` shortlisting levels over `L` labels.
///
/// Levels are numbered `1..=T+1`; level `T+1` is the label space itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTree {
    level_sizes: Vec<usize>,
    // parents[t - 2] maps level-t ids to level-(t-1) ids, t in 2..=T+1
    parents: Vec<Vec<u32>>,
    // children[t - 1] is a CSR of level-(t+1) ids grouped by level-t parent
    children: Vec<(Vec<usize>, Vec<u32>)>,
}

#[derive(Serialize, Deserialize)]
struct TreeRecord {
    #[serde(rename = "L")]
    num_labels: usize,
    level_sizes: Vec<usize>,
    parents: Vec<Vec<u32>>,
}

impl Serialize for LabelTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TreeRecord {
            num_labels: self.num_labels(),
            level_sizes: self.level_sizes.clone(),
            parents: self.parents.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = TreeRecord::deserialize(d)?;
        if r.level_sizes.last() != Some(&r.num_labels) {
            return Err(serde::de::Error::custom(
                "last level size must equal L",
            ));
        }
        LabelTree::from_parents(r.level_sizes, r.parents).map_err(serde::de::Error::custom)
    }
}

impl LabelTree {
    /// Validates and indexes explicit parent maps.
    pub fn from_parents(level_sizes: Vec<usize>, parents: Vec<Vec<u32>>) -> Result<Self> {
        if level_sizes.len() < 2 {
            return Err(Error::InfeasibleLevels(
                "need at least one shortlisting level plus the label level".into(),
            ));
        }
        if level_sizes[0] == 0 || level_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InfeasibleLevels(format!(
                "level sizes must be positive and strictly increasing: {:?}",
                level_sizes
            )));
        }
        if parents.len() != level_sizes.len() - 1 {
            return Err(Error::InfeasibleLevels(format!(
                "expected {} parent maps, got {}",
                level_sizes.len() - 1,
                parents.len()
            )));
        }
        let mut children = Vec::with_capacity(parents.len());
        for (k, map) in parents.iter().enumerate() {
            let (parent_size, child_size) = (level_sizes[k], level_sizes[k + 1]);
            if map.len() != child_size {
                return Err(Error::InfeasibleLevels(format!(
                    "parent map for level {} has {} entries, expected {}",
                    k + 2,
                    map.len(),
                    child_size
                )));
            }
            let mut counts = vec![0usize; parent_size];
            for &p in map {
                if (p as usize) >= parent_size {
                    return Err(Error::InfeasibleLevels(format!(
                        "parent id {} out of range at level {}",
                        p,
                        k + 2
                    )));
                }
                counts[p as usize] += 1;
            }
            if counts.iter().any(|&c| c == 0) {
                return Err(Error::InfeasibleLevels(format!(
                    "level {} has a cluster without children",
                    k + 1
                )));
            }
            let mut offsets = vec![0usize; parent_size + 1];
            for p in 0..parent_size {
                offsets[p + 1] = offsets[p] + counts[p];
            }
            let mut fill = offsets.clone();
            let mut ids = vec![0u32; child_size];
            for (child, &p) in map.iter().enumerate() {
                ids[fill[p as usize]] = child as u32;
                fill[p as usize] += 1;
            }
            children.push((offsets, ids));
        }
        Ok(LabelTree {
            level_sizes,
            parents,
            children,
        })
    }

    pub fn num_labels(&self) -> usize {
        *self.level_sizes.last().unwrap()
    }

    /// Number of shortlisting levels `T`.
    pub fn num_levels(&self) -> usize {
        self.level_sizes.len() - 1
    }

    /// `[K_1, ..., K_T, L]`
    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.level_sizes[level - 1]
    }

    /// Parent map of `level` (2..=T+1).
    pub fn parents(&self, level: usize) -> &[u32] {
        &self.parents[level - 2]
    }

    pub fn parent_maps(&self) -> &[Vec<u32>] {
        &self.parents
    }

    /// Children at `level + 1` of cluster `id` at `level`.
    pub fn children(&self, level: usize, id: u32) -> &[u32] {
        let (offsets, ids) = &self.children[level - 1];
        &ids[offsets[id as usize]..offsets[id as usize + 1]]
    }

    pub fn full(&self, level: usize) -> Shortlist {
        Shortlist {
            level,
            ids: (0..self.level_size(level) as u32).collect(),
        }
    }

    fn check_level(&self, level: usize, lo: usize, hi: usize) -> Result<()> {
        if level < lo || level > hi {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.level_sizes.len(),
            });
        }
        Ok(())
    }

    fn check_ids(&self, s: &Shortlist) -> Result<()> {
        let size = self.level_size(s.level);
        if let Some(&bad) = s.ids.iter().find(|&&i| (i as usize) >= size) {
            return Err(Error::InvalidConfig(format!(
                "id {} out of range for level {} of size {}",
                bad, s.level, size
            )));
        }
        Ok(())
    }

    /// All level-(t+1) ids whose parent is in `s`.
    pub fn refine(&self, s: &Shortlist) -> Result<Shortlist> {
        self.check_level(s.level, 1, self.num_levels())?;
        self.check_ids(s)?;
        let mut ids: Vec<u32> = s
            .ids
            .iter()
            .flat_map(|&c| self.children(s.level, c).iter().copied())
            .collect();
        ids.sort_unstable();
        Ok(Shortlist {
            level: s.level + 1,
            ids,
        })
    }

    /// Parents of every id in `s`.
    pub fn coarsen(&self, s: &Shortlist) -> Result<Shortlist> {
        self.check_level(s.level, 2, self.num_levels() + 1)?;
        self.check_ids(s)?;
        let map = self.parents(s.level);
        Ok(Shortlist::new(
            s.level - 1,
            s.ids.iter().map(|&i| map[i as usize]).collect(),
        ))
    }

    /// Level-`t` clusters containing at least one of `labels`.
    pub fn level_cover(&self, labels: &[u32], level: usize) -> Result<Shortlist> {
        self.check_level(level, 1, self.num_levels() + 1)?;
        let mut s = Shortlist::new(self.num_levels() + 1, labels.to_vec());
        self.check_ids(&s)?;
        while s.level > level {
            s = self.coarsen(&s)?;
        }
        Ok(s)
    }

    /// Largest difference in child counts between clusters of `level`.
    pub fn child_count_spread(&self, level: usize) -> usize {
        let (offsets, _) = &self.children[level - 1];
        let counts = offsets.windows(2).map(|w| w[1] - w[0]);
        let max = counts.clone().max().unwrap_or(0);
        let min = counts.min().unwrap_or(0);
        max - min
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn exact_log(k: usize, b: usize) -> Option<u32> {
    let mut acc = 1usize;
    let mut d = 0;
    while acc < k {
        acc = acc.checked_mul(b)?;
        d += 1;
    }
    (acc == k).then_some(d)
}

/// Rounds requested level sizes to the nearest achievable powers of `b`.
pub fn resolve_level_sizes(requested: &[usize], b: usize, num_labels: usize) -> Result<Vec<usize>> {
    if b < 2 {
        return Err(Error::InfeasibleLevels("branching factor must be >= 2".into()));
    }
    let mut out: Vec<usize> = Vec::with_capacity(requested.len());
    for &k in requested {
        let d = ((k.max(1) as f64).ln() / (b as f64).ln()).round().max(1.0) as u32;
        let mut size = b.pow(d);
        if let Some(&prev) = out.last() {
            if size <= prev {
                size = prev * b;
            }
        }
        if size >= num_labels {
            return Err(Error::InfeasibleLevels(format!(
                "cannot realize {:?} below L={} with b={}",
                requested, num_labels, b
            )));
        }
        out.push(size);
    }
    Ok(out)
}

/// Splits `members` into `b` balanced groups by their centroids.
fn split_node(
    members: &[u32],
    centroids: &[SparseVector],
    b: usize,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    let (nonzero, zero): (Vec<u32>, Vec<u32>) = members
        .iter()
        .partition(|&&l| !centroids[l as usize].is_empty());
    let mut groups: Vec<Vec<u32>> = if nonzero.len() >= b {
        let points: Vec<&SparseVector> = nonzero.iter().map(|&l| &centroids[l as usize]).collect();
        let result = balanced_kmeans(&points, b, seed, KMEANS_MAX_ITER)?;
        result
            .groups(b)
            .into_iter()
            .map(|g| g.into_iter().map(|i| nonzero[i]).collect())
            .collect()
    } else {
        let mut g = vec![Vec::new(); b];
        for (i, &l) in nonzero.iter().enumerate() {
            g[i % b].push(l);
        }
        g
    };
    for l in zero {
        let smallest = (0..b).min_by_key(|&g| (groups[g].len(), g)).unwrap();
        groups[smallest].push(l);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Ok(groups)
}

/// Recursive top-down balanced k-means over label centroids.
///
/// Every requested level size must be `b^d`; the tree is split down to the
/// depth of the last level, and the labels hang off those leaf clusters.
/// Sibling nodes are split in parallel with per-node seeds, so the result
/// does not depend on thread scheduling.
pub fn build_hlt(
    centroids: &[SparseVector],
    level_sizes: &[usize],
    b: usize,
    seed: u64,
) -> Result<LabelTree> {
    let num_labels = centroids.len();
    if b < 2 {
        return Err(Error::InfeasibleLevels("branching factor must be >= 2".into()));
    }
    if level_sizes.is_empty() {
        return Err(Error::InfeasibleLevels("no shortlisting levels".into()));
    }
    let mut depths = Vec::with_capacity(level_sizes.len());
    for &k in level_sizes {
        let d = exact_log(k, b).filter(|&d| d >= 1).ok_or_else(|| {
            Error::InfeasibleLevels(format!("level size {} is not a power of b={}", k, b))
        })?;
        depths.push(d);
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InfeasibleLevels(format!(
            "level sizes must strictly increase: {:?}",
            level_sizes
        )));
    }
    let deepest = *depths.last().unwrap();
    if *level_sizes.last().unwrap() >= num_labels {
        return Err(Error::InfeasibleLevels(format!(
            "finest cluster level {} must be smaller than L={}",
            level_sizes.last().unwrap(),
            num_labels
        )));
    }

    let mut nodes: Vec<Vec<u32>> = vec![(0..num_labels as u32).collect()];
    for depth in 0..deepest {
        let split: Vec<Vec<Vec<u32>>> = nodes
            .par_iter()
            .enumerate()
            .map(|(j, members)| {
                split_node(members, centroids, b, derive_seed(seed, &[depth as u64, j as u64]))
            })
            .collect::<Result<_>>()?;
        nodes = split.into_iter().flatten().collect();
    }

    let mut label_parent = vec![0u32; num_labels];
    for (leaf, members) in nodes.iter().enumerate() {
        for &l in members {
            label_parent[l as usize] = leaf as u32;
        }
    }
    let mut parents = Vec::with_capacity(level_sizes.len());
    for t in 1..level_sizes.len() {
        let stride = (b as u32).pow(depths[t] - depths[t - 1]);
        parents.push((0..level_sizes[t] as u32).map(|i| i / stride).collect());
    }
    parents.push(label_parent);

    let mut sizes = level_sizes.to_vec();
    sizes.push(num_labels);
    LabelTree::from_parents(sizes, parents)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tree8() -> LabelTree {
        LabelTree::from_parents(
            vec![2, 4, 8],
            vec![vec![0, 0, 1, 1], vec![0, 0, 1, 1, 2, 2, 3, 3]],
        )
        .unwrap()
    }

    #[test]
    fn refine_and_coarsen_examples() {
        let t = tree8();
        assert_eq!(t.refine(&Shortlist::new(1, vec![0])).unwrap().ids, vec![0, 1]);
        assert_eq!(t.coarsen(&Shortlist::new(2, vec![1, 2])).unwrap().ids, vec![0, 1]);
        assert_eq!(t.refine(&t.full(1)).unwrap(), t.full(2));
        assert!(t.refine(&Shortlist::new(1, vec![])).unwrap().is_empty());
        assert!(matches!(
            t.refine(&Shortlist::new(3, vec![0])),
            Err(Error::LevelOutOfRange { .. })
        ));
        assert!(matches!(
            t.coarsen(&Shortlist::new(1, vec![0])),
            Err(Error::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn cover_of_single_label() {
        let t = tree8();
        assert_eq!(t.level_cover(&[5], 3).unwrap().ids, vec![5]);
        assert_eq!(t.level_cover(&[5], 2).unwrap().ids, vec![2]);
        assert_eq!(t.level_cover(&[5], 1).unwrap().ids, vec![1]);
    }

    #[test]
    fn build_on_eight_labels_has_forced_shape() {
        let centroids: Vec<SparseVector> = (0..8)
            .map(|i| SparseVector::new(8, vec![(i, 1.0)]).unwrap())
            .collect();
        let t = build_hlt(&centroids, &[2, 4], 2, 1).unwrap();
        assert_eq!(t.level_sizes(), &[2, 4, 8]);
        assert_eq!(t.parents(2).len(), 4);
        assert_eq!(t.parents(3).len(), 8);
        for level in 1..=2 {
            assert_eq!(t.child_count_spread(level), 0);
        }
    }

    #[test]
    fn infeasible_levels_rejected() {
        let centroids: Vec<SparseVector> = (0..8)
            .map(|i| SparseVector::new(8, vec![(i, 1.0)]).unwrap())
            .collect();
        assert!(build_hlt(&centroids, &[3], 2, 0).is_err());
        assert!(build_hlt(&centroids, &[4, 2], 2, 0).is_err());
        assert!(build_hlt(&centroids, &[8], 2, 0).is_err());
    }

    #[test]
    fn zero_centroids_keep_balance() {
        let mut centroids: Vec<SparseVector> = (0..6)
            .map(|i| SparseVector::new(8, vec![(i, 1.0)]).unwrap())
            .collect();
        centroids.push(SparseVector::zeros(8));
        centroids.push(SparseVector::zeros(8));
        let t = build_hlt(&centroids, &[2, 4], 2, 9).unwrap();
        assert_eq!(t.child_count_spread(2), 0);
    }

    #[test]
    fn resolves_to_powers() {
        assert_eq!(resolve_level_sizes(&[1000, 8000, 60000], 2, 670091).unwrap(), vec![1024, 8192, 65536]);
        assert_eq!(resolve_level_sizes(&[2, 3], 2, 64).unwrap(), vec![2, 4]);
        assert!(resolve_level_sizes(&[64], 2, 64).is_err());
    }

    #[test]
    fn json_layout() {
        let t = tree8();
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["L"], 8);
        assert_eq!(v["level_sizes"], serde_json::json!([2, 4, 8]));
        assert_eq!(v["parents"][0], serde_json::json!([0, 0, 1, 1]));
        let back: LabelTree = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }
}
