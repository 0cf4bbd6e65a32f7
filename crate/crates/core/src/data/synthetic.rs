use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, SparseVector};
use crate::error::{Error, Result};

/// Parameters of the hierarchical synthetic corpus.
///
/// Labels are the leaves of a complete `b`-ary tree of the given depth, with
/// `b = num_labels^(1/depth)`. Every tree node owns a disjoint vocabulary
/// block; a label's signature is its own block plus the blocks of its
/// ancestors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_labels: usize,
    pub depth: usize,
    pub docs_per_label: usize,
    /// Overrides `num_labels * docs_per_label` when set.
    #[serde(default)]
    pub num_docs: Option<usize>,
    pub vocab: usize,
    pub noise: f64,
    /// Each document gets up to this many sibling labels besides its primary one.
    #[serde(default)]
    pub extra_labels: usize,
    #[serde(default = "default_doc_length")]
    pub doc_length: usize,
    pub seed: u64,
}

fn default_doc_length() -> usize {
    40
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_labels: 256,
            depth: 4,
            docs_per_label: 16,
            num_docs: None,
            vocab: 4096,
            noise: 0.1,
            extra_labels: 2,
            doc_length: default_doc_length(),
            seed: 0,
        }
    }
}

/// Integer `b` with `b^depth == num_labels`, if any.
pub fn branching_factor(num_labels: usize, depth: usize) -> Option<usize> {
    if depth == 0 || num_labels < 2 {
        return None;
    }
    let guess = (num_labels as f64).powf(1.0 / depth as f64).round() as usize;
    (guess.saturating_sub(1)..=guess + 1)
        .find(|&b| b >= 2 && b.checked_pow(depth as u32) == Some(num_labels))
}

/// Ancestor of `label` at latent depth `level` (1 = coarsest, `depth` = the label itself).
pub fn latent_ancestor(label: usize, b: usize, depth: usize, level: usize) -> usize {
    label / b.pow((depth - level) as u32)
}

struct Blocks {
    b: usize,
    depth: usize,
    size: usize,
    offsets: Vec<usize>,
}

impl Blocks {
    fn range(&self, level: usize, node: usize) -> (usize, usize) {
        let start = (self.offsets[level] + node) * self.size;
        (start, start + self.size)
    }

    fn of(&self, label: usize, level: usize) -> (usize, usize) {
        self.range(level, latent_ancestor(label, self.b, self.depth, level))
    }
}

/// Generates a corpus whose labels follow a latent balanced hierarchy.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.depth < 2 {
        return Err(Error::InvalidConfig("depth must be >= 2".into()));
    }
    let b = branching_factor(cfg.num_labels, cfg.depth).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "{} labels is not a power of an integer branching factor with depth {}",
            cfg.num_labels, cfg.depth
        ))
    })?;
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::InvalidConfig("noise must lie in [0, 1]".into()));
    }
    if cfg.doc_length == 0 {
        return Err(Error::InvalidConfig("doc_length must be positive".into()));
    }
    // offsets[level] = number of nodes at shallower levels (level 1 starts at 0)
    let mut offsets = vec![0usize; cfg.depth + 1];
    let mut total_nodes = 0;
    for (level, offset) in offsets.iter_mut().enumerate().skip(1) {
        *offset = total_nodes;
        total_nodes += b.pow(level as u32);
    }
    let size = cfg.vocab / total_nodes;
    if size == 0 {
        return Err(Error::InvalidConfig(format!(
            "vocab {} too small for {} hierarchy nodes",
            cfg.vocab, total_nodes
        )));
    }
    let blocks = Blocks {
        b,
        depth: cfg.depth,
        size,
        offsets,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let num_docs = cfg
        .num_docs
        .unwrap_or(cfg.num_labels * cfg.docs_per_label);
    let mut order: Vec<usize> = (0..num_docs).collect();
    order.shuffle(&mut rng);

    let mut instances = Vec::with_capacity(num_docs);
    for slot in order {
        let primary = slot % cfg.num_labels;
        let mut labels = vec![primary as u32];
        let extra = rng.gen_range(0..=cfg.extra_labels.min(b - 1));
        if extra > 0 {
            let group = primary / b * b;
            let mut siblings: Vec<usize> = (group..group + b).filter(|&l| l != primary).collect();
            siblings.shuffle(&mut rng);
            labels.extend(siblings[..extra].iter().map(|&l| l as u32));
        }
        labels.sort_unstable();

        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for _ in 0..cfg.doc_length {
            let term = if rng.gen::<f64>() < cfg.noise {
                rng.gen_range(0..cfg.vocab)
            } else {
                let label = labels[rng.gen_range(0..labels.len())] as usize;
                let level = if rng.gen::<f64>() < 0.5 {
                    cfg.depth
                } else {
                    rng.gen_range(1..cfg.depth)
                };
                let (lo, hi) = blocks.of(label, level);
                rng.gen_range(lo..hi)
            };
            *counts.entry(term as u32).or_insert(0.0) += 1.0;
        }
        let features = SparseVector::new(cfg.vocab, counts.into_iter().collect())?;
        instances.push(Instance { features, labels });
    }
    Ok(Dataset {
        num_features: cfg.vocab,
        num_labels: cfg.num_labels,
        instances,
    })
}

/// Vocabulary range owned by a label's own leaf block, plus all ancestor blocks.
pub fn signature_ranges(cfg: &SyntheticConfig, label: usize) -> Result<Vec<(usize, usize)>> {
    let b = branching_factor(cfg.num_labels, cfg.depth)
        .ok_or_else(|| Error::InvalidConfig("invalid label count".into()))?;
    let mut offsets = vec![0usize; cfg.depth + 1];
    let mut total = 0;
    for (level, offset) in offsets.iter_mut().enumerate().skip(1) {
        *offset = total;
        total += b.pow(level as u32);
    }
    let blocks = Blocks {
        b,
        depth: cfg.depth,
        size: cfg.vocab / total,
        offsets,
    };
    Ok((1..=cfg.depth).map(|lv| blocks.of(label, lv)).collect())
}
