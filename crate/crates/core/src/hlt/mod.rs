//! Hierarchical label tree: construction and shortlist operators.

mod kmeans;
mod tree;

pub use kmeans::{balanced_kmeans, KMeansResult};
pub use tree::{
    build_hlt, label_centroids, resolve_level_sizes, LabelCentroids, LabelTree, Shortlist,
};
