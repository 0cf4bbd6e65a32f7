//! Sparse datasets, tf-idf features and the synthetic hierarchical corpus.

mod dataset;
mod sparse;
mod synthetic;
mod tfidf;

pub use dataset::{parse_dataset, Dataset, Instance};
pub use sparse::SparseVector;
pub use synthetic::{
    branching_factor, generate_synthetic, latent_ancestor, signature_ranges, SyntheticConfig,
};
pub use tfidf::{fit_tfidf, smoothed_idf, TfIdfVectorizer};
