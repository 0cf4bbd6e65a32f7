//! Extreme multi-label classification with a multi-resolution label cascade.
//!
//! The pipeline: parse a sparse dataset ([`data`]), cluster label centroids
//! into a hierarchical label tree ([`hlt`]), train a layered encoder whose
//! intermediate layers feed one shortlisting classifier per tree level
//! ([`encoder`], [`cascade`]), and optionally refine the final ranking with
//! per-label squared-hinge classifiers over dense and tf-idf features
//! ([`dismec`]). [`metrics`] holds P@k, PSP@k and shortlist recall.

pub mod bundle;
pub mod cascade;
pub mod config;
pub mod data;
pub mod dismec;
pub mod encoder;
pub mod error;
pub mod hlt;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};

/// Version of the on-disk formats written by this crate.
pub const FORMAT_VERSION: u32 = 1;
