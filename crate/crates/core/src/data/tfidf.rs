use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SparseVector};
use crate::error::{Error, Result};

/// Smoothed idf weights fitted on a corpus of raw term counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfIdfRecord", into = "TfIdfRecord")]
pub struct TfIdfVectorizer {
    pub num_docs: usize,
    pub doc_frequency: Vec<usize>,
    pub idf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TfIdfRecord {
    num_docs: usize,
    idf: Vec<f64>,
}

impl From<TfIdfVectorizer> for TfIdfRecord {
    fn from(v: TfIdfVectorizer) -> Self {
        TfIdfRecord {
            num_docs: v.num_docs,
            idf: v.idf,
        }
    }
}

impl From<TfIdfRecord> for TfIdfVectorizer {
    // df is recoverable from idf = ln((n+1)/(df+1)) + 1.
    fn from(r: TfIdfRecord) -> Self {
        let n1 = (r.num_docs + 1) as f64;
        let doc_frequency = r
            .idf
            .iter()
            .map(|&w| (n1 / (w - 1.0).exp() - 1.0).round().max(0.0) as usize)
            .collect();
        TfIdfVectorizer {
            num_docs: r.num_docs,
            doc_frequency,
            idf: r.idf,
        }
    }
}

pub fn smoothed_idf(num_docs: usize, df: usize) -> f64 {
    (((num_docs + 1) as f64) / ((df + 1) as f64)).ln() + 1.0
}

/// Counts document frequencies over `ds` and derives smoothed idf weights.
pub fn fit_tfidf(ds: &Dataset) -> TfIdfVectorizer {
    let mut doc_frequency = vec![0usize; ds.num_features];
    for inst in &ds.instances {
        for &i in inst.features.indices() {
            doc_frequency[i as usize] += 1;
        }
    }
    let num_docs = ds.num_points();
    let idf = doc_frequency
        .iter()
        .map(|&df| smoothed_idf(num_docs, df))
        .collect();
    TfIdfVectorizer {
        num_docs,
        doc_frequency,
        idf,
    }
}

impl TfIdfVectorizer {
    pub fn num_features(&self) -> usize {
        self.idf.len()
    }

    /// Scales term counts by idf and L2-normalizes.
    pub fn transform(&self, x: &SparseVector) -> Result<SparseVector> {
        if x.dim() != self.idf.len() {
            return Err(Error::DimensionMismatch {
                expected: self.idf.len(),
                actual: x.dim(),
            });
        }
        Ok(x.map_values(|i, v| v * self.idf[i as usize]).normalized())
    }

    /// Transforms every instance's features in place of a copy of `ds`.
    pub fn transform_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let mut out = ds.clone();
        for inst in &mut out.instances {
            inst.features = self.transform(&inst.features)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
