use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse real vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from already sorted entries, validating every invariant.
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            if (i as usize) >= dim {
                return Err(Error::InvalidSparse(format!(
                    "index {} out of range for dim {}",
                    i, dim
                )));
            }
            if let Some(&last) = indices.last() {
                if i <= last {
                    return Err(Error::InvalidSparse(format!(
                        "indices not strictly increasing at {}",
                        i
                    )));
                }
            }
            if v == 0.0 {
                return Err(Error::InvalidSparse(format!("stored zero at index {}", i)));
            }
            if !v.is_finite() {
                return Err(Error::InvalidSparse(format!("non-finite value at index {}", i)));
            }
            indices.push(i);
            values.push(v);
        }
        Ok(SparseVector {
            dim,
            indices,
            values,
        })
    }

    /// Sorts entries, sums duplicates and drops zeros.
    pub fn from_unsorted(dim: usize, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Self::new(dim, merged)
    }

    /// Keeps the nonzero coordinates of a dense slice.
    pub fn from_dense(values: &[f64]) -> Self {
        let mut out = SparseVector::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(i as u32);
                out.values.push(v);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, index: u32) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Unit-norm copy; the zero vector stays zero.
    pub fn normalized(&self) -> SparseVector {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v /= n;
        }
        out
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i as usize]).sum()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    /// `dense += scale * self`
    pub fn add_to_dense(&self, dense: &mut [f64], scale: f64) {
        for (i, v) in self.iter() {
            dense[i as usize] += scale * v;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.add_to_dense(&mut out, 1.0);
        out
    }

    /// Applies `f` to every stored value, dropping entries that become zero.
    pub fn map_values(&self, mut f: impl FnMut(u32, f64) -> f64) -> SparseVector {
        let mut out = SparseVector::zeros(self.dim);
        for (i, v) in self.iter() {
            let nv = f(i, v);
            if nv != 0.0 {
                out.indices.push(i);
                out.values.push(nv);
            }
        }
        out
    }
}
