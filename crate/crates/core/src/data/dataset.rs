use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::SparseVector;
use crate::error::{Error, Result};

/// One labelled document.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: SparseVector,
    /// Sorted, duplicate-free label ids.
    pub labels: Vec<u32>,
}

/// A multi-label dataset in the sparse XMC repository layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_features: usize,
    pub num_labels: usize,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn num_points(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Number of training positives per label.
    pub fn label_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0usize; self.num_labels];
        for inst in &self.instances {
            for &l in &inst.labels {
                freq[l as usize] += 1;
            }
        }
        freq
    }

    /// Splits off the trailing `fraction` of instances.
    pub fn split_tail(&self, fraction: f64) -> (Dataset, Dataset) {
        let n_tail = ((self.instances.len() as f64) * fraction).round() as usize;
        let n_head = self.instances.len() - n_tail.min(self.instances.len());
        let head = Dataset {
            num_features: self.num_features,
            num_labels: self.num_labels,
            instances: self.instances[..n_head].to_vec(),
        };
        let tail = Dataset {
            num_features: self.num_features,
            num_labels: self.num_labels,
            instances: self.instances[n_head..].to_vec(),
        };
        (head, tail)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_dataset(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    /// Writes the header line and one line per instance.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{} {} {}",
            self.instances.len(),
            self.num_features,
            self.num_labels
        )
        .unwrap();
        for inst in &self.instances {
            let labels: Vec<String> = inst.labels.iter().map(|l| l.to_string()).collect();
            out.push_str(&labels.join(","));
            for (i, v) in inst.features.iter() {
                write!(out, " {}:{}", i, v).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("invalid {} {:?}", what, tok)))
}

/// Parses "N D L" followed by N lines of "l1,l2,... f:v f:v ...".
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l));

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::parse(1, "header must be \"N D L\""));
    }
    let num_points = parse_usize(fields[0], 1, "point count")?;
    let num_features = parse_usize(fields[1], 1, "feature count")?;
    let num_labels = parse_usize(fields[2], 1, "label count")?;
    if num_features == 0 || num_labels == 0 {
        return Err(Error::parse(1, "feature and label counts must be positive"));
    }

    let mut instances = Vec::with_capacity(num_points);
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if instances.len() == num_points {
            return Err(Error::parse(
                lineno,
                format!("more than {} instances", num_points),
            ));
        }
        instances.push(parse_instance(line, lineno, num_features, num_labels)?);
    }
    if instances.len() != num_points {
        return Err(Error::parse(
            1,
            format!(
                "header declares {} instances, found {}",
                num_points,
                instances.len()
            ),
        ));
    }
    Ok(Dataset {
        num_features,
        num_labels,
        instances,
    })
}

fn parse_instance(
    line: &str,
    lineno: usize,
    num_features: usize,
    num_labels: usize,
) -> Result<Instance> {
    let mut tokens = line.split_whitespace().peekable();
    let mut labels = Vec::new();
    if let Some(first) = tokens.peek() {
        if !first.contains(':') {
            for tok in first.split(',') {
                let l = parse_usize(tok, lineno, "label id")?;
                if l >= num_labels {
                    return Err(Error::parse(
                        lineno,
                        format!("label id {} >= L={}", l, num_labels),
                    ));
                }
                labels.push(l as u32);
            }
            tokens.next();
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(lineno, "instance has no labels"));
    }
    labels.sort_unstable();
    labels.dedup();

    let mut entries = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(lineno, format!("expected f:v, got {:?}", tok)))?;
        let idx = parse_usize(idx, lineno, "feature index")?;
        if idx >= num_features {
            return Err(Error::parse(
                lineno,
                format!("feature index {} >= D={}", idx, num_features),
            ));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| Error::parse(lineno, format!("non-numeric value {:?}", val)))?;
        if !val.is_finite() {
            return Err(Error::parse(lineno, format!("non-finite value {:?}", val)));
        }
        entries.push((idx as u32, val));
    }
    entries.sort_by_key(|e| e.0);
    if entries.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::parse(lineno, "duplicate feature index"));
    }
    entries.retain(|e| e.1 != 0.0);
    let features = SparseVector::new(num_features, entries)
        .map_err(|e| Error::parse(lineno, e.to_string()))?;
    Ok(Instance { features, labels })
}
