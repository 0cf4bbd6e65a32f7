//! On-disk model bundle: one directory holding everything `predict` needs.
//!
//! ```text
//! config.json        format version, model config, run config
//! tree.json          label tree
//! encoder.json/.bin  encoder manifest and weights
//! classifiers.json/.bin
//! tfidf.json         vectorizer fitted on the training split
//! label_stats.json   training label frequencies (for propensities)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeModel, LevelClassifier, ModelConfig};
use crate::config::RunConfig;
use crate::data::{Dataset, TfIdfVectorizer};
use crate::encoder::{read_manifest, EncoderState, WeightManifest};
use crate::error::{Error, Result};
use crate::hlt::LabelTree;
use crate::linalg::{write_f64_le, Matrix};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleConfig {
    format_version: u32,
    model: ModelConfig,
    #[serde(default)]
    run: Option<RunConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub num_points: usize,
    pub label_frequencies: Vec<usize>,
}

impl LabelStats {
    pub fn from_dataset(ds: &Dataset) -> Self {
        LabelStats {
            num_points: ds.num_points(),
            label_frequencies: ds.label_frequencies(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: CascadeModel,
    pub tfidf: TfIdfVectorizer,
    pub label_stats: LabelStats,
    pub run: Option<RunConfig>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn save_classifiers(dir: &Path, classifiers: &[LevelClassifier]) -> Result<()> {
    let mut values = Vec::new();
    let mut shapes = Vec::new();
    for c in classifiers {
        values.extend_from_slice(c.weight.as_slice());
        values.extend_from_slice(&c.bias);
        shapes.push([c.num_outputs(), c.input_dim()]);
        shapes.push([c.num_outputs(), 1]);
    }
    let manifest = WeightManifest {
        format: "f64-le".into(),
        config: serde_json::json!({ "levels": classifiers.len() }),
        shapes,
        num_values: values.len(),
    };
    write_json(&dir.join("classifiers.json"), &manifest)?;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    write_f64_le(&values, &mut bytes);
    let bin = dir.join("classifiers.bin");
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
}

fn load_classifiers(dir: &Path) -> Result<Vec<LevelClassifier>> {
    let (manifest, values) = read_manifest(dir, "classifiers")?;
    if manifest.shapes.len() % 2 != 0 {
        return Err(Error::InvalidConfig("classifier manifest lists an odd number of tensors".into()));
    }
    let expected: usize = manifest.shapes.iter().map(|s| s[0] * s[1]).sum();
    if expected != values.len() {
        return Err(Error::InvalidConfig(format!(
            "classifier weights hold {} values, manifest expects {}",
            values.len(),
            expected
        )));
    }
    let mut rest = values.as_slice();
    let mut out = Vec::with_capacity(manifest.shapes.len() / 2);
    for pair in manifest.shapes.chunks(2) {
        let [k, d] = pair[0];
        if pair[1] != [k, 1] {
            return Err(Error::InvalidConfig("classifier bias shape mismatch".into()));
        }
        let (w, tail) = rest.split_at(k * d);
        let (b, tail) = tail.split_at(k);
        rest = tail;
        out.push(LevelClassifier {
            weight: Matrix::from_vec(k, d, w.to_vec()),
            bias: b.to_vec(),
        });
    }
    Ok(out)
}

impl ModelBundle {
    /// Writes every artifact into `dir`, creating it if needed. Output is a
    /// pure function of the bundle contents.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("config.json"),
            &BundleConfig {
                format_version: FORMAT_VERSION,
                model: self.model.config.clone(),
                run: self.run.clone(),
            },
        )?;
        self.model.tree.save(dir.join("tree.json"))?;
        self.model.encoder.save(dir, "encoder")?;
        save_classifiers(dir, &self.model.classifiers)?;
        self.tfidf.save(dir.join("tfidf.json"))?;
        write_json(&dir.join("label_stats.json"), &self.label_stats)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "model directory not found"),
            ));
        }
        let cfg: BundleConfig = read_json(&dir.join("config.json"))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "bundle format {} is not supported (expected {})",
                cfg.format_version, FORMAT_VERSION
            )));
        }
        let tree = LabelTree::load(dir.join("tree.json"))?;
        let encoder = EncoderState::load(dir, "encoder")?;
        let classifiers = load_classifiers(dir)?;
        let model = CascadeModel::from_parts(cfg.model, encoder, tree, classifiers)?;
        let tfidf = TfIdfVectorizer::load(dir.join("tfidf.json"))?;
        let label_stats: LabelStats = read_json(&dir.join("label_stats.json"))?;
        if tfidf.num_features() != model.encoder.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: model.encoder.config.input_dim,
                actual: tfidf.num_features(),
            });
        }
        if label_stats.label_frequencies.len() != model.tree.num_labels() {
            return Err(Error::DimensionMismatch {
                expected: model.tree.num_labels(),
                actual: label_stats.label_frequencies.len(),
            });
        }
        Ok(ModelBundle {
            model,
            tfidf,
            label_stats,
            run: cfg.run,
        })
    }
}
