//! JSON run configuration shared by the tree builder, trainer and evaluators.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{ModelConfig, ScheduleConfig, TrainConfig, WarmupShape};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const TRAIN_STREAM: u64 = 1;
const ENCODER_STREAM: u64 = 2;
const TREE_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

fn default_true() -> bool {
    true
}

fn default_branching() -> usize {
    2
}

fn default_shard_size() -> usize {
    8
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSettings {
    /// Requested cluster counts `K_1 < ... < K_T`; rounded to powers of `branching`.
    pub level_sizes: Vec<usize>,
    #[serde(default = "default_branching")]
    pub branching: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSettings {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub tap_layers: Vec<usize>,
    pub dropout_rates: Vec<f64>,
    #[serde(default)]
    pub concat_first_tap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_encoder: f64,
    pub warmup_epochs: usize,
    pub hold_epochs: usize,
    pub anneal_epochs: usize,
    #[serde(default)]
    pub warmup_shape: WarmupShape,
    pub weight_decay: f64,
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
    /// Tail fraction of the training file held out for per-epoch recall logging.
    #[serde(default)]
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub tree: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub tree: TreeSettings,
    pub encoder: EncoderSettings,
    pub beam_widths: Vec<usize>,
    #[serde(default)]
    pub train_shortlist_caps: Option<Vec<usize>>,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    pub train: TrainSettings,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    /// Settings used by the desk-scale synthetic benchmark.
    pub fn desk_scale(seed: u64) -> Self {
        RunConfig {
            seed,
            tree: TreeSettings {
                level_sizes: vec![8, 32, 128],
                branching: 2,
            },
            encoder: EncoderSettings {
                hidden_dim: 64,
                num_layers: 5,
                tap_layers: vec![2, 3, 4, 5],
                dropout_rates: vec![0.1, 0.1, 0.1, 0.1],
                concat_first_tap: false,
            },
            beam_widths: vec![4, 8, 16],
            train_shortlist_caps: None,
            use_bias: true,
            train: TrainSettings {
                epochs: 15,
                batch_size: 32,
                lr_classifier: 1e-2,
                lr_encoder: 1e-3,
                warmup_epochs: 1,
                hold_epochs: 10,
                anneal_epochs: 4,
                warmup_shape: WarmupShape::Linear,
                weight_decay: 0.01,
                shard_size: 8,
                validation_fraction: 0.0,
            },
            workers: 1,
            paths: Paths::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Cross-field checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let levels = self.tree.level_sizes.len();
        if levels == 0 {
            return bad("tree.level_sizes must name at least one level".into());
        }
        if self.tree.branching < 2 {
            return bad(format!("tree.branching must be >= 2, got {}", self.tree.branching));
        }
        if self.encoder.tap_layers.len() != levels + 1 {
            return bad(format!(
                "encoder.tap_layers has {} entries; need {} (one per tree level plus the label level)",
                self.encoder.tap_layers.len(),
                levels + 1
            ));
        }
        if self.beam_widths.len() != levels {
            return bad(format!(
                "beam_widths has {} entries; need one per tree level ({})",
                self.beam_widths.len(),
                levels
            ));
        }
        if self.beam_widths.iter().any(|&k| k == 0) {
            return bad("beam_widths must be >= 1".into());
        }
        if let Some(caps) = &self.train_shortlist_caps {
            if caps.len() != levels {
                return bad(format!(
                    "train_shortlist_caps has {} entries; need {}",
                    caps.len(),
                    levels
                ));
            }
        }
        if !(0.0..1.0).contains(&self.train.validation_fraction) {
            return bad("train.validation_fraction must lie in [0, 1)".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        self.encoder_config(1)?.validate()?;
        self.train_config().validate()
    }

    pub fn encoder_config(&self, input_dim: usize) -> Result<EncoderConfig> {
        let e = &self.encoder;
        let cfg = EncoderConfig {
            input_dim,
            hidden_dim: e.hidden_dim,
            num_layers: e.num_layers,
            tap_layers: e.tap_layers.clone(),
            dropout_rates: e.dropout_rates.clone(),
            concat_first_tap: e.concat_first_tap,
            seed: derive_seed(self.seed, &[ENCODER_STREAM]),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, input_dim: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            encoder: self.encoder_config(input_dim)?,
            beam_widths: self.beam_widths.clone(),
            train_shortlist_caps: self.train_shortlist_caps.clone(),
            use_bias: self.use_bias,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_classifier: t.lr_classifier,
            lr_encoder: t.lr_encoder,
            schedule: ScheduleConfig {
                warmup_epochs: t.warmup_epochs,
                hold_epochs: t.hold_epochs,
                anneal_epochs: t.anneal_epochs,
                warmup_shape: t.warmup_shape,
            },
            weight_decay: t.weight_decay,
            seed: derive_seed(self.seed, &[TRAIN_STREAM]),
            workers: self.workers,
            shard_size: t.shard_size,
        }
    }

    pub fn tree_seed(&self) -> u64 {
        derive_seed(self.seed, &[TREE_STREAM])
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, &[SPLIT_STREAM])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_is_valid_and_round_trips() {
        let cfg = RunConfig::desk_scale(3);
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_inconsistent_fields() {
        let mut cfg = RunConfig::desk_scale(0);
        cfg.beam_widths.pop();
        assert!(cfg.validate().unwrap_err().to_string().contains("beam_widths"));
        let mut cfg = RunConfig::desk_scale(0);
        cfg.encoder.tap_layers = vec![2, 4];
        cfg.encoder.dropout_rates = vec![0.0, 0.0];
        assert!(cfg.validate().unwrap_err().to_string().contains("tap_layers"));
        let mut cfg = RunConfig::desk_scale(0);
        cfg.train.epochs = 3;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed":1,"bogus":2}"#).is_err());
    }

    #[test]
    fn streams_are_distinct() {
        let cfg = RunConfig::desk_scale(9);
        let seeds = [
            cfg.train_config().seed,
            cfg.encoder_config(4).unwrap().seed,
            cfg.tree_seed(),
            cfg.split_seed(),
        ];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
