//! Residual tanh encoder over tf-idf input with per-layer taps.
//!
//! `h_0 = W_in x`, `h_a = h_{a-1} + tanh(W_a h_{a-1} + b_a)` for `a = 1..=A`.
//! The embedding for resolution `t` is `h_{a_t}`; with `concat_first_tap`
//! the first resolution reads `[h_{a_1 - 1}; h_{a_1}]` instead.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SparseVector;
use crate::error::{Error, Result};
use crate::linalg::{axpy, glorot_bound, read_f64_le, write_f64_le, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Layers `a_1 < ... < a_{T+1} = A` feeding each resolution.
    pub tap_layers: Vec<usize>,
    /// Inverted-dropout rate applied to each tap during training.
    pub dropout_rates: Vec<f64>,
    #[serde(default)]
    pub concat_first_tap: bool,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("encoder dimensions must be positive".into());
        }
        if self.tap_layers.is_empty() {
            return bad("at least one tap layer is required".into());
        }
        if self.tap_layers[0] <= 1 {
            return bad(format!("first tap layer must be > 1, got {}", self.tap_layers[0]));
        }
        if self.tap_layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("tap layers must increase strictly: {:?}", self.tap_layers));
        }
        if *self.tap_layers.last().unwrap() != self.num_layers {
            return bad(format!(
                "last tap layer must equal num_layers={}",
                self.num_layers
            ));
        }
        if self.dropout_rates.len() != self.tap_layers.len() {
            return bad(format!(
                "{} dropout rates for {} taps",
                self.dropout_rates.len(),
                self.tap_layers.len()
            ));
        }
        if let Some(p) = self.dropout_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("dropout rate {} outside [0, 1)", p));
        }
        Ok(())
    }

    pub fn num_taps(&self) -> usize {
        self.tap_layers.len()
    }

    pub fn tap_dim(&self, tap: usize) -> usize {
        if tap == 0 && self.concat_first_tap {
            2 * self.hidden_dim
        } else {
            self.hidden_dim
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    pub config: EncoderConfig,
    /// Row `j` is the hidden-space image of input feature `j` (so this is `W_inᵀ`).
    pub input: Matrix,
    pub layers: Vec<Layer>,
    generation: u64,
}

impl PartialEq for EncoderState {
    /// Compares parameters only; the cache generation is bookkeeping.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.input == other.input && self.layers == other.layers
    }
}

/// Whether taps are subject to dropout.
pub enum Mode<'a> {
    Inference,
    Train(&'a mut ChaCha8Rng),
}

/// Activations retained by [`EncoderState::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    input: SparseVector,
    hidden: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub input: Matrix,
    pub layers: Vec<Layer>,
}

impl EncoderGrads {
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.hidden_dim;
        EncoderGrads {
            input: Matrix::zeros(config.input_dim, d),
            layers: (0..config.num_layers)
                .map(|_| Layer {
                    weight: Matrix::zeros(d, d),
                    bias: vec![0.0; d],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        self.input.add_assign(&other.input);
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight);
            crate::linalg::add_assign(&mut a.bias, &b.bias);
        }
    }
}

impl EncoderState {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (big_d, d) = (config.input_dim, config.hidden_dim);
        let input = Matrix::uniform(big_d, d, glorot_bound(big_d, d), &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| Layer {
                weight: Matrix::uniform(d, d, glorot_bound(d, d), &mut rng),
                bias: vec![0.0; d],
            })
            .collect();
        Ok(EncoderState {
            config,
            input,
            layers,
            generation: 0,
        })
    }

    /// Marks outstanding forward caches as stale; call after every update.
    pub fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub fn forward(&self, x: &SparseVector, mode: Mode<'_>) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
        let cfg = &self.config;
        if x.dim() != cfg.input_dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.input_dim,
                actual: x.dim(),
            });
        }
        let d = cfg.hidden_dim;
        let mut h0 = vec![0.0; d];
        for (j, v) in x.iter() {
            axpy(v, self.input.row(j as usize), &mut h0);
        }
        let mut hidden = Vec::with_capacity(cfg.num_layers + 1);
        let mut activations = Vec::with_capacity(cfg.num_layers);
        hidden.push(h0);
        for (a, layer) in self.layers.iter().enumerate() {
            let prev = &hidden[a];
            let mut z = vec![0.0; d];
            layer.weight.matvec(prev, &mut z);
            let act: Vec<f64> = z.iter().zip(&layer.bias).map(|(z, b)| (z + b).tanh()).collect();
            let next: Vec<f64> = prev.iter().zip(&act).map(|(h, g)| h + g).collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: a + 1 });
            }
            activations.push(act);
            hidden.push(next);
        }

        let mut rng = match mode {
            Mode::Inference => None,
            Mode::Train(rng) => Some(rng),
        };
        let mut taps = Vec::with_capacity(cfg.num_taps());
        let mut masks = Vec::with_capacity(cfg.num_taps());
        for (t, &layer) in cfg.tap_layers.iter().enumerate() {
            let mut phi = if t == 0 && cfg.concat_first_tap {
                let mut v = hidden[layer - 1].clone();
                v.extend_from_slice(&hidden[layer]);
                v
            } else {
                hidden[layer].clone()
            };
            let rate = cfg.dropout_rates[t];
            let mask = match rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let m: Vec<f64> = (0..phi.len())
                        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    phi.iter_mut().zip(&m).for_each(|(p, s)| *p *= s);
                    Some(m)
                }
                _ => None,
            };
            taps.push(phi);
            masks.push(mask);
        }
        let cache = ForwardCache {
            generation: self.generation,
            input: x.clone(),
            hidden,
            activations,
            masks,
        };
        Ok((taps, cache))
    }

    /// Accumulates parameter gradients given `∂L/∂φ^(t)` for every tap.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        tap_grads: &[Vec<f64>],
        grads: &mut EncoderGrads,
    ) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let cfg = &self.config;
        if tap_grads.len() != cfg.num_taps() {
            return Err(Error::DimensionMismatch {
                expected: cfg.num_taps(),
                actual: tap_grads.len(),
            });
        }
        let d = cfg.hidden_dim;
        // incoming[a] = gradient injected directly at h_a by the taps
        let mut incoming: Vec<Option<Vec<f64>>> = vec![None; cfg.num_layers + 1];
        let mut inject = |layer: usize, g: &[f64]| {
            let slot = incoming[layer].get_or_insert_with(|| vec![0.0; d]);
            axpy(1.0, g, slot);
        };
        for (t, &layer) in cfg.tap_layers.iter().enumerate() {
            let g = &tap_grads[t];
            if g.len() != cfg.tap_dim(t) {
                return Err(Error::DimensionMismatch {
                    expected: cfg.tap_dim(t),
                    actual: g.len(),
                });
            }
            let g: Vec<f64> = match &cache.masks[t] {
                Some(m) => g.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => g.clone(),
            };
            if t == 0 && cfg.concat_first_tap {
                inject(layer - 1, &g[..d]);
                inject(layer, &g[d..]);
            } else {
                inject(layer, &g);
            }
        }

        let mut g = vec![0.0; d];
        for a in (1..=cfg.num_layers).rev() {
            if let Some(inj) = &incoming[a] {
                axpy(1.0, inj, &mut g);
            }
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let act = &cache.activations[a - 1];
            let dz: Vec<f64> = g.iter().zip(act).map(|(g, s)| g * (1.0 - s * s)).collect();
            let layer = &self.layers[a - 1];
            let lg = &mut grads.layers[a - 1];
            lg.weight.add_outer(1.0, &dz, &cache.hidden[a - 1]);
            axpy(1.0, &dz, &mut lg.bias);
            layer.weight.matvec_t_add(&dz, &mut g);
        }
        if let Some(inj) = &incoming[0] {
            axpy(1.0, inj, &mut g);
        }
        for (j, v) in cache.input.iter() {
            axpy(v, &g, grads.input.row_mut(j as usize));
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, tap_grads: &[Vec<f64>]) -> Result<EncoderGrads> {
        let mut grads = EncoderGrads::zeros(&self.config);
        self.backward_into(cache, tap_grads, &mut grads)?;
        Ok(grads)
    }

    /// Flat parameter order: input matrix, then each layer's weight and bias.
    pub(crate) fn param_slices_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out: Vec<(&mut [f64], bool)> = vec![(self.input.as_mut_slice(), true)];
        for layer in &mut self.layers {
            out.push((layer.weight.as_mut_slice(), true));
            out.push((layer.bias.as_mut_slice(), false));
        }
        out
    }

    fn flat_values(&self) -> Vec<f64> {
        let mut v = self.input.as_slice().to_vec();
        for layer in &self.layers {
            v.extend_from_slice(layer.weight.as_slice());
            v.extend_from_slice(&layer.bias);
        }
        v
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (little-endian f64).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let values = self.flat_values();
        let d = self.config.hidden_dim;
        let mut shapes = vec![[self.config.input_dim, d]];
        for _ in &self.layers {
            shapes.push([d, d]);
            shapes.push([d, 1]);
        }
        let manifest = WeightManifest {
            format: "f64-le".into(),
            config: serde_json::to_value(&self.config)?,
            shapes,
            num_values: values.len(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&json_path, e))?;
        let mut bytes = Vec::with_capacity(values.len() * 8);
        write_f64_le(&values, &mut bytes);
        let bin_path = dir.join(format!("{stem}.bin"));
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let (manifest, values) = read_manifest(dir, stem)?;
        let config: EncoderConfig = serde_json::from_value(manifest.config)?;
        config.validate()?;
        let (big_d, d) = (config.input_dim, config.hidden_dim);
        let expected = big_d * d + config.num_layers * (d * d + d);
        if values.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "encoder weights hold {} values, expected {}",
                values.len(),
                expected
            )));
        }
        let mut rest = values.as_slice();
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let input = Matrix::from_vec(big_d, d, take(big_d * d));
        let layers = (0..config.num_layers)
            .map(|_| Layer {
                weight: Matrix::from_vec(d, d, take(d * d)),
                bias: take(d),
            })
            .collect();
        Ok(EncoderState {
            config,
            input,
            layers,
            generation: 0,
        })
    }
}

/// JSON manifest accompanying a sidecar of little-endian f64 values.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WeightManifest {
    pub format: String,
    pub config: serde_json::Value,
    pub shapes: Vec<[usize; 2]>,
    pub num_values: usize,
}

pub(crate) fn read_manifest(dir: &Path, stem: &str) -> Result<(WeightManifest, Vec<f64>)> {
    let json_path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: WeightManifest = serde_json::from_str(&text)?;
    if manifest.format != "f64-le" {
        return Err(Error::InvalidConfig(format!(
            "unsupported weight format {:?}",
            manifest.format
        )));
    }
    let bin_path = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let values = read_f64_le(&bytes)
        .filter(|v| v.len() == manifest.num_values)
        .ok_or_else(|| Error::InvalidConfig(format!("{} is truncated", bin_path.display())))?;
    Ok((manifest, values))
}
