use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::ops::{
    evict_negatives, next_train_shortlist, ranked_positions, rescale_alphas, score_shortlist,
    topk_select, LevelClassifier,
};
use crate::cascade::loss::level_loss;
use crate::cascade::optim::{AdamW, ParamGroup};
use crate::data::SparseVector;
use crate::encoder::{EncoderConfig, EncoderGrads, EncoderState, Mode};
use crate::error::{Error, Result};
use crate::hlt::{LabelTree, Shortlist};
use crate::linalg::{axpy, glorot_bound, Matrix};
use crate::seed::derive_seed;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Top-k kept at each shortlisting level `1..=T`.
    pub beam_widths: Vec<usize>,
    /// Optional caps on teacher-forced shortlists at levels `2..=T+1`.
    #[serde(default)]
    pub train_shortlist_caps: Option<Vec<usize>>,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

/// Encoder, label tree and one linear scorer per resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub config: ModelConfig,
    pub encoder: EncoderState,
    pub tree: LabelTree,
    pub classifiers: Vec<LevelClassifier>,
    alphas: Vec<f64>,
}

/// Gradient buffers laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: EncoderGrads,
    pub classifiers: Vec<LevelClassifier>,
}

impl Gradients {
    pub fn zeros(model: &CascadeModel) -> Self {
        Gradients {
            encoder: EncoderGrads::zeros(&model.encoder.config),
            classifiers: model
                .classifiers
                .iter()
                .map(|c| LevelClassifier {
                    weight: Matrix::zeros(c.weight.rows(), c.weight.cols()),
                    bias: vec![0.0; c.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.encoder.add_assign(&other.encoder);
        for (a, b) in self.classifiers.iter_mut().zip(&other.classifiers) {
            a.weight.add_assign(&b.weight);
            crate::linalg::add_assign(&mut a.bias, &b.bias);
        }
    }

    /// Flat view in the same order as [`CascadeModel::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.encoder.input.as_slice()];
        for l in &self.encoder.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        for c in &self.classifiers {
            out.push(c.weight.as_slice());
            out.push(&c.bias);
        }
        out
    }
}

/// Result of one teacher-forced pass over a single instance.
#[derive(Debug, Clone)]
pub struct InstancePass {
    /// `Σ_t α_t L^(t)`
    pub loss: f64,
    /// Unweighted mean BCE per resolution.
    pub level_losses: Vec<f64>,
    /// Training shortlists `S^(1)..S^(T+1)`.
    pub shortlists: Vec<Shortlist>,
}

/// Inference output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Top labels by descending logit, ties by smaller id.
    pub labels: Vec<(u32, f64)>,
    /// Inference shortlists `S^(1)..S^(T+1)`.
    pub shortlists: Vec<Shortlist>,
    /// Number of classifier dot products computed.
    pub scored: usize,
}

impl CascadeModel {
    pub fn new(config: ModelConfig, tree: LabelTree) -> Result<Self> {
        let encoder = EncoderState::init(config.encoder.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.encoder.seed, &[0xC1A5]));
        let classifiers = (0..tree.num_levels() + 1)
            .map(|t| {
                let (k, d) = (tree.level_size(t + 1), config.encoder.tap_dim(t));
                LevelClassifier {
                    weight: Matrix::uniform(k, d, glorot_bound(d, k), &mut rng),
                    bias: vec![0.0; k],
                }
            })
            .collect();
        Self::from_parts(config, encoder, tree, classifiers)
    }

    pub fn from_parts(
        config: ModelConfig,
        encoder: EncoderState,
        tree: LabelTree,
        classifiers: Vec<LevelClassifier>,
    ) -> Result<Self> {
        let levels = tree.num_levels();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if config.encoder.num_taps() != levels + 1 {
            return bad(format!(
                "{} encoder taps for a tree with {} resolutions",
                config.encoder.num_taps(),
                levels + 1
            ));
        }
        if config.beam_widths.len() != levels {
            return bad(format!(
                "{} beam widths for {} shortlisting levels",
                config.beam_widths.len(),
                levels
            ));
        }
        if config.beam_widths.iter().any(|&k| k == 0) {
            return bad("beam widths must be >= 1".into());
        }
        if let Some(caps) = &config.train_shortlist_caps {
            if caps.len() != levels {
                return bad(format!("{} shortlist caps for {} levels", caps.len(), levels));
            }
        }
        if classifiers.len() != levels + 1 {
            return bad("one classifier per resolution is required".into());
        }
        for (t, c) in classifiers.iter().enumerate() {
            if c.num_outputs() != tree.level_size(t + 1)
                || c.input_dim() != config.encoder.tap_dim(t)
                || c.bias.len() != c.num_outputs()
            {
                return bad(format!("classifier shape mismatch at level {}", t + 1));
            }
        }
        if encoder.config != config.encoder {
            return bad("encoder state does not match its config".into());
        }
        let alphas = rescale_alphas(&nominal_shortlist_sizes(&tree, &config.beam_widths));
        Ok(CascadeModel {
            config,
            encoder,
            tree,
            classifiers,
            alphas,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.tree.num_levels()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Teacher-forced loss of one instance; accumulates `scale · ∇loss` into `grads`.
    pub fn instance_pass(
        &self,
        x: &SparseVector,
        labels: &[u32],
        dropout: Option<&mut ChaCha8Rng>,
        grads: Option<(&mut Gradients, f64)>,
    ) -> Result<InstancePass> {
        let mode = match dropout {
            Some(rng) => Mode::Train(rng),
            None => Mode::Inference,
        };
        let (taps, cache) = self.encoder.forward(x, mode)?;
        let levels = self.num_levels();
        let mut tap_grads: Vec<Vec<f64>> = taps.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut level_losses = Vec::with_capacity(levels + 1);
        let mut shortlists = Vec::with_capacity(levels + 1);
        let mut loss = 0.0;
        let mut grads = grads;

        let mut s = self.tree.full(1);
        let mut scores = score_shortlist(&self.classifiers[0], &taps[0], &s)?;
        for t in 1..=levels + 1 {
            let cover = self.tree.level_cover(labels, t)?;
            assert!(
                cover.ids.iter().all(|&c| s.contains(c)),
                "teacher forcing lost a positive at level {}",
                t
            );
            let targets: Vec<f64> = s.ids.iter().map(|&k| cover.contains(k) as u8 as f64).collect();
            let (lt, g) = level_loss(&scores, &targets)?;
            let alpha = self.alphas[t - 1];
            loss += alpha * lt;
            level_losses.push(lt);

            if let Some((buf, scale)) = grads.as_mut() {
                let phi = &taps[t - 1];
                let w = &self.classifiers[t - 1];
                let gw = &mut buf.classifiers[t - 1];
                for (&k, &gk) in s.ids.iter().zip(&g) {
                    let coef = *scale * alpha * gk;
                    axpy(coef, phi, gw.weight.row_mut(k as usize));
                    if self.config.use_bias {
                        gw.bias[k as usize] += coef;
                    }
                    axpy(coef, w.weight.row(k as usize), &mut tap_grads[t - 1]);
                }
            }

            if t <= levels {
                let top = topk_select(&s, &scores, self.config.beam_widths[t - 1]);
                let next = next_train_shortlist(&self.tree, &top, labels)?;
                let next_scores = score_shortlist(&self.classifiers[t], &taps[t], &next)?;
                shortlists.push(s);
                (s, scores) = match &self.config.train_shortlist_caps {
                    Some(caps) => {
                        let positives = self.tree.level_cover(labels, t + 1)?;
                        evict_negatives(&next, &next_scores, &positives, caps[t - 1])
                    }
                    None => (next, next_scores),
                };
            }
        }
        shortlists.push(s);

        if let Some((buf, _)) = grads {
            self.encoder.backward_into(&cache, &tap_grads, &mut buf.encoder)?;
        }
        Ok(InstancePass {
            loss,
            level_losses,
            shortlists,
        })
    }

    /// Final-layer embedding without dropout.
    pub fn embed(&self, x: &SparseVector) -> Result<Vec<f64>> {
        let (mut taps, _) = self.encoder.forward(x, Mode::Inference)?;
        Ok(taps.pop().unwrap())
    }

    /// Beam search through the cascade without teacher forcing.
    pub fn predict(&self, x: &SparseVector, beam_widths: &[usize], final_k: usize) -> Result<Prediction> {
        let levels = self.num_levels();
        if beam_widths.len() != levels {
            return Err(Error::InvalidConfig(format!(
                "{} beam widths for {} levels",
                beam_widths.len(),
                levels
            )));
        }
        let (taps, _) = self.encoder.forward(x, Mode::Inference)?;
        let mut s = self.tree.full(1);
        let mut shortlists = Vec::with_capacity(levels + 1);
        let mut scored = 0;
        for t in 1..=levels {
            let scores = score_shortlist(&self.classifiers[t - 1], &taps[t - 1], &s)?;
            scored += s.len();
            let top = topk_select(&s, &scores, beam_widths[t - 1].max(1));
            let next = self.tree.refine(&top)?;
            shortlists.push(std::mem::replace(&mut s, next));
        }
        let scores = score_shortlist(&self.classifiers[levels], &taps[levels], &s)?;
        scored += s.len();
        let labels = ranked_positions(&s.ids, &scores)
            .into_iter()
            .take(final_k)
            .map(|p| (s.ids[p], scores[p]))
            .collect();
        shortlists.push(s);
        Ok(Prediction {
            labels,
            shortlists,
            scored,
        })
    }

    /// Flat parameter order: encoder tensors, then each level's weight and bias.
    /// Each entry carries `(values, is_encoder, decays)`.
    pub(crate) fn param_slices_mut(&mut self) -> Vec<(&mut [f64], bool, bool)> {
        let mut out: Vec<(&mut [f64], bool, bool)> = self
            .encoder
            .param_slices_mut()
            .into_iter()
            .map(|(v, decay)| (v, true, decay))
            .collect();
        for c in &mut self.classifiers {
            out.push((c.weight.as_mut_slice(), false, true));
            out.push((c.bias.as_mut_slice(), false, false));
        }
        out
    }

    /// Mutable parameter tensors in the order of [`Gradients::slices`].
    /// Call `encoder.bump_generation()` after editing them.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.param_slices_mut().into_iter().map(|(v, _, _)| v).collect()
    }

    /// One AdamW update with separate encoder and classifier learning rates.
    pub fn apply_gradients(&mut self, opt: &mut AdamW, grads: &Gradients, lr_encoder: f64, lr_classifier: f64) {
        let use_bias = self.config.use_bias;
        let grad_slices = grads.slices();
        let n_encoder = 1 + 2 * self.encoder.layers.len();
        let groups = self
            .param_slices_mut()
            .into_iter()
            .zip(grad_slices)
            .enumerate()
            .map(|(i, ((values, is_encoder, decay), g))| {
                let is_cls_bias = i >= n_encoder && (i - n_encoder) % 2 == 1;
                let lr = if is_cls_bias && !use_bias {
                    0.0
                } else if is_encoder {
                    lr_encoder
                } else {
                    lr_classifier
                };
                ParamGroup {
                    values,
                    grads: g,
                    lr,
                    decay,
                }
            })
            .collect();
        opt.step(groups);
        self.encoder.bump_generation();
    }
}

/// Nominal `|S^(t)|`: all of level 1, then `k_t` clusters' worth of children.
pub fn nominal_shortlist_sizes(tree: &LabelTree, beam_widths: &[usize]) -> Vec<usize> {
    let sizes = tree.level_sizes();
    let mut out = vec![sizes[0]];
    for t in 0..beam_widths.len().min(sizes.len() - 1) {
        let kept = beam_widths[t].min(sizes[t]) as f64;
        let fanout = sizes[t + 1] as f64 / sizes[t] as f64;
        out.push(((kept * fanout).round() as usize).max(1));
    }
    out
}
