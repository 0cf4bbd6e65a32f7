use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// One parameter tensor handed to [`AdamW::step`].
pub struct ParamGroup<'a> {
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
    pub lr: f64,
    pub decay: bool,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every tensor; tensors must be passed in the same order each call.
    pub fn step(&mut self, params: Vec<ParamGroup<'_>>) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(params.len(), self.first.len(), "parameter layout changed");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, group) in params.into_iter().enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let shrink = if group.decay {
                1.0 - group.lr * self.weight_decay
            } else {
                1.0
            };
            for i in 0..group.values.len() {
                let g = group.grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                group.values[i] = group.values[i] * shrink - group.lr * update;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupShape {
    #[default]
    Linear,
    Cosine,
}

/// Warmup, constant hold, then cosine annealing to 1% of the peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub warmup_steps: usize,
    pub hold_steps: usize,
    pub anneal_steps: usize,
    pub shape: WarmupShape,
}

pub const ANNEAL_FLOOR: f64 = 0.01;

impl LrSchedule {
    /// Multiplier of the peak learning rate at 0-based optimizer step `step`.
    pub fn factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            let progress = (step + 1) as f64 / self.warmup_steps as f64;
            return match self.shape {
                WarmupShape::Linear => progress,
                WarmupShape::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * progress).cos()),
            };
        }
        let step = step - self.warmup_steps;
        if step < self.hold_steps {
            return 1.0;
        }
        let step = step - self.hold_steps;
        if self.anneal_steps == 0 {
            return 1.0;
        }
        let progress = ((step + 1) as f64 / self.anneal_steps as f64).min(1.0);
        ANNEAL_FLOOR
            + (1.0 - ANNEAL_FLOOR) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
