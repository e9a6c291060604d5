use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{backprop, init_head, Architecture, EmbeddingHead, LabeledHead};
use crate::dataset::{Dataset, Pair, PairSampler, Split};
use crate::loss::{LossConfig, LossReport};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Cross-entropy plus the similar and dissimilar pair terms.
    Mfid,
    CrossEntropy,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Mfid => "mfid",
            Objective::CrossEntropy => "cross_entropy",
        })
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mfid" => Ok(Objective::Mfid),
            "cross_entropy" | "ce" => Ok(Objective::CrossEntropy),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

/// Epoch/decay presets: 50 epochs decaying every 20, 60 every 20, and 30
/// every 10 for small datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPreset {
    Standard,
    Combined,
    Small,
}

impl FromStr for TrainPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(TrainPreset::Standard),
            "combined" => Ok(TrainPreset::Combined),
            "small" => Ok(TrainPreset::Small),
            other => Err(format!("unknown preset `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub architecture: Architecture,
    /// Hidden width of `Mlp1`; ignored by `Linear`.
    pub embed_dim: usize,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_pairs: usize,
    pub similar_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub objective: Objective,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp1,
            embed_dim: 32,
            initial_lr: 1e-3,
            decay_factor: 0.1,
            decay_every: 20,
            epochs: 50,
            batch_pairs: 16,
            similar_fraction: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
            objective: Objective::Mfid,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_preset(mut self, preset: TrainPreset) -> Self {
        (self.epochs, self.decay_every) = match preset {
            TrainPreset::Standard => (50, 20),
            TrainPreset::Combined => (60, 20),
            TrainPreset::Small => (30, 10),
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid(format!("decay factor {} outside (0, 1]", self.decay_factor)));
        }
        if self.epochs == 0 || self.batch_pairs == 0 || self.decay_every == 0 {
            return Err(Error::invalid("epochs, batch pairs and decay interval must be >= 1"));
        }
        if !(self.initial_lr >= 0.0) || !self.initial_lr.is_finite() {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.initial_lr)));
        }
        if !(0.0..=1.0).contains(&self.similar_fraction) {
            return Err(Error::invalid("similar fraction outside [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("momentum must be in [0, 1) and weight decay >= 0"));
        }
        self.loss.validate()
    }
}

/// Step decay: `initial_lr * decay_factor^floor(epoch / decay_every)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.initial_lr * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// Plain SGD update `theta -= lr * grad`.
pub fn sgd_step(head: &mut EmbeddingHead, grads: &[f64], lr: f64) -> Result<()> {
    check_grads(head, grads)?;
    for (p, g) in head.params_mut().iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

fn check_grads(head: &EmbeddingHead, grads: &[f64]) -> Result<()> {
    if grads.len() != head.param_count() {
        return Err(Error::DimensionMismatch {
            context: "gradient vs parameters".into(),
            expected: head.param_count(),
            actual: grads.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum and L2 weight decay on weights
/// (biases are not decayed). With both at zero this is [`sgd_step`].
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, head: &mut EmbeddingHead, grads: &[f64], lr: f64) -> Result<()> {
        if self.momentum == 0.0 && self.weight_decay == 0.0 {
            return sgd_step(head, grads, lr);
        }
        check_grads(head, grads)?;
        if self.velocity.len() != grads.len() {
            self.velocity = vec![0.0; grads.len()];
        }
        for i in 0..grads.len() {
            let mut g = grads[i];
            if self.weight_decay > 0.0 && head.is_weight(i) {
                g += self.weight_decay * head.params()[i];
            }
            self.velocity[i] = self.momentum * self.velocity[i] + g;
            head.params_mut()[i] -= lr * self.velocity[i];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: LabeledHead,
    pub config: TrainConfig,
    /// One averaged report per epoch.
    pub loss_history: Vec<LossReport>,
}

/// Mini-batch training on the train side of `split`.
///
/// Each epoch runs `ceil(n_train / (2 * batch_pairs))` steps of
/// `2 * batch_pairs` images. The MFID objective draws a fresh pair batch per
/// step; the cross-entropy objective walks a reshuffled permutation of the
/// training rows and has no pair terms.
pub fn train(ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("split has no training samples"));
    }
    let samples = ds.gather(&split.train)?;
    let class_labels: Vec<usize> = samples.indices_by_label().into_keys().collect();
    if class_labels.len() < 2 {
        return Err(Error::invalid("training needs at least 2 identities"));
    }
    let mut class_of = vec![usize::MAX; ds.num_identities()];
    for (c, &id) in class_labels.iter().enumerate() {
        class_of[id] = c;
    }
    let local: Vec<usize> = samples.labels().iter().map(|&l| class_of[l]).collect();

    let mut head = init_head(cfg.architecture, ds.dim(), cfg.embed_dim, class_labels.len(), cfg.seed)?;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut rng = rng::stream(cfg.seed, 1);
    let sampler = PairSampler::new(&local)?;
    let batch_images = 2 * cfg.batch_pairs;
    let steps = samples.len().div_ceil(batch_images);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut inputs: Vec<&[f64]> = Vec::with_capacity(batch_images);
    let mut labels = Vec::with_capacity(batch_images);
    let mut pairs: Vec<Pair> = Vec::with_capacity(cfg.batch_pairs);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut reports = Vec::with_capacity(steps);
        for _ in 0..steps {
            inputs.clear();
            labels.clear();
            pairs.clear();
            match cfg.objective {
                Objective::Mfid => {
                    let batch = sampler.sample(cfg.batch_pairs, cfg.similar_fraction, &mut rng)?;
                    for (k, p) in batch.pairs.iter().enumerate() {
                        for idx in [p.a, p.b] {
                            inputs.push(samples.row(idx));
                            labels.push(local[idx]);
                        }
                        pairs.push(Pair {
                            a: 2 * k,
                            b: 2 * k + 1,
                            similar: p.similar,
                        });
                    }
                }
                Objective::CrossEntropy => {
                    for _ in 0..batch_images {
                        if cursor == order.len() {
                            order.shuffle(&mut rng);
                            cursor = 0;
                        }
                        let idx = order[cursor];
                        cursor += 1;
                        inputs.push(samples.row(idx));
                        labels.push(local[idx]);
                    }
                }
            }
            let (report, grads) = backprop(&head, &inputs, &labels, &pairs, &cfg.loss).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { epoch },
                e => e,
            })?;
            if !report.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            opt.step(&mut head, &grads, lr)?;
            if head.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            reports.push(report);
        }
        history.push(LossReport::average(&reports, &cfg.loss));
    }
    Ok(TrainedModel {
        model: LabeledHead::new(head, class_labels)?,
        config: cfg.clone(),
        loss_history: history,
    })
}
