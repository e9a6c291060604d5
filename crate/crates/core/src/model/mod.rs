//! Trainable embedding head on top of precomputed features.
//!
//! Two architectures are provided. `Linear` maps features straight to class
//! logits and uses the raw input as its embedding. `Mlp1` has one rectified
//! hidden layer whose activation is the embedding.
//!
//! Parameters live in one flat vector:
//!
//! - linear: `W (K x d)`, `b (K)`
//! - mlp1: `W1 (e x d)`, `b1 (e)`, `W2 (K x e)`, `b2 (K)`
//!
//! with matrices row-major. Checkpoints store them in the same order.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{lr_schedule, sgd_step, train, Objective, Sgd, TrainConfig, TrainPreset, TrainedModel};

use crate::dataset::{Pair, Samples};
use crate::loss::{loss_and_gradient, LossConfig, LossReport};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Mlp1,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Linear => "linear",
            Architecture::Mlp1 => "mlp1",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Architecture::Linear),
            "mlp1" => Ok(Architecture::Mlp1),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHead {
    arch: Architecture,
    input_dim: usize,
    embed_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

/// Embedding and logits of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Fan-in scaled Gaussian weights (He scaling for the rectified layer),
/// zero biases. For `Linear` the embedding dimension is the input dimension
/// and `embed_dim` is ignored.
pub fn init_head(arch: Architecture, input_dim: usize, embed_dim: usize, num_classes: usize, seed: u64) -> Result<EmbeddingHead> {
    if input_dim == 0 || num_classes == 0 || (arch == Architecture::Mlp1 && embed_dim == 0) {
        return Err(Error::invalid("head dimensions must be >= 1"));
    }
    let embed_dim = match arch {
        Architecture::Linear => input_dim,
        Architecture::Mlp1 => embed_dim,
    };
    let mut head = EmbeddingHead::zeros(arch, input_dim, embed_dim, num_classes);
    let mut rng = rng::seeded(seed);
    let mut fill = |range: std::ops::Range<usize>, std: f64, params: &mut [f64]| {
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in &mut params[range] {
            *v = dist.sample(&mut rng);
        }
    };
    let l = head.layout();
    match arch {
        Architecture::Linear => fill(l.w2.clone(), (1.0 / input_dim as f64).sqrt(), &mut head.params),
        Architecture::Mlp1 => {
            fill(l.w1.clone(), (2.0 / input_dim as f64).sqrt(), &mut head.params);
            fill(l.w2.clone(), (1.0 / embed_dim as f64).sqrt(), &mut head.params);
        }
    }
    Ok(head)
}

/// Offsets of each parameter block. For `Linear`, `w1`/`b1` are empty.
#[derive(Debug, Clone)]
struct Layout {
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
}

impl EmbeddingHead {
    fn zeros(arch: Architecture, input_dim: usize, embed_dim: usize, num_classes: usize) -> Self {
        let mut head = Self {
            arch,
            input_dim,
            embed_dim,
            num_classes,
            params: Vec::new(),
        };
        head.params = vec![0.0; head.layout().b2.end];
        head
    }

    /// Rebuilds a head from a flat parameter vector in the documented order.
    pub fn from_params(arch: Architecture, input_dim: usize, embed_dim: usize, num_classes: usize, params: Vec<f64>) -> Result<Self> {
        if arch == Architecture::Linear && embed_dim != input_dim {
            return Err(Error::invalid("linear head embedding dimension must equal input dimension"));
        }
        let mut head = Self::zeros(arch, input_dim, embed_dim, num_classes);
        if params.len() != head.params.len() {
            return Err(Error::DimensionMismatch {
                context: "head parameters".into(),
                expected: head.params.len(),
                actual: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head parameter".into()));
        }
        head.params = params;
        Ok(head)
    }

    fn layout(&self) -> Layout {
        let (d, e, k) = (self.input_dim, self.embed_dim, self.num_classes);
        match self.arch {
            Architecture::Linear => Layout {
                w1: 0..0,
                b1: 0..0,
                w2: 0..k * d,
                b2: k * d..k * d + k,
            },
            Architecture::Mlp1 => {
                let w1 = 0..e * d;
                let b1 = w1.end..w1.end + e;
                let w2 = b1.end..b1.end + k * e;
                let b2 = w2.end..w2.end + k;
                Layout { w1, b1, w2, b2 }
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Whether parameter `i` is a weight (as opposed to a bias).
    pub(crate) fn is_weight(&self, i: usize) -> bool {
        let l = self.layout();
        l.w1.contains(&i) || l.w2.contains(&i)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "head input".into(),
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let (_, fwd) = self.forward_unchecked(x);
        Ok(fwd)
    }

    /// Returns the hidden pre-activations (empty for `Linear`) alongside the
    /// outputs, for backprop.
    fn forward_unchecked(&self, x: &[f64]) -> (Vec<f64>, Forward) {
        let l = self.layout();
        match self.arch {
            Architecture::Linear => {
                let logits = affine(&self.params[l.w2], &self.params[l.b2], x);
                (Vec::new(), Forward { embedding: x.to_vec(), logits })
            }
            Architecture::Mlp1 => {
                let pre = affine(&self.params[l.w1], &self.params[l.b1], x);
                let embedding: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
                let logits = affine(&self.params[l.w2], &self.params[l.b2], &embedding);
                (pre, Forward { embedding, logits })
            }
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.embedding)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits)
    }
}

/// `W x + b` with `W` row-major `b.len() x x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Objective value and its gradient with respect to every head parameter
/// over one batch. `labels` are head class indices; `pairs` index `inputs`.
pub fn backprop(
    head: &EmbeddingHead,
    inputs: &[&[f64]],
    labels: &[usize],
    pairs: &[Pair],
    cfg: &LossConfig,
) -> Result<(LossReport, Vec<f64>)> {
    for x in inputs {
        head.check_input(x)?;
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= head.num_classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: head.num_classes,
        });
    }
    let passes: Vec<(Vec<f64>, Forward)> = inputs.iter().map(|x| head.forward_unchecked(x)).collect();
    let logits: Vec<Vec<f64>> = passes.iter().map(|(_, f)| f.logits.clone()).collect();
    let (report, grad_z) = loss_and_gradient(&logits, labels, pairs, cfg, true)?;

    let l = head.layout();
    let mut grads = vec![0.0; head.param_count()];
    let e = head.embed_dim;
    for ((x, (pre, fwd)), dz) in inputs.iter().zip(&passes).zip(&grad_z) {
        // output layer
        let h: &[f64] = &fwd.embedding;
        for (c, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = l.w2.start + c * h.len();
            for (j, &hj) in h.iter().enumerate() {
                grads[row + j] += g * hj;
            }
            grads[l.b2.start + c] += g;
        }
        if head.arch == Architecture::Linear {
            continue;
        }
        // hidden layer
        let w2 = &head.params[l.w2.clone()];
        for j in 0..e {
            if pre[j] <= 0.0 {
                continue;
            }
            let dh: f64 = dz.iter().enumerate().map(|(c, g)| g * w2[c * e + j]).sum();
            if dh == 0.0 {
                continue;
            }
            let row = l.w1.start + j * head.input_dim;
            for (i, &xi) in x.iter().enumerate() {
                grads[row + i] += dh * xi;
            }
            grads[l.b1.start + j] += dh;
        }
    }
    Ok((report, grads))
}

/// A head together with the dataset identity id of each of its classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledHead {
    pub head: EmbeddingHead,
    /// `class_labels[c]` is the identity id predicted by class `c`; ascending.
    pub class_labels: Vec<usize>,
}

impl LabeledHead {
    pub fn new(head: EmbeddingHead, class_labels: Vec<usize>) -> Result<Self> {
        if class_labels.len() != head.num_classes() {
            return Err(Error::DimensionMismatch {
                context: "class label map".into(),
                expected: head.num_classes(),
                actual: class_labels.len(),
            });
        }
        if class_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("class labels must be strictly ascending"));
        }
        Ok(Self { head, class_labels })
    }

    pub fn input_dim(&self) -> usize {
        self.head.input_dim()
    }

    /// Identity id of the largest logit; ties go to the lowest id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = self.head.logits(x)?;
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        Ok(self.class_labels[best])
    }

    /// Embeddings of every row, keeping the row labels.
    pub fn embed_samples(&self, samples: &Samples) -> Result<Samples> {
        if samples.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "features vs model input".into(),
                expected: self.input_dim(),
                actual: samples.dim(),
            });
        }
        let rows = samples.rows().map(|x| self.head.embed(x)).collect::<Result<Vec<_>>>()?;
        Samples::from_rows(&rows, samples.labels().to_vec())
    }
}
