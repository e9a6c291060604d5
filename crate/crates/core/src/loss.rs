//! The pairwise KL-divergence objective.
//!
//! For a batch of samples with softmax outputs `p`, the objective is
//!
//! ```text
//! L = mean_i CE(p_i, y_i)
//!   + w_s * mean_{(j,k) similar}    [KL(p_j||p_k) + KL(p_k||p_j)]
//!   + w_d * mean_{(j,k) dissimilar} [max(0, m - KL(p_j||p_k)) + max(0, m - KL(p_k||p_j))]
//! ```
//!
//! Logarithms are natural. Probabilities are clamped to `epsilon` inside
//! logarithms and terms with `p_i = 0` contribute exactly zero.

use crate::dataset::Pair;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates entries in `[0, 1]` summing to 1 within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probability outside [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Margin, log clamp and the weights of the two pair terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub epsilon: f64,
    pub similar_weight: f64,
    pub dissimilar_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            epsilon: DEFAULT_EPSILON,
            similar_weight: 1.0,
            dissimilar_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::invalid(format!("margin {} must be >= 0", self.margin)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(Error::invalid(format!("epsilon {} outside (0, 1e-6]", self.epsilon)));
        }
        if !(self.similar_weight >= 0.0 && self.dissimilar_weight >= 0.0) {
            return Err(Error::invalid("pair term weights must be >= 0"));
        }
        Ok(())
    }
}

/// Value of the objective over one batch (or an average over batches).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub ce_term: f64,
    pub sim_term: f64,
    pub dissim_term: f64,
    pub similar_pairs: usize,
    pub dissimilar_pairs: usize,
}

impl LossReport {
    fn from_terms(ce: f64, sim: f64, dissim: f64, counts: (usize, usize), cfg: &LossConfig) -> Self {
        Self {
            total: ce + cfg.similar_weight * sim + cfg.dissimilar_weight * dissim,
            ce_term: ce,
            sim_term: sim,
            dissim_term: dissim,
            similar_pairs: counts.0,
            dissimilar_pairs: counts.1,
        }
    }

    /// Mean of several batch reports. Pair counts are summed.
    pub fn average(reports: &[LossReport], cfg: &LossConfig) -> LossReport {
        if reports.is_empty() {
            return LossReport::default();
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport::from_terms(
            mean(|r| r.ce_term),
            mean(|r| r.sim_term),
            mean(|r| r.dissim_term),
            (
                reports.iter().map(|r| r.similar_pairs).sum(),
                reports.iter().map(|r| r.dissimilar_pairs).sum(),
            ),
            cfg,
        )
    }
}

/// Max-shifted softmax. Needs at least two finite logits.
pub fn softmax(logits: &[f64]) -> Result<ProbabilityVector> {
    if logits.len() < 2 {
        return Err(Error::invalid("softmax needs at least 2 logits"));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbabilityVector(exps.into_iter().map(|e| e / sum).collect()))
}

pub fn cross_entropy(p: &ProbabilityVector, label: usize, eps: f64) -> Result<f64> {
    let pl = *p.0.get(label).ok_or(Error::IndexOutOfRange {
        index: label,
        len: p.len(),
    })?;
    Ok(-pl.max(eps).ln())
}

fn check_same_len(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "probability vectors".into(),
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(())
}

/// `KL(p || q)`.
pub fn kl_div(p: &ProbabilityVector, q: &ProbabilityVector, eps: f64) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(kl_raw(&p.0, &q.0, eps))
}

fn kl_raw(p: &[f64], q: &[f64], eps: f64) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.max(eps).ln() - qi.max(eps).ln()))
        .sum()
}

/// Symmetric KL, the loss of a similar pair.
pub fn sim_pair_loss(p: &ProbabilityVector, q: &ProbabilityVector, eps: f64) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(kl_raw(&p.0, &q.0, eps) + kl_raw(&q.0, &p.0, eps))
}

/// Hinge on each directed KL, the loss of a dissimilar pair.
pub fn dissim_pair_loss(p: &ProbabilityVector, q: &ProbabilityVector, margin: f64, eps: f64) -> Result<f64> {
    check_same_len(p, q)?;
    Ok((margin - kl_raw(&p.0, &q.0, eps)).max(0.0) + (margin - kl_raw(&q.0, &p.0, eps)).max(0.0))
}

/// Objective value for a batch. `pairs` index into `logits`.
pub fn total_loss(logits: &[Vec<f64>], labels: &[usize], pairs: &[Pair], cfg: &LossConfig) -> Result<LossReport> {
    Ok(loss_and_gradient(logits, labels, pairs, cfg, false)?.0)
}

/// Gradient of [`total_loss`] with respect to every logit.
pub fn loss_gradient(logits: &[Vec<f64>], labels: &[usize], pairs: &[Pair], cfg: &LossConfig) -> Result<Vec<Vec<f64>>> {
    Ok(loss_and_gradient(logits, labels, pairs, cfg, true)?.1)
}

/// Value and logit gradient in one pass. When `with_gradient` is false the
/// returned gradient is empty.
pub fn loss_and_gradient(
    logits: &[Vec<f64>],
    labels: &[usize],
    pairs: &[Pair],
    cfg: &LossConfig,
    with_gradient: bool,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let n = logits.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "batch labels".into(),
            expected: n,
            actual: labels.len(),
        });
    }
    let k = logits[0].len();
    let probs = logits
        .iter()
        .map(|z| {
            if z.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "logit vector".into(),
                    expected: k,
                    actual: z.len(),
                });
            }
            softmax(z)
        })
        .collect::<Result<Vec<_>>>()?;
    for p in pairs {
        if p.a == p.b {
            return Err(Error::invalid(format!("self-pair ({}, {})", p.a, p.b)));
        }
        for idx in [p.a, p.b] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if p.similar != (labels[p.a] == labels[p.b]) {
            return Err(Error::invalid(format!(
                "pair ({}, {}) flagged similar={} disagrees with labels",
                p.a, p.b, p.similar
            )));
        }
    }

    let eps = cfg.epsilon;
    let n_sim = pairs.iter().filter(|p| p.similar).count();
    let n_dis = pairs.len() - n_sim;

    let mut ce = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        ce += cross_entropy(p, y, eps)?;
    }
    ce /= n as f64;

    // Gradient with respect to probabilities, chained through softmax at the end.
    let mut grad_p = if with_gradient { vec![vec![0.0; k]; n] } else { Vec::new() };
    let mut sim = 0.0;
    let mut dis = 0.0;
    let sim_scale = if n_sim > 0 { cfg.similar_weight / n_sim as f64 } else { 0.0 };
    let dis_scale = if n_dis > 0 { cfg.dissimilar_weight / n_dis as f64 } else { 0.0 };
    for pair in pairs {
        let (p, q) = (&probs[pair.a].0, &probs[pair.b].0);
        let kl_pq = kl_raw(p, q, eps);
        let kl_qp = kl_raw(q, p, eps);
        // Coefficients on d KL(p||q) and d KL(q||p).
        let (c_pq, c_qp) = if pair.similar {
            sim += kl_pq + kl_qp;
            (sim_scale, sim_scale)
        } else {
            let h_pq = margin_active(cfg.margin, kl_pq);
            let h_qp = margin_active(cfg.margin, kl_qp);
            dis += (cfg.margin - kl_pq).max(0.0) + (cfg.margin - kl_qp).max(0.0);
            (if h_pq { -dis_scale } else { 0.0 }, if h_qp { -dis_scale } else { 0.0 })
        };
        if with_gradient && (c_pq != 0.0 || c_qp != 0.0) {
            let (ga, gb) = pair_rows_mut(&mut grad_p, pair.a, pair.b);
            accumulate_kl_grad(p, q, c_pq, eps, ga, gb);
            accumulate_kl_grad(q, p, c_qp, eps, gb, ga);
        }
    }
    let sim_term = if n_sim > 0 { sim / n_sim as f64 } else { 0.0 };
    let dis_term = if n_dis > 0 { dis / n_dis as f64 } else { 0.0 };
    let report = LossReport::from_terms(ce, sim_term, dis_term, (n_sim, n_dis), cfg);

    if !with_gradient {
        return Ok((report, Vec::new()));
    }
    let inv_n = 1.0 / n as f64;
    let grad_z = probs
        .iter()
        .zip(&grad_p)
        .zip(labels)
        .map(|((p, gp), &y)| {
            let p = &p.0;
            let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
            let mut gz: Vec<f64> = p.iter().zip(gp).map(|(pi, gi)| pi * (gi - dot)).collect();
            // The clamped cross-entropy is flat once p_y <= eps.
            if p[y] > eps {
                for (i, g) in gz.iter_mut().enumerate() {
                    *g += inv_n * (p[i] - if i == y { 1.0 } else { 0.0 });
                }
            }
            gz
        })
        .collect();
    Ok((report, grad_z))
}

// Hinge subgradient is zero at the kink.
fn margin_active(margin: f64, kl: f64) -> bool {
    margin - kl > 0.0
}

/// Adds `coef * d KL(p||q)` to the probability gradients of both sides.
fn accumulate_kl_grad(p: &[f64], q: &[f64], coef: f64, eps: f64, gp: &mut [f64], gq: &mut [f64]) {
    if coef == 0.0 {
        return;
    }
    for i in 0..p.len() {
        let (pi, qi) = (p[i], q[i]);
        let log_ratio = pi.max(eps).ln() - qi.max(eps).ln();
        gp[i] += coef * (log_ratio + if pi > eps { 1.0 } else { 0.0 });
        if qi > eps && pi > 0.0 {
            gq[i] -= coef * pi / qi;
        }
    }
}

fn pair_rows_mut(rows: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    if a < b {
        let (lo, hi) = rows.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = rows.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}
