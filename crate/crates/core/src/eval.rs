//! Biometric evaluation protocols over embeddings: classification accuracy,
//! closed-set identification (CMC), open-set identification (DIR at a fixed
//! FAR) and verification (TAR at a fixed FAR, plus the ROC).
//!
//! Similarity is cosine. A probe's score for an identity is the maximum over
//! that identity's gallery images. Ranks break ties toward the lower identity
//! id, and thresholds accept scores `>= tau`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{Dataset, Samples};
use crate::model::LabeledHead;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Cosine similarity; errors when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine similarity".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = norm(a);
    if na == 0.0 {
        return Err(Error::ZeroNorm { index: 0 });
    }
    let nb = norm(b);
    if nb == 0.0 {
        return Err(Error::ZeroNorm { index: 1 });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Probes x gallery cosine scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Vec<f64>,
    probe_labels: Vec<usize>,
    gallery_labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(scores: Vec<f64>, probe_labels: Vec<usize>, gallery_labels: Vec<usize>) -> Result<Self> {
        let expected = probe_labels.len() * gallery_labels.len();
        if scores.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "score matrix".into(),
                expected,
                actual: scores.len(),
            });
        }
        if gallery_labels.is_empty() {
            return Err(Error::invalid("empty gallery"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("score matrix".into()));
        }
        Ok(Self {
            scores,
            probe_labels,
            gallery_labels,
        })
    }

    pub fn probes(&self) -> usize {
        self.probe_labels.len()
    }

    pub fn gallery(&self) -> usize {
        self.gallery_labels.len()
    }

    pub fn get(&self, p: usize, g: usize) -> f64 {
        self.scores[p * self.gallery() + g]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        let g = self.gallery();
        &self.scores[p * g..(p + 1) * g]
    }

    pub fn probe_labels(&self) -> &[usize] {
        &self.probe_labels
    }

    pub fn gallery_labels(&self) -> &[usize] {
        &self.gallery_labels
    }

    /// Distinct gallery identities, ascending.
    pub fn gallery_identities(&self) -> Vec<usize> {
        let mut ids = self.gallery_labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Per-identity max score of probe `p`, aligned with [`Self::gallery_identities`].
    pub fn identity_scores(&self, p: usize) -> Vec<f64> {
        let ids = self.gallery_identities();
        let mut best = vec![f64::NEG_INFINITY; ids.len()];
        for (g, &s) in self.row(p).iter().enumerate() {
            let k = ids.binary_search(&self.gallery_labels[g]).unwrap();
            best[k] = best[k].max(s);
        }
        best
    }

    /// Top identity of probe `p` and its score.
    pub fn top_match(&self, p: usize) -> (usize, f64) {
        let ids = self.gallery_identities();
        let scores = self.identity_scores(p);
        let mut k = 0;
        for j in 1..scores.len() {
            if scores[j] > scores[k] {
                k = j;
            }
        }
        (ids[k], scores[k])
    }

    /// 1-based rank of each probe's true identity among gallery identities.
    pub fn ranks(&self) -> Result<Vec<usize>> {
        let ids = self.gallery_identities();
        (0..self.probes())
            .map(|p| {
                let truth = self.probe_labels[p];
                let t = ids.binary_search(&truth).map_err(|_| {
                    Error::invalid(format!("probe {p} identity {truth} is not in the gallery"))
                })?;
                let scores = self.identity_scores(p);
                let st = scores[t];
                let above = scores
                    .iter()
                    .enumerate()
                    .filter(|&(j, &s)| s > st || (s == st && j < t))
                    .count();
                Ok(1 + above)
            })
            .collect()
    }
}

/// All-pairs cosine scores between probe and gallery rows.
pub fn score_matrix(probes: &Samples, gallery: &Samples) -> Result<ScoreMatrix> {
    if probes.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            context: "probe vs gallery embeddings".into(),
            expected: gallery.dim(),
            actual: probes.dim(),
        });
    }
    let unit = |s: &Samples| -> Result<Vec<Vec<f64>>> {
        s.rows()
            .enumerate()
            .map(|(i, r)| {
                let n = norm(r);
                if n == 0.0 {
                    return Err(Error::ZeroNorm { index: i });
                }
                Ok(r.iter().map(|v| v / n).collect())
            })
            .collect()
    };
    let p = unit(probes)?;
    let g = unit(gallery)?;
    let scores = p
        .iter()
        .flat_map(|a| g.iter().map(move |b| dot(a, b).clamp(-1.0, 1.0)))
        .collect();
    ScoreMatrix::new(scores, probes.labels().to_vec(), gallery.labels().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistractorMode {
    /// One set of distractor identities per split, reused by every trial.
    #[default]
    Fixed,
    PerTrial,
}

impl FromStr for DistractorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(DistractorMode::Fixed),
            "per-trial" | "per_trial" => Ok(DistractorMode::PerTrial),
            other => Err(format!("unknown distractor mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub trials: usize,
    pub gallery_per_identity: usize,
    pub distractor_identities: usize,
    pub distractor_mode: DistractorMode,
    pub far_target: f64,
    pub seed: u64,
    /// Worker threads for trials; results do not depend on it.
    pub jobs: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            gallery_per_identity: 1,
            distractor_identities: 6,
            distractor_mode: DistractorMode::Fixed,
            far_target: 0.01,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.gallery_per_identity == 0 {
            return Err(Error::invalid("trials and gallery images per identity must be >= 1"));
        }
        if !(self.far_target > 0.0 && self.far_target <= 1.0) {
            return Err(Error::invalid(format!("far target {} outside (0, 1]", self.far_target)));
        }
        Ok(())
    }

    fn run<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        if self.jobs <= 1 {
            return (0..self.trials).map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| (0..self.trials).into_par_iter().map(f).collect())
    }

    fn trial_rng(&self, t: usize) -> Rng {
        rng::stream(self.seed, 1 + t as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Classification,
    ClosedSet,
    OpenSet,
    Verification,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Classification => "classification",
            Protocol::ClosedSet => "closed_set",
            Protocol::OpenSet => "open_set",
            Protocol::Verification => "verification",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// One value per trial (a single value for deterministic protocols).
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `values`.
    pub std: f64,
    pub thresholds: Vec<f64>,
    /// CMC as (rank, rate) or ROC as (far, tar).
    pub curve: Vec<(f64, f64)>,
}

impl EvalReport {
    fn new(protocol: Protocol, values: Vec<f64>, thresholds: Vec<f64>, curve: Vec<(f64, f64)>) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            protocol,
            values,
            mean,
            std,
            thresholds,
            curve,
        }
    }

    /// Mean of the thresholds used, if any.
    pub fn threshold(&self) -> Option<f64> {
        if self.thresholds.is_empty() {
            None
        } else {
            Some(self.thresholds.iter().sum::<f64>() / self.thresholds.len() as f64)
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fraction of rows whose predicted identity equals the row label.
pub fn classification_accuracy(model: &LabeledHead, test: &Samples) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if test.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "features vs model input".into(),
            expected: model.input_dim(),
            actual: test.dim(),
        });
    }
    if let Some(l) = test.labels().iter().find(|l| model.class_labels.binary_search(l).is_err()) {
        return Err(Error::invalid(format!("test identity {l} is unknown to the model")));
    }
    let mut correct = 0;
    for (x, &l) in test.rows().zip(test.labels()) {
        if model.predict(x)? == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Threshold for a target false-accept rate over `nonmated` scores.
///
/// Let `allowed = floor(far * N)`. The threshold is the smallest observed
/// score `s` with at most `allowed` scores `>= s`; if none qualifies it is the
/// next float above the maximum. When every score may be accepted it is
/// negative infinity.
pub fn threshold_at_far(nonmated: &[f64], far: f64) -> f64 {
    let n = nonmated.len();
    let allowed = (far * n as f64 + 1e-9).floor() as usize;
    if allowed >= n {
        return f64::NEG_INFINITY;
    }
    let mut sorted = nonmated.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // sorted[allowed] must be rejected; the next larger distinct score is
    // the smallest one that can be accepted.
    let blocked = sorted[allowed];
    match sorted[..allowed].iter().rev().find(|&&s| s > blocked) {
        Some(&s) => s,
        None => blocked.next_up(),
    }
}

fn fraction_at_least(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}

/// Gallery and probe rows of one trial.
struct Draw {
    gallery: Vec<usize>,
    probes: Vec<usize>,
}

fn draw_gallery(groups: &[(usize, Vec<usize>)], per_identity: usize, rng: &mut Rng) -> Draw {
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for (_, idx) in groups {
        let mut idx = idx.clone();
        let (chosen, rest) = idx.partial_shuffle(rng, per_identity);
        gallery.extend_from_slice(chosen);
        probes.extend_from_slice(rest);
    }
    gallery.sort_unstable();
    probes.sort_unstable();
    Draw { gallery, probes }
}

fn groups_with_min(test: &Samples, min: usize) -> Result<Vec<(usize, Vec<usize>)>> {
    let groups: Vec<_> = test.indices_by_label().into_iter().collect();
    for (id, idx) in &groups {
        if idx.len() < min {
            return Err(Error::InsufficientSamples {
                identity: *id,
                available: idx.len(),
                required: min,
            });
        }
    }
    Ok(groups)
}

/// One closed-set trial: `counts[r - 1]` probes had their identity at rank `r`.
pub fn closed_set_trial(test: &Samples, cfg: &TrialConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    let groups = groups_with_min(test, cfg.gallery_per_identity + 1)?;
    closed_trial_on(test, &groups, cfg.gallery_per_identity, rng)
}

fn closed_trial_on(test: &Samples, groups: &[(usize, Vec<usize>)], g: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let draw = draw_gallery(groups, g, rng);
    let sm = score_matrix(&test.gather(&draw.probes)?, &test.gather(&draw.gallery)?)?;
    let mut counts = vec![0; groups.len()];
    for r in sm.ranks()? {
        counts[r - 1] += 1;
    }
    Ok(counts)
}

/// Cumulative match curve from per-rank counts.
pub fn cmc(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let mut acc = 0;
    counts
        .iter()
        .map(|c| {
            acc += c;
            if acc == total {
                1.0
            } else {
                acc as f64 / total as f64
            }
        })
        .collect()
}

/// Rank-1 per trial and the trial-averaged CMC.
pub fn closed_set_eval(test: &Samples, cfg: &TrialConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let groups = groups_with_min(test, cfg.gallery_per_identity + 1)?;
    let curves = cfg.run(|t| {
        let counts = closed_trial_on(test, &groups, cfg.gallery_per_identity, &mut cfg.trial_rng(t))?;
        Ok(cmc(&counts))
    })?;
    let ranks = groups.len();
    let curve = (0..ranks)
        .map(|r| {
            let v = curves.iter().map(|c| c[r]).sum::<f64>() / curves.len() as f64;
            ((r + 1) as f64, if r + 1 == ranks { 1.0 } else { v })
        })
        .collect();
    let rank1 = curves.iter().map(|c| c[0]).collect();
    Ok(EvalReport::new(Protocol::ClosedSet, rank1, Vec::new(), curve))
}

/// DIR at `far_target`: per trial, `distractor_identities` identities are
/// probe-only and set the threshold; the rest are split into gallery and
/// mated probes as in the closed-set protocol.
pub fn open_set_eval(test: &Samples, cfg: &TrialConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let all: Vec<(usize, Vec<usize>)> = test.indices_by_label().into_iter().collect();
    if cfg.distractor_identities == 0 {
        return Err(Error::invalid("open-set evaluation needs at least one distractor identity"));
    }
    if all.len() <= cfg.distractor_identities {
        return Err(Error::invalid(format!(
            "{} test identities cannot supply {} distractors and a gallery",
            all.len(),
            cfg.distractor_identities
        )));
    }
    let pick = |rng: &mut Rng| -> Vec<usize> {
        let mut ids: Vec<usize> = (0..all.len()).collect();
        let mut chosen = ids.partial_shuffle(rng, cfg.distractor_identities).0.to_vec();
        chosen.sort_unstable();
        chosen
    };
    let fixed = pick(&mut rng::stream(cfg.seed, 0));
    for &(id, ref idx) in &all {
        let is_fixed = fixed.iter().any(|&k| all[k].0 == id);
        let need = cfg.gallery_per_identity + 1;
        if idx.len() < need && (cfg.distractor_mode == DistractorMode::PerTrial || !is_fixed) {
            return Err(Error::InsufficientSamples {
                identity: id,
                available: idx.len(),
                required: need,
            });
        }
    }
    let results = cfg.run(|t| {
        let mut rng = cfg.trial_rng(t);
        let distractors = match cfg.distractor_mode {
            DistractorMode::Fixed => fixed.clone(),
            DistractorMode::PerTrial => pick(&mut rng),
        };
        let mut enrolled = Vec::new();
        let mut nonmated_rows = Vec::new();
        for (k, g) in all.iter().enumerate() {
            if distractors.binary_search(&k).is_ok() {
                nonmated_rows.extend_from_slice(&g.1);
            } else {
                enrolled.push(g.clone());
            }
        }
        nonmated_rows.sort_unstable();
        let draw = draw_gallery(&enrolled, cfg.gallery_per_identity, &mut rng);
        let gallery = test.gather(&draw.gallery)?;
        let nonmated = score_matrix(&test.gather(&nonmated_rows)?, &gallery)?;
        let mated = score_matrix(&test.gather(&draw.probes)?, &gallery)?;
        let nm_scores: Vec<f64> = (0..nonmated.probes()).map(|p| nonmated.top_match(p).1).collect();
        let m: Vec<(f64, bool)> = (0..mated.probes())
            .map(|p| {
                let (id, s) = mated.top_match(p);
                (s, id == mated.probe_labels()[p])
            })
            .collect();
        let tau = threshold_at_far(&nm_scores, cfg.far_target);
        Ok((dir_at(&m, tau), tau))
    })?;
    let (values, thresholds) = results.into_iter().unzip();
    Ok(EvalReport::new(Protocol::OpenSet, values, thresholds, Vec::new()))
}

/// DIR of mated probes given `(top score, rank-1 correct)` and a threshold.
pub fn dir_at(mated: &[(f64, bool)], tau: f64) -> f64 {
    mated.iter().filter(|&&(s, ok)| ok && s >= tau).count() as f64 / mated.len() as f64
}

/// Positive and negative verification scores over `test`.
///
/// Each sample contributes one positive, its best match among other samples
/// of its identity, and one negative per other identity, the best match in
/// that identity.
pub fn verification_scores(test: &Samples) -> Result<(Vec<f64>, Vec<f64>)> {
    let groups = groups_with_min(test, 2)?;
    let sm = score_matrix(test, test)?;
    let ids: Vec<usize> = groups.iter().map(|g| g.0).collect();
    let mut pos = Vec::with_capacity(test.len());
    let mut neg = Vec::with_capacity(test.len() * (ids.len() - 1));
    for i in 0..test.len() {
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for (j, &lj) in test.labels().iter().enumerate() {
            if j == i {
                continue;
            }
            let e = best.entry(lj).or_insert(f64::NEG_INFINITY);
            *e = e.max(sm.get(i, j));
        }
        let own = test.labels()[i];
        for (id, s) in best {
            if id == own {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    Ok((pos, neg))
}

/// (FAR, TAR) at every distinct score used as a threshold, FAR ascending.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Vec<(f64, f64)> {
    let mut t: Vec<f64> = pos.iter().chain(neg).copied().collect();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    let mut curve = vec![(0.0, 0.0)];
    curve.extend(t.iter().map(|&tau| (fraction_at_least(neg, tau), fraction_at_least(pos, tau))));
    curve
}

/// TAR at `far_target` from explicit score sets; returns `(tar, tau)`.
pub fn tar_at_far(pos: &[f64], neg: &[f64], far: f64) -> (f64, f64) {
    let tau = threshold_at_far(neg, far);
    (fraction_at_least(pos, tau), tau)
}

/// TAR at `far_target` over every sample of `test`, with the full ROC.
pub fn verification_eval(test: &Samples, cfg: &TrialConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let (pos, neg) = verification_scores(test)?;
    if neg.is_empty() {
        return Err(Error::invalid("verification needs at least 2 identities"));
    }
    let (tar, tau) = tar_at_far(&pos, &neg, cfg.far_target);
    Ok(EvalReport::new(Protocol::Verification, vec![tar], vec![tau], roc_curve(&pos, &neg)))
}

/// Closed-set, open-set and verification reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolReports {
    pub closed: EvalReport,
    pub open: EvalReport,
    pub verification: EvalReport,
}

/// All three identification protocols on already embedded samples.
pub fn evaluate_embeddings(embedded: &Samples, cfg: &TrialConfig) -> Result<ProtocolReports> {
    Ok(ProtocolReports {
        closed: closed_set_eval(embedded, cfg)?,
        open: open_set_eval(embedded, cfg)?,
        verification: verification_eval(embedded, cfg)?,
    })
}

/// Embeds rows `test` of `target` with a frozen model and runs the three
/// protocols. In-domain evaluation is the same call on the training dataset.
pub fn transfer_eval(model: &LabeledHead, target: &Dataset, test: &[usize], cfg: &TrialConfig) -> Result<ProtocolReports> {
    if target.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "target features vs model input".into(),
            expected: model.input_dim(),
            actual: target.dim(),
        });
    }
    let embedded = model.embed_samples(&target.gather(test)?)?;
    evaluate_embeddings(&embedded, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn samples(rows: &[&[f64]], labels: &[usize]) -> Samples {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Samples::from_rows(&rows, labels.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm { index: 0 })));
    }

    #[test]
    fn score_matrix_matches_loops() {
        let mut r = rng::seeded(3);
        use rand::Rng as _;
        let p: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let g: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ps = Samples::from_rows(&p, vec![0; 5]).unwrap();
        let gs = Samples::from_rows(&g, (0..7).collect()).unwrap();
        let sm = score_matrix(&ps, &gs).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let c = cosine_similarity(&p[i], &g[j]).unwrap();
                assert_abs_diff_eq!(sm.get(i, j), c, epsilon = 1e-12);
            }
        }
        let self_sm = score_matrix(&gs, &gs).unwrap();
        for j in 0..7 {
            assert_abs_diff_eq!(self_sm.get(j, j), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_norm_is_reported_with_index() {
        let a = samples(&[&[1.0, 0.0], &[0.0, 0.0]], &[0, 1]);
        assert!(matches!(score_matrix(&a, &a), Err(Error::ZeroNorm { index: 1 })));
    }

    #[test]
    fn hand_built_ranks() {
        // identity scores per probe; probe 2 prefers identity 1 over its own
        let sm = ScoreMatrix::new(
            vec![0.9, 0.1, 0.2, 0.1, 0.8, 0.3, 0.2, 0.7, 0.6],
            vec![0, 1, 2],
            vec![0, 1, 2],
        )
        .unwrap();
        assert_eq!(sm.ranks().unwrap(), vec![1, 1, 2]);
        let mut counts = vec![0; 3];
        for r in sm.ranks().unwrap() {
            counts[r - 1] += 1;
        }
        let c = cmc(&counts);
        assert_abs_diff_eq!(c[0], 2.0 / 3.0);
        assert_eq!(c[1], 1.0);
    }

    #[test]
    fn rank_ties_go_to_lower_id() {
        let sm = ScoreMatrix::new(vec![0.5, 0.5, 0.5, 0.5], vec![0, 1], vec![0, 1]).unwrap();
        assert_eq!(sm.ranks().unwrap(), vec![1, 2]);
        assert_eq!(sm.top_match(1), (0, 0.5));
    }

    #[test]
    fn threshold_rule() {
        let nm = [0.5, 0.3, 0.2, 0.1];
        assert_eq!(threshold_at_far(&nm, 0.25), 0.5);
        assert_eq!(threshold_at_far(&nm, 0.5), 0.3);
        assert_eq!(threshold_at_far(&nm, 1.0), f64::NEG_INFINITY);
        assert_eq!(threshold_at_far(&nm, 0.01), 0.5f64.next_up());
        // ties cannot be split
        assert_eq!(threshold_at_far(&[0.4, 0.4, 0.1], 0.34), 0.4f64.next_up());
    }

    #[test]
    fn open_set_hand_case() {
        let mated = [(0.9, true), (0.8, true), (0.4, true)];
        let tau = threshold_at_far(&[0.5, 0.3, 0.2, 0.1], 0.25);
        assert_eq!(dir_at(&mated, tau), 2.0 / 3.0);
        let tau = threshold_at_far(&[0.5, 0.3, 0.2, 0.1], 1.0);
        assert_eq!(dir_at(&[(0.9, true), (0.1, false)], tau), 0.5);
    }

    #[test]
    fn verification_hand_case() {
        let (tar, tau) = tar_at_far(&[0.9, 0.8], &[0.1, 0.2, 0.3], 0.01);
        assert_eq!(tar, 1.0);
        assert!(tau > 0.3 && tau <= 0.8);
    }

    #[test]
    fn verification_negatives_per_sample() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        use rand::Rng as _;
        let mut r = rng::seeded(1);
        for id in 0..18 {
            for _ in 0..3 {
                rows.push((0..5).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>());
                labels.push(id);
            }
        }
        let s = Samples::from_rows(&rows, labels).unwrap();
        let (pos, neg) = verification_scores(&s).unwrap();
        assert_eq!(pos.len(), 54);
        assert_eq!(neg.len(), 54 * 17);
    }

    #[test]
    fn self_match_is_excluded() {
        let s = samples(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[-1.0, 1.0]], &[0, 0, 1, 1]);
        let (pos, _) = verification_scores(&s).unwrap();
        assert!(pos.iter().all(|&p| p < 0.999));
    }

    #[test]
    fn singleton_identity_is_rejected() {
        let s = samples(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]], &[0, 0, 1]);
        assert!(matches!(verification_eval(&s, &TrialConfig::default()), Err(Error::InsufficientSamples { identity: 1, .. })));
    }

    #[test]
    fn mean_std_single_value() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn roc_ends_at_one_one() {
        let roc = roc_curve(&[0.9, 0.4], &[0.5, 0.1]);
        assert_eq!(roc.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.last(), Some(&(1.0, 1.0)));
        assert!(roc.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }
}
