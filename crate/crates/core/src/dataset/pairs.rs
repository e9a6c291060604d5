//! Similar/dissimilar pair constraints and uniformly sampled pair batches.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng as _;

use crate::rng::Rng;
use crate::{Error, Result};

/// Unordered sample pair, `a < b` when built from constraints or sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub similar: bool,
}

/// Exhaustive similar (`similar`) and dissimilar (`dissimilar`) index pairs,
/// each sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairConstraints {
    pub similar: Vec<(usize, usize)>,
    pub dissimilar: Vec<(usize, usize)>,
}

pub fn build_pair_constraints(labels: &[usize]) -> PairConstraints {
    let mut out = PairConstraints::default();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                out.similar.push((i, j));
            } else {
                out.dissimilar.push((i, j));
            }
        }
    }
    out
}

/// A batch of pairs; every pair contributes both of its images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    /// Two images per pair, counting repeated samples each time.
    pub fn image_count(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn similar_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.similar).count()
    }
}

/// Draws pairs uniformly from the similar and dissimilar constraint sets
/// without materialising them.
///
/// A similar pair is drawn by picking an identity with probability
/// proportional to its pair count and then two distinct members; a
/// dissimilar pair by rejection from all unordered pairs.
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    labels: &'a [usize],
    groups: Vec<Vec<usize>>,
    // cumulative similar-pair counts over `groups`
    cumulative: Vec<u64>,
    similar_total: u64,
    dissimilar_total: u64,
}

impl<'a> PairSampler<'a> {
    pub fn new(labels: &'a [usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("no samples to draw pairs from"));
        }
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = by_label.into_values().collect();
        let mut cumulative = Vec::with_capacity(groups.len());
        let mut acc = 0u64;
        for g in &groups {
            let m = g.len() as u64;
            acc += m * (m.saturating_sub(1)) / 2;
            cumulative.push(acc);
        }
        let n = labels.len() as u64;
        Ok(Self {
            labels,
            groups,
            cumulative,
            similar_total: acc,
            dissimilar_total: n * (n - 1) / 2 - acc,
        })
    }

    pub fn similar_total(&self) -> u64 {
        self.similar_total
    }

    pub fn dissimilar_total(&self) -> u64 {
        self.dissimilar_total
    }

    /// `n_pairs` pairs of which `round(n_pairs * similar_fraction)` are
    /// similar. Pairs are distinct within the batch.
    pub fn sample(&self, n_pairs: usize, similar_fraction: f64, rng: &mut Rng) -> Result<PairBatch> {
        if !(0.0..=1.0).contains(&similar_fraction) {
            return Err(Error::invalid(format!(
                "similar fraction {similar_fraction} outside [0, 1]"
            )));
        }
        let n_similar = (n_pairs as f64 * similar_fraction).round() as usize;
        let n_dissimilar = n_pairs - n_similar;
        if n_similar as u64 > self.similar_total {
            return Err(Error::ImpossibleComposition(format!(
                "{n_similar} similar pairs requested but only {} exist",
                self.similar_total
            )));
        }
        if n_dissimilar as u64 > self.dissimilar_total {
            return Err(Error::ImpossibleComposition(format!(
                "{n_dissimilar} dissimilar pairs requested but only {} exist",
                self.dissimilar_total
            )));
        }
        let mut pairs = Vec::with_capacity(n_pairs);
        self.draw(n_similar, true, rng, &mut pairs);
        self.draw(n_dissimilar, false, rng, &mut pairs);
        Ok(PairBatch { pairs })
    }

    fn draw(&self, count: usize, similar: bool, rng: &mut Rng, out: &mut Vec<Pair>) {
        if count == 0 {
            return;
        }
        let total = if similar {
            self.similar_total
        } else {
            self.dissimilar_total
        };
        // Rejection of repeats is slow when the batch nearly exhausts the
        // set; fall back to enumerating it.
        if 2 * count as u64 > total {
            let c = build_pair_constraints(self.labels);
            let set = if similar { c.similar } else { c.dissimilar };
            for k in index::sample(rng, set.len(), count).into_iter() {
                let (a, b) = set[k];
                out.push(Pair { a, b, similar });
            }
            return;
        }
        let mut seen = HashSet::with_capacity(count);
        while seen.len() < count {
            let (a, b) = if similar {
                self.draw_similar(rng)
            } else {
                self.draw_dissimilar(rng)
            };
            if seen.insert((a, b)) {
                out.push(Pair { a, b, similar });
            }
        }
    }

    fn draw_similar(&self, rng: &mut Rng) -> (usize, usize) {
        let u = rng.random_range(0..self.similar_total);
        let g = self.cumulative.partition_point(|&c| c <= u);
        let members = &self.groups[g];
        ordered(distinct_two(rng, members.len()), members)
    }

    fn draw_dissimilar(&self, rng: &mut Rng) -> (usize, usize) {
        let n = self.labels.len();
        loop {
            let (i, j) = distinct_two(rng, n);
            if self.labels[i] != self.labels[j] {
                return (i.min(j), i.max(j));
            }
        }
    }
}

fn distinct_two(rng: &mut Rng, m: usize) -> (usize, usize) {
    let i = rng.random_range(0..m);
    let mut j = rng.random_range(0..m - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

fn ordered((i, j): (usize, usize), members: &[usize]) -> (usize, usize) {
    let (a, b) = (members[i], members[j]);
    (a.min(b), a.max(b))
}

/// One-shot form of [`PairSampler::sample`].
pub fn sample_pair_batch(
    labels: &[usize],
    n_pairs: usize,
    similar_fraction: f64,
    rng: &mut Rng,
) -> Result<PairBatch> {
    PairSampler::new(labels)?.sample(n_pairs, similar_fraction, rng)
}
