use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::Dataset;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    StratifiedBySample,
    DisjointByIdentity,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::StratifiedBySample => "stratified-by-sample",
            SplitMode::DisjointByIdentity => "disjoint-by-identity",
        })
    }
}

impl FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stratified-by-sample" | "stratified" => Ok(SplitMode::StratifiedBySample),
            "disjoint-by-identity" | "disjoint" => Ok(SplitMode::DisjointByIdentity),
            other => Err(format!("unknown split mode `{other}`")),
        }
    }
}

/// How the repeated stratified splits relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StratifiedMode {
    /// Independent random resamples, each at the requested test fraction.
    #[default]
    Resample,
    /// A k-fold partition: every sample is tested exactly once and the
    /// test fraction is `1 / folds`.
    Partition,
}

impl FromStr for StratifiedMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "resample" => Ok(StratifiedMode::Resample),
            "partition" => Ok(StratifiedMode::Partition),
            other => Err(format!("unknown stratified mode `{other}`")),
        }
    }
}

/// Train/test partition of dataset row indices. Both sides are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub mode: SplitMode,
    pub seed: u64,
}

/// `folds` splits stratified per identity.
///
/// In resample mode each identity with `m` samples contributes
/// `round(m * test_fraction)` test samples, clamped to `[1, m - 1]`, which
/// keeps every identity on both sides and within one sample of the global
/// fraction.
pub fn stratified_splits(
    ds: &Dataset,
    folds: usize,
    test_fraction: f64,
    seed: u64,
    mode: StratifiedMode,
) -> Result<Vec<Split>> {
    if folds == 0 {
        return Err(Error::invalid("folds must be at least 1"));
    }
    if mode == StratifiedMode::Resample && !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let groups = ds.samples().indices_by_label();
    let min_required = match mode {
        StratifiedMode::Resample => 2,
        StratifiedMode::Partition => folds.max(2),
    };
    for (&id, members) in &groups {
        if members.len() < min_required {
            return Err(Error::InsufficientSamples {
                identity: id,
                available: members.len(),
                required: min_required,
            });
        }
    }

    let mut rng = rng::seeded(seed);
    let mut splits: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); folds];
    match mode {
        StratifiedMode::Resample => {
            for (train, test) in splits.iter_mut() {
                for members in groups.values() {
                    let m = members.len();
                    let n_test = ((m as f64 * test_fraction).round() as usize).clamp(1, m - 1);
                    let mut shuffled = members.clone();
                    shuffled.shuffle(&mut rng);
                    test.extend_from_slice(&shuffled[..n_test]);
                    train.extend_from_slice(&shuffled[n_test..]);
                }
            }
        }
        StratifiedMode::Partition => {
            for members in groups.values() {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                for (pos, &idx) in shuffled.iter().enumerate() {
                    let fold = pos % folds;
                    for (f, (train, test)) in splits.iter_mut().enumerate() {
                        if f == fold {
                            test.push(idx);
                        } else {
                            train.push(idx);
                        }
                    }
                }
            }
        }
    }
    Ok(splits
        .into_iter()
        .map(|(mut train, mut test)| {
            train.sort_unstable();
            test.sort_unstable();
            Split {
                train,
                test,
                mode: SplitMode::StratifiedBySample,
                seed,
            }
        })
        .collect())
}

/// Moves `ceil(K * fraction)` whole identities to the test side.
pub fn identity_disjoint_split(ds: &Dataset, identity_test_fraction: f64, seed: u64) -> Result<Split> {
    let mut rng = rng::seeded(seed);
    disjoint_split_with(ds, identity_test_fraction, seed, &mut rng)
}

/// `count` identity-disjoint splits drawn from one seeded stream.
pub fn identity_disjoint_splits(
    ds: &Dataset,
    count: usize,
    identity_test_fraction: f64,
    seed: u64,
) -> Result<Vec<Split>> {
    let mut rng = rng::seeded(seed);
    (0..count)
        .map(|_| disjoint_split_with(ds, identity_test_fraction, seed, &mut rng))
        .collect()
}

fn disjoint_split_with(ds: &Dataset, fraction: f64, seed: u64, rng: &mut rng::Rng) -> Result<Split> {
    let k = ds.num_identities();
    if k < 2 {
        return Err(Error::invalid("identity-disjoint split needs at least 2 identities"));
    }
    let n_test = test_identity_count(k, fraction);
    if n_test == 0 || n_test >= k {
        return Err(Error::invalid(format!(
            "identity fraction {fraction} puts {n_test} of {k} identities on the test side"
        )));
    }
    let mut ids: Vec<usize> = (0..k).collect();
    ids.shuffle(rng);
    let mut is_test = vec![false; k];
    for &id in &ids[..n_test] {
        is_test[id] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, &l) in ds.labels().iter().enumerate() {
        if is_test[l] {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(Split {
        train,
        test,
        mode: SplitMode::DisjointByIdentity,
        seed,
    })
}

/// Ceiling of `k * fraction`, tolerant of representation error so that
/// `90 * 0.2` gives 18 rather than 19.
pub(crate) fn test_identity_count(k: usize, fraction: f64) -> usize {
    if !(fraction > 0.0) {
        return 0;
    }
    (k as f64 * fraction - 1e-9).ceil().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_gaussian, Samples, SynthParams};
    use std::collections::BTreeSet;

    fn blobs(k: usize, per: usize, seed: u64) -> Dataset {
        synth_gaussian(&SynthParams {
            identities: k,
            samples_per_identity: per,
            dim: 2,
            center_scale: 1.0,
            noise_sigma: 0.1,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn eighty_twenty_gives_two_per_identity() {
        let ds = blobs(10, 10, 1);
        let splits = stratified_splits(&ds, 5, 0.2, 3, StratifiedMode::Resample).unwrap();
        assert_eq!(splits.len(), 5);
        for s in &splits {
            let mut per = vec![0; 10];
            for &i in &s.test {
                per[ds.labels()[i]] += 1;
            }
            assert!(per.iter().all(|&c| c == 2), "{per:?}");
            assert_eq!(s.train.len() + s.test.len(), 100);
        }
    }

    #[test]
    fn stratified_is_deterministic() {
        let ds = blobs(6, 7, 2);
        let a = stratified_splits(&ds, 5, 0.2, 9, StratifiedMode::Resample).unwrap();
        let b = stratified_splits(&ds, 5, 0.2, 9, StratifiedMode::Resample).unwrap();
        assert_eq!(a, b);
        let c = stratified_splits(&ds, 5, 0.2, 10, StratifiedMode::Resample).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn singleton_identity_is_reported() {
        let s = Samples::new(vec![0.0, 1.0, 2.0], 1, vec![0, 0, 1]).unwrap();
        let ds = Dataset::with_numeric_names(s).unwrap();
        match stratified_splits(&ds, 1, 0.5, 0, StratifiedMode::Resample) {
            Err(Error::InsufficientSamples { identity, .. }) => assert_eq!(identity, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partition_tests_each_sample_once() {
        let ds = blobs(4, 9, 5);
        let splits = stratified_splits(&ds, 5, 0.2, 1, StratifiedMode::Partition).unwrap();
        let mut all: Vec<usize> = splits.iter().flat_map(|s| s.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..36).collect::<Vec<_>>());
        for s in &splits {
            let t: BTreeSet<_> = s.test.iter().collect();
            assert!(s.train.iter().all(|i| !t.contains(i)));
        }
    }

    #[test]
    fn ceiling_rule_for_identity_counts() {
        assert_eq!(test_identity_count(90, 0.2), 18);
        assert_eq!(test_identity_count(93, 0.2), 19);
        assert_eq!(test_identity_count(20, 0.2), 4);
        let ds = blobs(93, 2, 4);
        let s = identity_disjoint_split(&ds, 0.2, 7).unwrap();
        let ids: BTreeSet<_> = s.test.iter().map(|&i| ds.labels()[i]).collect();
        assert_eq!(ids.len(), 19);
    }

    #[test]
    fn degenerate_fractions_are_errors() {
        let ds = blobs(5, 2, 4);
        assert!(identity_disjoint_split(&ds, 0.0, 1).is_err());
        assert!(identity_disjoint_split(&ds, 1.0, 1).is_err());
    }
}
