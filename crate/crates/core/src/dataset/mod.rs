//! Labelled feature data and everything that draws from it: file formats,
//! train/test splits, similar/dissimilar pair constraints and pair batches.

pub(crate) mod io;
mod pairs;
mod split;
mod synth;

use std::collections::BTreeMap;

pub use io::{load_dataset, read_split, save_dataset, write_split, DataFormat};
pub use pairs::{build_pair_constraints, sample_pair_batch, Pair, PairBatch, PairConstraints, PairSampler};
pub use split::{identity_disjoint_split, identity_disjoint_splits, stratified_splits, Split, SplitMode, StratifiedMode};
pub use synth::{synth_gaussian, SynthParams};

use crate::{Error, Result};

/// Row-major matrix of feature vectors with one identity label per row.
///
/// Labels are arbitrary non-negative ids; a `Samples` gathered from a
/// [`Dataset`] keeps the parent's id space even when some ids are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    dim: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl Samples {
    pub fn new(data: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if data.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                context: "feature values vs rows x dim".into(),
                expected: labels.len() * dim,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature value in row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data, labels })
    }

    /// Builds from one vector per row; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "rows vs labels".into(),
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("row {i}"),
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, dim, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies the rows at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Samples> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Samples {
            dim: self.dim,
            data,
            labels,
        })
    }

    /// Sample indices grouped by label, ids ascending, indices ascending.
    pub fn indices_by_label(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        groups
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }
}

/// A full dataset: features, dense identity ids in `[0, K)` and the
/// original identity names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Samples,
    identity_names: Vec<String>,
}

impl Dataset {
    /// Validates the dataset invariants: at least one row, ids dense in
    /// `[0, K)` with `K = identity_names.len()`, every id present.
    pub fn new(samples: Samples, identity_names: Vec<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("dataset has no samples"));
        }
        let k = identity_names.len();
        let mut seen = vec![false; k];
        for (row, &l) in samples.labels().iter().enumerate() {
            if l >= k {
                return Err(Error::invalid(format!(
                    "row {row}: identity id {l} outside [0, {k})"
                )));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "identity id {missing} has no samples; ids must be dense"
            )));
        }
        Ok(Self {
            samples,
            identity_names,
        })
    }

    /// Dataset whose identity names are the decimal ids themselves.
    pub fn with_numeric_names(samples: Samples) -> Result<Self> {
        let k = samples.labels().iter().max().map_or(0, |m| m + 1);
        Self::new(samples, (0..k).map(|i| i.to_string()).collect())
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn labels(&self) -> &[usize] {
        self.samples.labels()
    }

    pub fn num_identities(&self) -> usize {
        self.identity_names.len()
    }

    pub fn identity_names(&self) -> &[String] {
        &self.identity_names
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Samples> {
        self.samples.gather(indices)
    }

    /// Per-identity sample counts indexed by id.
    pub fn identity_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_identities()];
        for &l in self.labels() {
            counts[l] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_sparse_ids() {
        let s = Samples::new(vec![0.0, 1.0], 1, vec![0, 2]).unwrap();
        let err = Dataset::new(s, vec!["a".into(), "b".into(), "c".into()]).unwrap_err();
        assert!(err.to_string().contains("identity id 1"));
    }

    #[test]
    fn rejects_nan_features() {
        let err = Samples::new(vec![0.0, f64::NAN], 2, vec![0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn gather_keeps_parent_ids() {
        let s = Samples::new(vec![0.0, 1.0, 2.0], 1, vec![0, 1, 2]).unwrap();
        let g = s.gather(&[2, 0]).unwrap();
        assert_eq!(g.labels(), &[2, 0]);
        assert_eq!(g.row(0), &[2.0]);
        assert!(s.gather(&[3]).is_err());
    }
}
