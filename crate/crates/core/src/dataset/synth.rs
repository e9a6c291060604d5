use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{Dataset, Samples};
use crate::rng;
use crate::{Error, Result};

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// One cluster per identity: centers uniform in `[-scale, scale]^dim`,
/// samples are the center plus isotropic Gaussian noise. Rows are grouped
/// by identity; identity `i` is named `id{i}`.
pub fn synth_gaussian(p: &SynthParams) -> Result<Dataset> {
    if p.identities == 0 || p.samples_per_identity == 0 || p.dim == 0 {
        return Err(Error::invalid("identities, samples per identity and dim must be >= 1"));
    }
    if !(p.noise_sigma >= 0.0) || !p.noise_sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma {} must be >= 0", p.noise_sigma)));
    }
    if !(p.center_scale >= 0.0) || !p.center_scale.is_finite() {
        return Err(Error::invalid(format!("center scale {} must be >= 0", p.center_scale)));
    }
    let mut rng = rng::seeded(p.seed);
    let centers: Vec<Vec<f64>> = (0..p.identities)
        .map(|_| {
            (0..p.dim)
                .map(|_| rng.random_range(-p.center_scale..=p.center_scale))
                .collect()
        })
        .collect();
    let n = p.identities * p.samples_per_identity;
    let mut data = Vec::with_capacity(n * p.dim);
    let mut labels = Vec::with_capacity(n);
    for (id, c) in centers.iter().enumerate() {
        for _ in 0..p.samples_per_identity {
            for &cj in c {
                let z: f64 = rng.sample(StandardNormal);
                data.push(cj + p.noise_sigma * z);
            }
            labels.push(id);
        }
    }
    let names = (0..p.identities).map(|i| format!("id{i}")).collect();
    Dataset::new(Samples::new(data, p.dim, labels)?, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(sigma: f64) -> SynthParams {
        SynthParams {
            identities: 20,
            samples_per_identity: 50,
            dim: 64,
            center_scale: 1.0,
            noise_sigma: sigma,
            seed: 7,
        }
    }

    #[test]
    fn counts_follow_parameters() {
        let ds = synth_gaussian(&params(0.3)).unwrap();
        assert_eq!((ds.len(), ds.num_identities(), ds.dim()), (1000, 20, 64));
    }

    #[test]
    fn zero_noise_collapses_each_identity() {
        let ds = synth_gaussian(&params(0.0)).unwrap();
        for g in ds.samples().indices_by_label().values() {
            let first = ds.samples().row(g[0]);
            assert!(g.iter().all(|&i| ds.samples().row(i) == first));
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(synth_gaussian(&params(-1.0)).is_err());
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(synth_gaussian(&params(0.3)).unwrap(), synth_gaussian(&params(0.3)).unwrap());
    }
}
