//! Experiment config file: TOML with one table per command family.
//!
//! ```toml
//! seed = 7
//! data = "runs/synth/dataset.csv"
//!
//! [split]
//! mode = "disjoint"
//! count = 5
//! test_fraction = 0.2
//!
//! [train]
//! objective = "mfid"
//! epochs = 50
//! ```
//!
//! Every key is optional; command-line flags win over the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub identities: Option<usize>,
    pub per_id: Option<usize>,
    pub dim: Option<usize>,
    pub scale: Option<f64>,
    pub sigma: Option<f64>,
    pub format: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub mode: Option<String>,
    pub count: Option<usize>,
    pub test_fraction: Option<f64>,
    pub stratified_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub preset: Option<String>,
    pub architecture: Option<String>,
    pub embed_dim: Option<usize>,
    pub objective: Option<String>,
    pub margin: Option<f64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub decay_factor: Option<f64>,
    pub decay_every: Option<usize>,
    pub batch_pairs: Option<usize>,
    pub similar_fraction: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub similar_weight: Option<f64>,
    pub dissimilar_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub protocols: Option<String>,
    pub trials: Option<usize>,
    pub far: Option<f64>,
    pub gallery: Option<usize>,
    pub distractors: Option<usize>,
    pub distractor_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub energy: Option<f64>,
    pub c_grid: Option<Vec<f64>>,
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSection {
    pub iou: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub seeds: Option<usize>,
    pub arm_a: Option<String>,
    pub arm_b: Option<String>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let c: FileConfig = toml::from_str(
            "seed = 3\n[train]\nobjective = \"cross_entropy\"\nepochs = 2\n[baseline]\nc_grid = [0.1, 1.0]\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.train.epochs, Some(2));
        assert_eq!(c.baseline.c_grid, Some(vec![0.1, 1.0]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nepoch = 2\n").is_err());
    }
}
