//! Metric learning with a pairwise KL-divergence objective and open-set
//! biometric evaluation over precomputed feature vectors.
//!
//! The crate is organised by concern:
//!
//! - [`dataset`]: feature/label storage, file formats, splits, pair sampling
//!   and a Gaussian-cluster generator.
//! - [`loss`]: softmax, cross-entropy, directed and symmetric KL terms, the
//!   combined objective and its gradient with respect to logits.
//! - [`model`]: a small trainable embedding head, SGD with step decay, and
//!   checkpoint I/O.
//! - [`eval`]: closed-set, open-set and verification protocols with CMC and
//!   ROC curves.
//! - [`baseline`]: PCA, L2 normalisation and multinomial logistic regression.
//! - [`detect`]: IoU matching and detection quality metrics.

pub mod baseline;
pub mod dataset;
pub mod detect;
mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
