//! Semantics-aware cycle-consistent domain translation at desk scale.
//!
//! The crate trains a pair of image generators between a labeled source
//! domain and an unlabeled target domain. Dual-head discriminators score
//! realism and simultaneously segment, so the translation is pushed to keep
//! the semantic layout of each scene intact. A downstream segmentation
//! trainer and metrics harness measure the adaptation gain on a procedural
//! toy-world benchmark.

pub mod data;
pub mod error;
pub mod losses;
pub mod models;
pub mod nn;
pub mod plot;
pub mod segeval;
pub mod toyworld;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
