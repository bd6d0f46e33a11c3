//! Sparse autoencoders for vision-model activations.
//!
//! - [`store`]: the `SAEACT01` activation dataset container.
//! - [`model`] and [`checkpoint`]: SAE architecture and the `SAEPAR01` format.
//! - [`trainer`]: losses, analytic gradients, Adam, BatchTopK calibration, FVE/L0.
//! - [`monosemanticity`]: per-neuron Monosemanticity Scores.
//! - [`hierarchy`]: taxonomy LCA depths, Matryoshka level tables, Jaccard uniqueness.
//! - [`steering`]: latent clamping of token embeddings.
//! - [`synthetic`]: ground-truth superposition data and recovery scoring.

pub mod checkpoint;
pub mod error;
pub mod hierarchy;
pub mod matrix;
pub mod model;
pub mod monosemanticity;
pub mod steering;
pub mod store;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::{Matrix, Real};
pub use model::{Activation, Mode, SaeConfig, SaeParams};
pub use store::{ActivationDataset, SampleMeta};
