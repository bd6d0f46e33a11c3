//! Optimization of SAE parameters and the quality metrics reported with it.

mod adam;
mod calibrate;
mod loss;
mod metrics;
mod train;

pub use adam::{adam_step, adam_update_slice, AdamConfig, AdamState};
pub use calibrate::calibrate_thresholds;
pub use loss::{gradients, loss, Gradients, LossNorm, LossParts};
pub use metrics::{activation_counts, fve, fve_of, l0};
pub use train::{train, train_with_validation, LossRecord, TrainConfig, TrainReport};
