//! Inference thresholds for BatchTopK.
//!
//! Each neuron's threshold is the mean, over the batches in which it fires at
//! all, of the smallest positive training-mode activation it had in that
//! batch. Neurons that never fire get `+∞`.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Real};
use crate::model::{encode_batch, Activation, Mode, SaeConfig, SaeParams};

/// Calibrates thresholds on up to `num_batches` consecutive batches of
/// `batch_size` rows taken from the start of `data` (the last one may be
/// short when the data runs out).
pub fn calibrate_thresholds<T: Real>(
    params: &SaeParams<T>,
    data: &Matrix<T>,
    config: &SaeConfig,
    num_batches: usize,
    batch_size: usize,
) -> Result<Vec<T>> {
    if !matches!(config.activation, Activation::BatchTopK { .. }) {
        return Err(Error::Contract(format!(
            "threshold calibration needs a BatchTopK SAE, got {}",
            config.activation
        )));
    }
    if num_batches < 1 || batch_size < 1 {
        return Err(Error::Argument(format!(
            "need at least one batch of at least one row (got {num_batches} x {batch_size})"
        )));
    }
    let w = config.width();
    let mut sum = vec![0.0f64; w];
    let mut hits = vec![0usize; w];
    let indices: Vec<usize> = (0..data.rows()).collect();
    for chunk in indices.chunks(batch_size).take(num_batches) {
        let a = encode_batch(&data.select_rows(chunk), params, config, Mode::Train)?;
        let mut batch_min = vec![f64::INFINITY; w];
        for row in a.iter_rows() {
            for (m, &x) in batch_min.iter_mut().zip(row) {
                let x = x.to_f64();
                if x > 0.0 && x < *m {
                    *m = x;
                }
            }
        }
        for ((s, h), m) in sum.iter_mut().zip(&mut hits).zip(batch_min) {
            if m.is_finite() {
                *s += m;
                *h += 1;
            }
        }
    }
    Ok(sum
        .into_iter()
        .zip(hits)
        .map(|(s, h)| T::from_f64(if h == 0 { f64::INFINITY } else { s / h as f64 }))
        .collect())
}
