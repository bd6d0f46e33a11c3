//! Token-level steering: clamp one latent to a fixed value on every token and
//! decode back to embedding space.

use std::path::Path;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Real};
use crate::model::{decode_batch, encode_batch, Mode, SaeConfig, SaeParams};

/// Sets latent `neuron` (0-based) to `value` on all tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionSpec {
    pub neuron: usize,
    pub value: f64,
}

impl InterventionSpec {
    pub fn new(neuron: usize, value: f64) -> Self {
        Self { neuron, value }
    }

    fn validate(&self, width: usize) -> Result<()> {
        if self.neuron >= width {
            return Err(Error::Argument(format!(
                "neuron {} out of range for width {width}",
                self.neuron
            )));
        }
        if !self.value.is_finite() {
            return Err(Error::Argument(format!("intervention value {} is not finite", self.value)));
        }
        Ok(())
    }
}

/// Copy of `latents` with column `spec.neuron` set to `spec.value`.
pub fn intervene<T: Real>(latents: &Matrix<T>, spec: &InterventionSpec) -> Result<Matrix<T>> {
    spec.validate(latents.cols())?;
    let mut out = latents.clone();
    let v = T::from_f64(spec.value);
    for i in 0..out.rows() {
        out.set(i, spec.neuron, v);
    }
    Ok(out)
}

/// Encodes every token (inference mode), applies the intervention and decodes.
pub fn steer_tokens<T: Real>(
    tokens: &Matrix<T>,
    params: &SaeParams<T>,
    config: &SaeConfig,
    spec: &InterventionSpec,
) -> Result<Matrix<T>> {
    let latents = encode_batch(tokens, params, config, Mode::Inference)?;
    decode_batch(&intervene(&latents, spec)?, params)
}

/// Writes the `SAEPAR01` checkpoint consumed by external runtimes.
pub fn export_weights(params: &SaeParams<f32>, config: &SaeConfig, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(path, params, config)
}

pub fn import_weights(path: impl AsRef<Path>) -> Result<(SaeParams<f32>, SaeConfig)> {
    read_checkpoint(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reconstruct, Activation};

    #[test]
    fn intervene_sets_one_column() {
        let a = Matrix::from_rows(&[[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = intervene(&a, &InterventionSpec::new(1, 7.0)).unwrap();
        assert_eq!(b, Matrix::from_rows(&[[1.0f32, 7.0, 3.0], [4.0, 7.0, 6.0]]).unwrap());
        assert!(intervene(&a, &InterventionSpec::new(3, 1.0)).is_err());
        assert!(intervene(&a, &InterventionSpec::new(0, f64::NAN)).is_err());
    }

    #[test]
    fn intervene_fixed_points() {
        let a = Matrix::from_rows(&[[1.0f32, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(intervene(&a, &InterventionSpec::new(1, 0.0)).unwrap(), a);
        let c = Matrix::from_rows(&[[3.0f32, 0.5], [3.0, 0.25]]).unwrap();
        assert_eq!(intervene(&c, &InterventionSpec::new(0, 3.0)).unwrap(), c);
    }

    #[test]
    fn no_op_intervention_equals_reconstruction() {
        let cfg = SaeConfig::new(3, 2, Activation::TopK { k: 2 });
        let p = SaeParams::<f32>::initialize(&cfg, &[0.1, 0.0, -0.1], 4).unwrap();
        let tokens = Matrix::from_rows(&[[1.0f32, 0.5, -0.2]]).unwrap();
        let a = encode_batch(&tokens, &p, &cfg, Mode::Inference).unwrap();
        for k in 0..6 {
            let spec = InterventionSpec::new(k, a.get(0, k) as f64);
            assert_eq!(steer_tokens(&tokens, &p, &cfg, &spec).unwrap(), reconstruct(&tokens, &p, &cfg).unwrap());
        }
    }
}
