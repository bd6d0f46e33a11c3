//! Reconstruction quality (FVE) and sparsity (L0), both in inference mode.

use crate::error::{check_dim, Error, Result};
use crate::matrix::{Matrix, Real};
use crate::model::{apply_row, decode_prefix_f64, pre_activations, Mode, SaeConfig, SaeParams};

/// Visits every row with its inference-mode latent code.
fn for_each_latent<T: Real>(
    data: &Matrix<T>,
    params: &SaeParams<T>,
    config: &SaeConfig,
    mut f: impl FnMut(usize, &[T], &[f64]),
) -> Result<()> {
    check_dim("dataset width", config.input_dim, data.cols())?;
    params.check_shapes(config)?;
    if data.rows() == 0 {
        return Err(Error::Argument("empty dataset".into()));
    }
    let mut a = vec![0.0; config.width()];
    for (n, v) in data.iter_rows().enumerate() {
        pre_activations(v, params, &mut a);
        apply_row(&mut a, params, config, Mode::Inference)?;
        f(n, v, &a);
    }
    Ok(())
}

/// Fraction of variance explained, in percent:
/// `100 · (1 − Σ‖v − v̂‖² / Σ‖v − v̄‖²)`. Negative when the reconstruction is
/// worse than predicting the mean.
pub fn fve<T: Real>(data: &Matrix<T>, params: &SaeParams<T>, config: &SaeConfig) -> Result<f64> {
    let mean = data.column_means();
    let total: f64 = data
        .iter_rows()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| (x.to_f64() - m).powi(2)).sum::<f64>())
        .sum();
    if total <= 0.0 {
        return Err(Error::Numeric("FVE undefined: data has zero variance".into()));
    }
    let w = config.width();
    let mut out = vec![0.0; config.input_dim];
    let mut residual = 0.0;
    for_each_latent(data, params, config, |_, v, a| {
        decode_prefix_f64(a, w, params, &mut out);
        residual += v.iter().zip(&out).map(|(x, y)| (x.to_f64() - y).powi(2)).sum::<f64>();
    })?;
    Ok(100.0 * (1.0 - residual / total))
}

/// FVE of explicit reconstructions against their targets.
pub fn fve_of(data: &Matrix<f64>, recon: &Matrix<f64>) -> Result<f64> {
    check_dim("reconstruction rows", data.rows(), recon.rows())?;
    check_dim("reconstruction cols", data.cols(), recon.cols())?;
    let mean = data.column_means();
    let mut total = 0.0;
    let mut residual = 0.0;
    for (v, r) in data.iter_rows().zip(recon.iter_rows()) {
        for ((x, y), m) in v.iter().zip(r).zip(&mean) {
            total += (x - m).powi(2);
            residual += (x - y).powi(2);
        }
    }
    if total <= 0.0 {
        return Err(Error::Numeric("FVE undefined: data has zero variance".into()));
    }
    Ok(100.0 * (1.0 - residual / total))
}

/// Mean number of strictly positive latents per sample.
pub fn l0<T: Real>(data: &Matrix<T>, params: &SaeParams<T>, config: &SaeConfig) -> Result<f64> {
    let mut count = 0usize;
    for_each_latent(data, params, config, |_, _, a| {
        count += a.iter().filter(|&&x| x > 0.0).count();
    })?;
    Ok(count as f64 / data.rows() as f64)
}

/// Per-neuron count of samples with a positive inference-mode activation.
pub fn activation_counts<T: Real>(data: &Matrix<T>, params: &SaeParams<T>, config: &SaeConfig) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; config.width()];
    for_each_latent(data, params, config, |_, _, a| {
        for (c, &x) in counts.iter_mut().zip(a) {
            *c += (x > 0.0) as usize;
        }
    })?;
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    #[test]
    fn fve_hand_values() {
        let data = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let perfect = data.clone();
        assert!((fve_of(&data, &perfect).unwrap() - 100.0).abs() < 1e-12);
        let mean = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(fve_of(&data, &mean).unwrap().abs() < 1e-12);
        let partial = Matrix::from_rows(&[[0.5], [1.5]]).unwrap();
        assert!((fve_of(&data, &partial).unwrap() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn fve_through_model_matches_explicit() {
        // d = ω = 1, encoder 1, decoder 0.75, bias 0: v̂ = 0.75·relu(v)
        let cfg = SaeConfig::new(1, 1, Activation::ReluL1 { lambda: 0.0 });
        let p = SaeParams {
            w_enc: Matrix::from_vec(1, 1, vec![1.0f64]).unwrap(),
            w_dec: Matrix::from_vec(1, 1, vec![0.75]).unwrap(),
            bias: vec![0.0],
            thresholds: vec![0.0],
        };
        let data = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let recon = Matrix::from_rows(&[[0.0], [1.5]]).unwrap();
        assert!((fve(&data, &p, &cfg).unwrap() - fve_of(&data, &recon).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fve_zero_variance_is_error() {
        let cfg = SaeConfig::new(1, 1, Activation::TopK { k: 1 });
        let p = SaeParams::<f64>::zeros(1, 1);
        let data = Matrix::from_rows(&[[3.0], [3.0]]).unwrap();
        assert!(matches!(fve(&data, &p, &cfg), Err(Error::Numeric(_))));
    }

    #[test]
    fn l0_zero_and_structural() {
        let cfg = SaeConfig::new(2, 4, Activation::TopK { k: 5 });
        let mut p = SaeParams::<f64>::zeros(2, 8);
        let data = Matrix::from_rows(&[[1.0, 2.0], [3.0, 1.0]]).unwrap();
        assert_eq!(l0(&data, &p, &cfg).unwrap(), 0.0);
        // every neuron reads x₀ + x₁ with a distinct positive gain
        for j in 0..8 {
            p.w_enc.set(0, j, 1.0 + j as f64);
            p.w_enc.set(1, j, 1.0);
        }
        assert_eq!(l0(&data, &p, &cfg).unwrap(), 5.0);
        assert_eq!(activation_counts(&data, &p, &cfg).unwrap(), vec![0, 0, 0, 2, 2, 2, 2, 2]);
    }
}
