//! Sparse autoencoder architecture: configuration, parameters, encoders and
//! (prefix) decoders.
//!
//! ```text
//! encode:  a = σ(W_encᵀ (v − b))
//! decode:  v̂ = W_decᵀ a + b
//! ```
//!
//! `σ` is ReLU, per-sample TopK, or BatchTopK. BatchTopK selects across the
//! whole batch while training; at inference it becomes `ReLU(pre − γ)` with
//! per-neuron calibrated thresholds `γ`. Top-K selection only ever keeps
//! strictly positive pre-activations, and ties at the cutoff go to the
//! smaller flat index (sample-major, then neuron).

use std::cmp::Ordering;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::matrix::{norm_f64, Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// ReLU with an L1 penalty of weight `lambda`.
    ReluL1 { lambda: f64 },
    /// Keep the `k` largest positive pre-activations of each sample.
    TopK { k: usize },
    /// Keep the `batch·k` largest positive pre-activations of a batch.
    BatchTopK { k: usize },
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::ReluL1 { .. } => "relu",
            Activation::TopK { .. } => "topk",
            Activation::BatchTopK { .. } => "batchtopk",
        }
    }

    pub fn k(&self) -> Option<usize> {
        match *self {
            Activation::TopK { k } | Activation::BatchTopK { k } => Some(k),
            Activation::ReluL1 { .. } => None,
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Activation::ReluL1 { lambda } => lambda,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::ReluL1 { lambda } => write!(f, "relu(lambda={lambda})"),
            Activation::TopK { k } => write!(f, "topk(k={k})"),
            Activation::BatchTopK { k } => write!(f, "batchtopk(k={k})"),
        }
    }
}

/// Whether BatchTopK selects over the batch (training) or thresholds with `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeConfig {
    pub input_dim: usize,
    pub expansion_factor: usize,
    pub activation: Activation,
    /// Strictly increasing prefix sizes ending at the width.
    pub matryoshka_groups: Option<Vec<usize>>,
    pub unit_norm_decoder: bool,
}

impl SaeConfig {
    /// Config with the default decoder normalization: on for ReLU-L1, off for
    /// the top-k family.
    pub fn new(input_dim: usize, expansion_factor: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            expansion_factor,
            activation,
            matryoshka_groups: None,
            unit_norm_decoder: matches!(activation, Activation::ReluL1 { .. }),
        }
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Self {
        self.matryoshka_groups = Some(groups);
        self
    }

    pub fn with_unit_norm_decoder(mut self, on: bool) -> Self {
        self.unit_norm_decoder = on;
        self
    }

    /// Latent width ω = d·ε.
    pub fn width(&self) -> usize {
        self.input_dim * self.expansion_factor
    }

    /// Prefix sizes used by the reconstruction objective (`[ω]` when plain).
    pub fn prefixes(&self) -> Vec<usize> {
        self.matryoshka_groups
            .clone()
            .unwrap_or_else(|| vec![self.width()])
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.expansion_factor == 0 {
            return Err(Error::Argument(format!(
                "input_dim and expansion_factor must be positive (got {} and {})",
                self.input_dim, self.expansion_factor
            )));
        }
        let width = self.width();
        match self.activation {
            Activation::ReluL1 { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(Error::Argument(format!("lambda must be finite and >= 0, got {lambda}")));
            }
            Activation::TopK { k } | Activation::BatchTopK { k } if k == 0 || k > width => {
                return Err(Error::Argument(format!("k must lie in 1..={width}, got {k}")));
            }
            _ => {}
        }
        if let Some(groups) = &self.matryoshka_groups {
            let increasing = groups.windows(2).all(|w| w[0] < w[1]);
            if groups.is_empty() || groups[0] < 1 || !increasing || *groups.last().unwrap() != width {
                return Err(Error::Argument(format!(
                    "matryoshka groups must be strictly increasing, start at >= 1 and end at {width}; got {groups:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Learned dictionary. `w_enc` is `d × ω`, `w_dec` is `ω × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams<T = f32> {
    pub w_enc: Matrix<T>,
    pub w_dec: Matrix<T>,
    pub bias: Vec<T>,
    /// Inference thresholds for BatchTopK; `+∞` silences a neuron.
    pub thresholds: Vec<T>,
}

impl<T: Real> SaeParams<T> {
    pub fn zeros(input_dim: usize, width: usize) -> Self {
        Self {
            w_enc: Matrix::zeros(input_dim, width),
            w_dec: Matrix::zeros(width, input_dim),
            bias: vec![T::default(); input_dim],
            thresholds: vec![T::default(); width],
        }
    }

    /// Decoder rows drawn from a spherical Gaussian and unit-normalized, the
    /// encoder set to the decoder transpose, bias set to `mean`.
    pub fn initialize(config: &SaeConfig, mean: &[f64], seed: u64) -> Result<Self> {
        config.validate()?;
        check_dim("bias initializer", config.input_dim, mean.len())?;
        let (d, w) = (config.input_dim, config.width());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_dec = Matrix::<T>::zeros(w, d);
        for j in 0..w {
            let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (dst, x) in w_dec.row_mut(j).iter_mut().zip(&row) {
                *dst = T::from_f64(x / norm);
            }
        }
        Ok(Self {
            w_enc: w_dec.transpose(),
            w_dec,
            bias: mean.iter().map(|&m| T::from_f64(m)).collect(),
            thresholds: vec![T::default(); w],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn width(&self) -> usize {
        self.thresholds.len()
    }

    pub fn check_shapes(&self, config: &SaeConfig) -> Result<()> {
        let (d, w) = (config.input_dim, config.width());
        check_dim("w_enc rows", d, self.w_enc.rows())?;
        check_dim("w_enc cols", w, self.w_enc.cols())?;
        check_dim("w_dec rows", w, self.w_dec.rows())?;
        check_dim("w_dec cols", d, self.w_dec.cols())?;
        check_dim("bias length", d, self.bias.len())?;
        check_dim("threshold length", w, self.thresholds.len())
    }

    /// Rescales every decoder row to unit Euclidean norm (zero rows stay zero).
    pub fn normalize_decoder_rows(&mut self) {
        for j in 0..self.w_dec.rows() {
            let row = self.w_dec.row_mut(j);
            let norm = norm_f64(row);
            if norm > 0.0 {
                for x in row.iter_mut() {
                    *x = T::from_f64(x.to_f64() / norm);
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> SaeParams<U> {
        SaeParams {
            w_enc: self.w_enc.cast(),
            w_dec: self.w_dec.cast(),
            bias: self.bias.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
            thresholds: self
                .thresholds
                .iter()
                .map(|&x| U::from_f64(x.to_f64()))
                .collect(),
        }
    }
}

/// `W_encᵀ (v − b)` accumulated in `f64` into `out` (length ω).
pub(crate) fn pre_activations<T: Real>(v: &[T], params: &SaeParams<T>, out: &mut [f64]) {
    let w = params.w_enc.cols();
    debug_assert_eq!(out.len(), w);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, (&vi, &bi)) in v.iter().zip(&params.bias).enumerate() {
        let x = vi.to_f64() - bi.to_f64();
        if x == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(params.w_enc.row(i)) {
            *o += x * wij.to_f64();
        }
    }
}

/// Orders candidates by value descending, then index ascending.
#[inline]
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Indices of the `k` largest strictly positive values, in descending order
/// (ties to the smaller index). Returns fewer than `k` when fewer are positive.
pub fn top_k_positive(values: &[f64], k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = values
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(i, &x)| (x, i))
        .collect();
    if k == 0 {
        return Vec::new();
    }
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, rank_order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(rank_order);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Applies the activation to one row of pre-activations, in place.
/// BatchTopK in training mode is not row-local and must go through
/// [`apply_batch`].
pub(crate) fn apply_row<T: Real>(
    pre: &mut [f64],
    params: &SaeParams<T>,
    config: &SaeConfig,
    mode: Mode,
) -> Result<()> {
    match (config.activation, mode) {
        (Activation::ReluL1 { .. }, _) => pre.iter_mut().for_each(|x| *x = x.max(0.0)),
        (Activation::TopK { k }, _) => {
            let keep = top_k_positive(pre, k);
            let mut out = vec![0.0; pre.len()];
            for j in keep {
                out[j] = pre[j];
            }
            pre.copy_from_slice(&out);
        }
        (Activation::BatchTopK { .. }, Mode::Inference) => {
            for (x, g) in pre.iter_mut().zip(&params.thresholds) {
                *x = (*x - g.to_f64()).max(0.0);
            }
        }
        (Activation::BatchTopK { .. }, Mode::Train) => {
            return Err(Error::Contract(
                "BatchTopK training-mode activation needs a whole batch; use encode_batch".into(),
            ))
        }
    }
    Ok(())
}

/// Applies the activation to a flat `rows × ω` block of pre-activations.
pub(crate) fn apply_batch<T: Real>(
    pre: &mut [f64],
    width: usize,
    params: &SaeParams<T>,
    config: &SaeConfig,
    mode: Mode,
) -> Result<()> {
    if let (Activation::BatchTopK { k }, Mode::Train) = (config.activation, mode) {
        let rows = pre.len() / width;
        let keep = top_k_positive(pre, rows * k);
        let mut out = vec![0.0; pre.len()];
        for i in keep {
            out[i] = pre[i];
        }
        pre.copy_from_slice(&out);
        return Ok(());
    }
    for row in pre.chunks_exact_mut(width) {
        apply_row(row, params, config, mode)?;
    }
    Ok(())
}

/// Latent code of a single vector.
pub fn encode<T: Real>(v: &[T], params: &SaeParams<T>, config: &SaeConfig, mode: Mode) -> Result<Vec<T>> {
    check_dim("input vector", config.input_dim, v.len())?;
    params.check_shapes(config)?;
    let mut pre = vec![0.0; config.width()];
    pre_activations(v, params, &mut pre);
    apply_row(&mut pre, params, config, mode)?;
    Ok(pre.into_iter().map(T::from_f64).collect())
}

/// Latent codes for a `B × d` batch, returned as `B × ω`.
pub fn encode_batch<T: Real>(
    batch: &Matrix<T>,
    params: &SaeParams<T>,
    config: &SaeConfig,
    mode: Mode,
) -> Result<Matrix<T>> {
    check_dim("batch width", config.input_dim, batch.cols())?;
    params.check_shapes(config)?;
    if batch.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let w = config.width();
    let mut pre = vec![0.0; batch.rows() * w];
    for (row, out) in batch.iter_rows().zip(pre.chunks_exact_mut(w)) {
        pre_activations(row, params, out);
    }
    apply_batch(&mut pre, w, params, config, mode)?;
    Matrix::from_vec(batch.rows(), w, pre.into_iter().map(T::from_f64).collect())
}

/// `W_decᵀ a + b` using only the first `m` latents, accumulated in `f64`.
pub(crate) fn decode_prefix_f64<T: Real, A: Real>(a: &[A], m: usize, params: &SaeParams<T>, out: &mut [f64]) {
    for (o, &b) in out.iter_mut().zip(&params.bias) {
        *o = b.to_f64();
    }
    for (j, &aj) in a[..m].iter().enumerate() {
        let aj = aj.to_f64();
        if aj == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(params.w_dec.row(j)) {
            *o += aj * w.to_f64();
        }
    }
}

pub fn decode<T: Real>(a: &[T], params: &SaeParams<T>) -> Result<Vec<T>> {
    prefix_decode(a, params.width(), params)
}

/// Decodes with every latent past index `m` treated as zero.
pub fn prefix_decode<T: Real>(a: &[T], m: usize, params: &SaeParams<T>) -> Result<Vec<T>> {
    check_dim("latent vector", params.width(), a.len())?;
    if m == 0 || m > a.len() {
        return Err(Error::Argument(format!(
            "prefix size must lie in 1..={}, got {m}",
            a.len()
        )));
    }
    let mut out = vec![0.0; params.input_dim()];
    decode_prefix_f64(a, m, params, &mut out);
    Ok(out.into_iter().map(T::from_f64).collect())
}

/// Decodes every row of a `B × ω` latent matrix.
pub fn decode_batch<T: Real>(latents: &Matrix<T>, params: &SaeParams<T>) -> Result<Matrix<T>> {
    check_dim("latent width", params.width(), latents.cols())?;
    let d = params.input_dim();
    let mut out = vec![0.0; d];
    let mut data = Vec::with_capacity(latents.rows() * d);
    for row in latents.iter_rows() {
        decode_prefix_f64(row, row.len(), params, &mut out);
        data.extend(out.iter().map(|&x| T::from_f64(x)));
    }
    Matrix::from_vec(latents.rows(), d, data)
}

/// `decode(encode(v))` for every row, in inference mode.
pub fn reconstruct<T: Real>(batch: &Matrix<T>, params: &SaeParams<T>, config: &SaeConfig) -> Result<Matrix<T>> {
    decode_batch(&encode_batch(batch, params, config, Mode::Inference)?, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_from(w_enc: &[&[f64]], w_dec: &[&[f64]], bias: &[f64]) -> SaeParams<f64> {
        let w = w_dec.len();
        SaeParams {
            w_enc: Matrix::from_rows(w_enc).unwrap(),
            w_dec: Matrix::from_rows(w_dec).unwrap(),
            bias: bias.to_vec(),
            thresholds: vec![0.0; w],
        }
    }

    fn identity2() -> SaeParams<f64> {
        params_from(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0])
    }

    #[test]
    fn relu_identity_weights() {
        let cfg = SaeConfig::new(2, 1, Activation::ReluL1 { lambda: 0.0 });
        let a = encode(&[1.0, -2.0], &identity2(), &cfg, Mode::Inference).unwrap();
        assert_eq!(a, vec![1.0, 0.0]);
    }

    #[test]
    fn bias_cancellation_for_every_activation() {
        let mut p = identity2();
        p.bias = vec![0.3, -0.7];
        for act in [
            Activation::ReluL1 { lambda: 1.0 },
            Activation::TopK { k: 1 },
            Activation::BatchTopK { k: 1 },
        ] {
            let cfg = SaeConfig::new(2, 1, act);
            let a = encode(&[0.3, -0.7], &p, &cfg, Mode::Inference).unwrap();
            assert_eq!(a, vec![0.0, 0.0], "{act}");
            let batch = Matrix::from_rows(&[[0.3, -0.7]]).unwrap();
            let a = encode_batch(&batch, &p, &cfg, Mode::Train).unwrap();
            assert_eq!(a.row(0), &[0.0, 0.0], "{act}");
        }
    }

    #[test]
    fn topk_hand_example() {
        // encoder columns (1,0), (0,1), (1,1)
        let p = params_from(
            &[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]],
            &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]],
            &[0.0, 0.0],
        );
        let cfg = SaeConfig {
            input_dim: 2,
            expansion_factor: 1,
            activation: Activation::TopK { k: 1 },
            matryoshka_groups: None,
            unit_norm_decoder: false,
        };
        // width is taken from the parameters' shape here: ω = 3 is not d·ε,
        // so go through the row kernel directly.
        let mut pre = vec![0.0; 3];
        pre_activations(&[0.2, 0.3], &p, &mut pre);
        assert!((pre[0] - 0.2).abs() < 1e-12 && (pre[1] - 0.3).abs() < 1e-12 && (pre[2] - 0.5).abs() < 1e-12);
        apply_row(&mut pre, &p, &cfg, Mode::Train).unwrap();
        assert_eq!(pre[..2], [0.0, 0.0]);
        assert!((pre[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn batchtopk_single_vector_train_is_contract_error() {
        let cfg = SaeConfig::new(2, 1, Activation::BatchTopK { k: 1 });
        let err = encode(&[1.0, 1.0], &identity2(), &cfg, Mode::Train).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn batchtopk_global_selection() {
        let cfg = SaeConfig::new(2, 1, Activation::BatchTopK { k: 1 });
        let batch = Matrix::from_rows(&[[3.0, 1.0], [2.0, 0.5]]).unwrap();
        let a = encode_batch(&batch, &identity2(), &cfg, Mode::Train).unwrap();
        assert_eq!(a, Matrix::from_rows(&[[3.0, 0.0], [2.0, 0.0]]).unwrap());
    }

    #[test]
    fn batchtopk_all_nonpositive_gives_zero() {
        let cfg = SaeConfig::new(2, 1, Activation::BatchTopK { k: 2 });
        let batch = Matrix::from_rows(&[[-3.0, 0.0], [-2.0, -0.5]]).unwrap();
        let a = encode_batch(&batch, &identity2(), &cfg, Mode::Train).unwrap();
        assert!(a.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn batchtopk_tie_goes_to_lower_flat_index() {
        let cfg = SaeConfig::new(2, 1, Activation::BatchTopK { k: 1 });
        // three equal values compete for two slots
        let batch = Matrix::from_rows(&[[1.0, 2.0], [2.0, 2.0]]).unwrap();
        let a = encode_batch(&batch, &identity2(), &cfg, Mode::Train).unwrap();
        assert_eq!(a, Matrix::from_rows(&[[0.0, 2.0], [2.0, 0.0]]).unwrap());
    }

    #[test]
    fn batchtopk_inference_thresholds() {
        let mut p = identity2();
        p.thresholds = vec![0.5, f64::INFINITY];
        let cfg = SaeConfig::new(2, 1, Activation::BatchTopK { k: 1 });
        let a = encode(&[2.0, 100.0], &p, &cfg, Mode::Inference).unwrap();
        assert_eq!(a, vec![1.5, 0.0]);
    }

    #[test]
    fn decode_examples() {
        let p = params_from(
            &[&[0.0; 3], &[0.0; 3]],
            &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]],
            &[0.5, 0.5],
        );
        assert_eq!(decode(&[1.0, 0.0, 2.0], &p).unwrap(), vec![3.5, 2.5]);
        assert_eq!(decode(&[0.0, 0.0, 0.0], &p).unwrap(), vec![0.5, 0.5]);
        assert_eq!(decode(&[0.25, -1.0], &identity2()).unwrap(), vec![0.25, -1.0]);
    }

    #[test]
    fn prefix_decode_single_atom_and_full() {
        let p = params_from(
            &[&[0.0; 3], &[0.0; 3]],
            &[&[1.0, 2.0], &[0.0, 1.0], &[1.0, 1.0]],
            &[0.5, 0.5],
        );
        let a = [2.0, 3.0, 4.0];
        assert_eq!(prefix_decode(&a, 1, &p).unwrap(), vec![2.5, 4.5]);
        assert_eq!(prefix_decode(&a, 3, &p).unwrap(), decode(&a, &p).unwrap());
        assert!(prefix_decode(&a, 0, &p).is_err());
        assert!(prefix_decode(&a, 4, &p).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let cfg = SaeConfig::new(2, 1, Activation::TopK { k: 1 });
        assert!(matches!(
            encode(&[1.0, 2.0, 3.0], &identity2(), &cfg, Mode::Inference),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(decode(&[1.0], &identity2()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(SaeConfig::new(4, 2, Activation::TopK { k: 9 }).validate().is_err());
        assert!(SaeConfig::new(4, 2, Activation::TopK { k: 8 }).validate().is_ok());
        let g = |v: Vec<usize>| SaeConfig::new(4, 2, Activation::TopK { k: 2 }).with_groups(v).validate();
        assert!(g(vec![1, 4, 8]).is_ok());
        assert!(g(vec![4, 4, 8]).is_err());
        assert!(g(vec![1, 4]).is_err());
        assert!(g(vec![0, 8]).is_err());
        assert!(SaeConfig::new(4, 2, Activation::ReluL1 { lambda: -1.0 }).validate().is_err());
    }

    #[test]
    fn initialization_contract() {
        let cfg = SaeConfig::new(5, 3, Activation::ReluL1 { lambda: 0.1 });
        let mean = [0.1, 0.2, 0.3, 0.4, 0.5];
        let p = SaeParams::<f32>::initialize(&cfg, &mean, 9).unwrap();
        p.check_shapes(&cfg).unwrap();
        for j in 0..15 {
            assert!((norm_f64(p.w_dec.row(j)) - 1.0).abs() < 1e-6);
        }
        assert_eq!(p.w_enc, p.w_dec.transpose());
        assert_eq!(decode(&[0.0; 15], &p).unwrap(), vec![0.1f32, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(p, SaeParams::<f32>::initialize(&cfg, &mean, 9).unwrap());
    }
}
