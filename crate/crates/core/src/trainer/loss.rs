//! Reconstruction/sparsity objective and its analytic gradients.
//!
//! For a batch of `B` rows the objective is
//!
//! ```text
//! L = 1/B Σₙ Σ_{m ∈ M} ‖vₙ − decode(φ^{1:m}(vₙ))‖  +  λ · 1/B Σₙ ‖φ(vₙ)‖₁
//! ```
//!
//! with `M = [ω]` for a plain SAE, the norm either squared or plain L2, and the
//! L1 term only for ReLU-L1. Top-k selection masks are constants of the forward
//! pass; the ReLU subgradient at zero is zero.

use crate::error::{check_dim, Error, Result};
use crate::matrix::{Matrix, Real};
use crate::model::{apply_batch, pre_activations, Activation, Mode, SaeConfig, SaeParams};

/// How a per-sample reconstruction residual is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossNorm {
    /// `‖v − v̂‖²`
    #[default]
    SquaredL2,
    /// `‖v − v̂‖`
    L2,
}

impl LossNorm {
    pub fn name(self) -> &'static str {
        match self {
            LossNorm::SquaredL2 => "squared-l2",
            LossNorm::L2 => "l2",
        }
    }
}

impl std::str::FromStr for LossNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-l2" => Ok(LossNorm::SquaredL2),
            "l2" => Ok(LossNorm::L2),
            other => Err(Error::Argument(format!("unknown loss norm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub sparsity: f64,
}

/// Gradients in `f64`, laid out like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `d × ω`, row-major.
    pub w_enc: Vec<f64>,
    /// `ω × d`, row-major.
    pub w_dec: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    fn zeros(d: usize, w: usize) -> Self {
        Self {
            w_enc: vec![0.0; d * w],
            w_dec: vec![0.0; d * w],
            bias: vec![0.0; d],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w_enc.iter().chain(&self.w_dec).chain(&self.bias)
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        if self.w_enc.iter().any(|g| !g.is_finite()) {
            Some("w_enc")
        } else if self.w_dec.iter().any(|g| !g.is_finite()) {
            Some("w_dec")
        } else if self.bias.iter().any(|g| !g.is_finite()) {
            Some("bias")
        } else {
            None
        }
    }
}

pub fn loss<T: Real>(
    batch: &Matrix<T>,
    params: &SaeParams<T>,
    config: &SaeConfig,
    norm: LossNorm,
) -> Result<LossParts> {
    Ok(evaluate(batch, params, config, norm, false)?.0)
}

pub fn gradients<T: Real>(
    batch: &Matrix<T>,
    params: &SaeParams<T>,
    config: &SaeConfig,
    norm: LossNorm,
) -> Result<(LossParts, Gradients)> {
    let (parts, grads) = evaluate(batch, params, config, norm, true)?;
    Ok((parts, grads.expect("gradients requested")))
}

fn evaluate<T: Real>(
    batch: &Matrix<T>,
    params: &SaeParams<T>,
    config: &SaeConfig,
    norm: LossNorm,
    want_grads: bool,
) -> Result<(LossParts, Option<Gradients>)> {
    config.validate()?;
    params.check_shapes(config)?;
    check_dim("batch width", config.input_dim, batch.cols())?;
    let b = batch.rows();
    if b == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let (d, w) = (config.input_dim, config.width());
    let prefixes = config.prefixes();
    let n_groups = prefixes.len();
    let lambda = match config.activation {
        Activation::ReluL1 { lambda } => lambda,
        _ => 0.0,
    };
    let scale = 1.0 / b as f64;

    let mut latents = vec![0.0; b * w];
    for (row, out) in batch.iter_rows().zip(latents.chunks_exact_mut(w)) {
        pre_activations(row, params, out);
    }
    apply_batch(&mut latents, w, params, config, Mode::Train)?;

    let mut grads = want_grads.then(|| Gradients::zeros(d, w));
    let mut recon_sum = 0.0;
    let mut l1_sum = 0.0;

    let bias: Vec<f64> = params.bias.iter().map(|x| x.to_f64()).collect();
    let mut acc = vec![0.0; d];
    // residual gradient per group, then suffix sums over groups
    let mut r_groups = vec![0.0; n_groups * d];
    let mut centered = vec![0.0; d];
    let mut active: Vec<usize> = Vec::with_capacity(w);
    let mut delta: Vec<f64> = Vec::with_capacity(w);

    for (n, v) in batch.iter_rows().enumerate() {
        let a = &latents[n * w..(n + 1) * w];
        active.clear();
        active.extend(a.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(j, _)| j));
        l1_sum += active.iter().map(|&j| a[j]).sum::<f64>();

        // prefix reconstructions in index order
        acc.copy_from_slice(&bias);
        let mut next = 0;
        for (g, &m) in prefixes.iter().enumerate() {
            while next < active.len() && active[next] < m {
                let j = active[next];
                for (o, &wd) in acc.iter_mut().zip(params.w_dec.row(j)) {
                    *o += a[j] * wd.to_f64();
                }
                next += 1;
            }
            let r = &mut r_groups[g * d..(g + 1) * d];
            let mut sq = 0.0;
            for ((ri, &o), &vi) in r.iter_mut().zip(&acc).zip(v) {
                *ri = o - vi.to_f64();
                sq += *ri * *ri;
            }
            match norm {
                LossNorm::SquaredL2 => {
                    recon_sum += sq;
                    r.iter_mut().for_each(|ri| *ri *= 2.0 * scale);
                }
                LossNorm::L2 => {
                    let len = sq.sqrt();
                    recon_sum += len;
                    let f = if len > 0.0 { scale / len } else { 0.0 };
                    r.iter_mut().for_each(|ri| *ri *= f);
                }
            }
        }

        let Some(grads) = grads.as_mut() else { continue };

        for g in (0..n_groups.saturating_sub(1)).rev() {
            let (head, tail) = r_groups.split_at_mut((g + 1) * d);
            for (x, &y) in head[g * d..].iter_mut().zip(&tail[..d]) {
                *x += y;
            }
        }
        // r_groups[g] now holds Σ_{g' ≥ g} ∂R/∂v̂^{g'}
        for (gb, &r) in grads.bias.iter_mut().zip(&r_groups[..d]) {
            *gb += r;
        }

        delta.clear();
        let mut g = 0;
        for &j in &active {
            while prefixes[g] <= j {
                g += 1;
            }
            let suffix = &r_groups[g * d..(g + 1) * d];
            let mut da = lambda * scale;
            let gw = &mut grads.w_dec[j * d..(j + 1) * d];
            for ((gwi, &s), &wd) in gw.iter_mut().zip(suffix).zip(params.w_dec.row(j)) {
                *gwi += a[j] * s;
                da += wd.to_f64() * s;
            }
            delta.push(da);
        }

        for ((c, &vi), &bi) in centered.iter_mut().zip(v).zip(&bias) {
            *c = vi.to_f64() - bi;
        }
        for i in 0..d {
            let we = params.w_enc.row(i);
            let ge = &mut grads.w_enc[i * w..(i + 1) * w];
            let mut gb = 0.0;
            for (&j, &dj) in active.iter().zip(&delta) {
                ge[j] += centered[i] * dj;
                gb += we[j].to_f64() * dj;
            }
            grads.bias[i] -= gb;
        }
    }

    let reconstruction = recon_sum * scale;
    let sparsity = if matches!(config.activation, Activation::ReluL1 { .. }) {
        l1_sum * scale
    } else {
        0.0
    };
    Ok((
        LossParts {
            total: reconstruction + lambda * sparsity,
            reconstruction,
            sparsity,
        },
        grads,
    ))
}
