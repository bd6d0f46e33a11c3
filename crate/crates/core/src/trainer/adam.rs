//! Adam with bias correction, kept in `f64` regardless of parameter storage.

use crate::error::{Error, Result};
use crate::matrix::Real;
use crate::model::SaeParams;

use super::loss::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_params<T: Real>(params: &SaeParams<T>) -> Self {
        Self::new(2 * params.w_enc.as_slice().len() + params.bias.len())
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Updates `values` in place from `grads`; the state slice must line up.
fn update<T: Real>(values: &mut [T], grads: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, t: u64) {
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for (((p, &g), m), v) in values.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        if m_hat == 0.0 {
            continue;
        }
        let v_hat = *v / c2;
        *p = T::from_f64(p.to_f64() - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon));
    }
}

/// Plain Adam over a flat parameter slice.
pub fn adam_update_slice<T: Real>(values: &mut [T], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if values.len() != grads.len() || state.m.len() != values.len() {
        return Err(Error::Argument(format!(
            "adam shape mismatch: {} values, {} grads, {} moments",
            values.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient {} at index {i}", grads[i])));
    }
    state.step += 1;
    update(values, grads, &mut state.m, &mut state.v, cfg, state.step);
    Ok(())
}

/// One Adam step on all trainable SAE tensors, followed by decoder
/// re-normalization when `unit_norm_decoder` is set.
pub fn adam_step<T: Real>(
    params: &mut SaeParams<T>,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
    unit_norm_decoder: bool,
) -> Result<()> {
    let ne = params.w_enc.as_slice().len();
    let nd = params.w_dec.as_slice().len();
    let nb = params.bias.len();
    if grads.w_enc.len() != ne || grads.w_dec.len() != nd || grads.bias.len() != nb || state.m.len() != ne + nd + nb {
        return Err(Error::Argument("adam: gradient/state shapes do not match parameters".into()));
    }
    if let Some(which) = grads.first_non_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient in {which} at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step;
    let (m_enc, rest) = state.m.split_at_mut(ne);
    let (m_dec, m_b) = rest.split_at_mut(nd);
    let (v_enc, rest) = state.v.split_at_mut(ne);
    let (v_dec, v_b) = rest.split_at_mut(nd);
    update(params.w_enc.as_mut_slice(), &grads.w_enc, m_enc, v_enc, cfg, t);
    update(params.w_dec.as_mut_slice(), &grads.w_dec, m_dec, v_dec, cfg, t);
    update(&mut params.bias, &grads.bias, m_b, v_b, cfg, t);
    if unit_norm_decoder {
        params.normalize_decoder_rows();
    }
    Ok(())
}
