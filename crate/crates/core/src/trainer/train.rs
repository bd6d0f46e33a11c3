//! The training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Activation, SaeConfig, SaeParams};
use crate::store::ActivationDataset;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::calibrate::calibrate_thresholds;
use super::loss::{gradients, LossNorm, LossParts};
use super::metrics::{activation_counts, fve, l0};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// `None` selects `16 / (125·√ω)`.
    pub learning_rate: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub loss_norm: LossNorm,
    /// A loss record is kept every `log_every` steps and at the last step.
    pub log_every: usize,
    /// Batches used for BatchTopK threshold calibration after training.
    pub calibration_batches: usize,
    /// Sample minibatches with replacement instead of epoch shuffles.
    pub with_replacement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            batch_size: 4096,
            learning_rate: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            loss_norm: LossNorm::SquaredL2,
            log_every: 100,
            calibration_batches: 16,
            with_replacement: false,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_for(&self, width: usize) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| 16.0 / (125.0 * (width as f64).sqrt()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Argument(format!("learning_rate must be > 0, got {lr}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_epsilon >= 0.0) {
            return Err(Error::Argument("adam_epsilon must be >= 0".into()));
        }
        if self.log_every < 1 {
            return Err(Error::Argument("log_every must be >= 1".into()));
        }
        Ok(())
    }

    fn adam(&self, width: usize) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate_for(width),
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub parts: LossParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub loss_history: Vec<LossRecord>,
    /// Percent; `None` when the evaluation data has zero variance.
    pub final_fve: Option<f64>,
    pub final_l0: f64,
    /// Neurons with no positive activation on the evaluation pass.
    pub dead_neurons: usize,
    pub wall_steps: usize,
}

impl TrainReport {
    /// One `key=value` record per line: loss records, then a summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.loss_history {
            writeln!(
                out,
                "step={} total={:.9e} reconstruction={:.9e} sparsity={:.9e}",
                r.step, r.parts.total, r.parts.reconstruction, r.parts.sparsity
            )
            .unwrap();
        }
        let fve = self.final_fve.map_or("nan".to_string(), |f| format!("{f:.6}"));
        writeln!(
            out,
            "final_fve={fve} final_l0={:.6} dead_neurons={} wall_steps={}",
            self.final_l0, self.dead_neurons, self.wall_steps
        )
        .unwrap();
        out
    }
}

/// Yields minibatch row indices: one shuffle per epoch, or i.i.d. draws.
struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    with_replacement: bool,
}

impl Batcher {
    fn new(n: usize, seed: u64, with_replacement: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        if !with_replacement {
            order.shuffle(&mut rng);
        }
        Self {
            rng,
            order,
            pos: 0,
            with_replacement,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        if self.with_replacement {
            return (0..size).map(|_| self.rng.gen_range(0..n)).collect();
        }
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == n {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(n - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Trains on `dataset` and evaluates the report metrics on it.
pub fn train(dataset: &ActivationDataset, sae: &SaeConfig, cfg: &TrainConfig) -> Result<(SaeParams, TrainReport)> {
    train_with_validation(dataset, None, sae, cfg)
}

/// Trains on `dataset`; report metrics come from `validation` when given.
pub fn train_with_validation(
    dataset: &ActivationDataset,
    validation: Option<&ActivationDataset>,
    sae: &SaeConfig,
    cfg: &TrainConfig,
) -> Result<(SaeParams, TrainReport)> {
    sae.validate()?;
    cfg.validate()?;
    let data = dataset.data();
    if data.cols() != sae.input_dim {
        return Err(Error::Dimension {
            what: "dataset width",
            expected: sae.input_dim,
            actual: data.cols(),
        });
    }
    if data.rows() < cfg.batch_size && !cfg.with_replacement {
        return Err(Error::Argument(format!(
            "dataset has {} rows, fewer than batch_size {}; enable sampling with replacement",
            data.rows(),
            cfg.batch_size
        )));
    }

    let mut params = SaeParams::<f32>::initialize(sae, &data.column_means(), cfg.seed)?;
    let adam = cfg.adam(sae.width());
    let mut state = AdamState::for_params(&params);
    // separate stream from the initializer
    let mut batcher = Batcher::new(data.rows(), cfg.seed ^ 0x9E37_79B9_7F4A_7C15, cfg.with_replacement);
    let mut history = Vec::new();

    for step in 1..=cfg.steps {
        let batch = data.select_rows(&batcher.next(cfg.batch_size));
        let (parts, grads) = gradients(&batch, &params, sae, cfg.loss_norm)?;
        if !parts.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {} at step {step}", parts.total)));
        }
        adam_step(&mut params, &grads, &mut state, &adam, sae.unit_norm_decoder)?;
        if step % cfg.log_every == 0 || step == cfg.steps {
            history.push(LossRecord { step, parts });
        }
    }

    if matches!(sae.activation, Activation::BatchTopK { .. }) {
        let calib = calibration_rows(data, cfg);
        params.thresholds = calibrate_thresholds(&params, &calib, sae, cfg.calibration_batches, cfg.batch_size)?;
    }

    let eval = validation.unwrap_or(dataset).data();
    let report = TrainReport {
        loss_history: history,
        final_fve: match fve(eval, &params, sae) {
            Ok(f) => Some(f),
            Err(Error::Numeric(_)) => None,
            Err(e) => return Err(e),
        },
        final_l0: l0(eval, &params, sae)?,
        dead_neurons: activation_counts(eval, &params, sae)?
            .iter()
            .filter(|&&c| c == 0)
            .count(),
        wall_steps: cfg.steps,
    };
    Ok((params, report))
}

/// A seeded random sample of rows for threshold calibration.
fn calibration_rows(data: &Matrix<f32>, cfg: &TrainConfig) -> Matrix<f32> {
    let want = (cfg.calibration_batches * cfg.batch_size).min(data.rows());
    let mut idx: Vec<usize> = (0..data.rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xCA11)));
    idx.truncate(want);
    data.select_rows(&idx)
}
