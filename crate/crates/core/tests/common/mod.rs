//! Test-only oracles, kept independent of the code paths they check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saescope::model::{encode_batch, Activation, Mode, SaeConfig, SaeParams};
use saescope::trainer::{gradients, loss, LossNorm};
use saescope::Matrix;

/// A random small gradient-check instance.
pub struct GradInstance {
    pub batch: Matrix<f64>,
    pub params: SaeParams<f64>,
    pub config: SaeConfig,
    pub norm: LossNorm,
}

pub fn random_instance(rng: &mut ChaCha8Rng, activation_kind: usize, matryoshka: bool) -> GradInstance {
    let d = rng.gen_range(2..=5);
    let eps = rng.gen_range(1..=(10 / d).max(1));
    let w = d * eps;
    let b = rng.gen_range(1..=8);
    let k = rng.gen_range(1..=w.min(3));
    let activation = match activation_kind {
        0 => Activation::ReluL1 {
            lambda: rng.gen_range(0.0..0.5),
        },
        1 => Activation::TopK { k },
        _ => Activation::BatchTopK { k },
    };
    let mut config = SaeConfig::new(d, eps, activation);
    if matryoshka && w >= 2 {
        let mut groups: Vec<usize> = (1..w).filter(|_| rng.gen_bool(0.4)).collect();
        if groups.is_empty() {
            groups.push(rng.gen_range(1..w));
        }
        groups.push(w);
        config = config.with_groups(groups);
    }
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let batch = Matrix::from_vec(b, d, (0..b * d).map(|_| u(-2.0, 2.0)).collect()).unwrap();
    let params = SaeParams {
        w_enc: Matrix::from_vec(d, w, (0..d * w).map(|_| u(-1.0, 1.0)).collect()).unwrap(),
        w_dec: Matrix::from_vec(w, d, (0..d * w).map(|_| u(-1.0, 1.0)).collect()).unwrap(),
        bias: (0..d).map(|_| u(-0.5, 0.5)).collect(),
        thresholds: vec![0.0; w],
    };
    let norm = if rng.gen_bool(0.5) {
        LossNorm::SquaredL2
    } else {
        LossNorm::L2
    };
    GradInstance {
        batch,
        params,
        config,
        norm,
    }
}

fn active_mask(inst: &GradInstance, params: &SaeParams<f64>) -> Vec<bool> {
    encode_batch(&inst.batch, params, &inst.config, Mode::Train)
        .unwrap()
        .as_slice()
        .iter()
        .map(|&x| x > 0.0)
        .collect()
}

/// Which tensor a flat parameter index belongs to.
fn param_mut(params: &mut SaeParams<f64>, idx: usize) -> &mut f64 {
    let ne = params.w_enc.as_slice().len();
    let nd = params.w_dec.as_slice().len();
    if idx < ne {
        &mut params.w_enc.as_mut_slice()[idx]
    } else if idx < ne + nd {
        &mut params.w_dec.as_mut_slice()[idx - ne]
    } else {
        &mut params.bias[idx - ne - nd]
    }
}

/// Central finite differences of the total loss. Returns `None` when a ±h
/// perturbation flips any activation mask (the loss is not smooth there).
pub fn finite_difference(inst: &GradInstance, h: f64) -> Option<Vec<f64>> {
    let base_mask = active_mask(inst, &inst.params);
    let n = 2 * inst.params.w_enc.as_slice().len() + inst.params.bias.len();
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let mut plus = inst.params.clone();
        *param_mut(&mut plus, idx) += h;
        let mut minus = inst.params.clone();
        *param_mut(&mut minus, idx) -= h;
        if active_mask(inst, &plus) != base_mask || active_mask(inst, &minus) != base_mask {
            return None;
        }
        let lp = loss(&inst.batch, &plus, &inst.config, inst.norm).unwrap().total;
        let lm = loss(&inst.batch, &minus, &inst.config, inst.norm).unwrap().total;
        out.push((lp - lm) / (2.0 * h));
    }
    Some(out)
}

/// Largest relative error between analytic and finite-difference gradients,
/// with magnitudes below `floor` treated as `floor`.
pub fn max_relative_error(inst: &GradInstance, fd: &[f64], floor: f64) -> f64 {
    let (_, g) = gradients(&inst.batch, &inst.params, &inst.config, inst.norm).unwrap();
    g.iter()
        .zip(fd)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Runs `count` smooth random instances per (activation, matryoshka) cell and
/// returns the worst relative error seen.
pub fn gradient_sweep(count_per_cell: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for kind in 0..3 {
        for matryoshka in [false, true] {
            let mut done = 0;
            while done < count_per_cell {
                let inst = random_instance(&mut rng, kind, matryoshka);
                let Some(fd) = finite_difference(&inst, 1e-3) else { continue };
                worst = worst.max(max_relative_error(&inst, &fd, 1e-3));
                done += 1;
                checked += 1;
            }
        }
    }
    (checked, worst)
}

/// Brute-force O(N²) monosemanticity: literal double sum over n ≠ m.
pub fn ms_double_loop(normalized: &[f64], sim: &[Vec<f64>]) -> f64 {
    let n = normalized.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += normalized[i] * normalized[j] * sim[i][j];
            }
        }
    }
    total / (n * (n - 1)) as f64
}

/// Brute-force relevance-weighted average of similarities over n ≠ m.
/// `None` when no pair carries weight.
pub fn ms_double_loop_weighted(normalized: &[f64], sim: &[Vec<f64>]) -> Option<f64> {
    let n = normalized.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = normalized[i] * normalized[j];
                num += r * sim[i][j];
                den += r;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Min-max normalization written out directly.
pub fn min_max(column: &[f64]) -> Vec<f64> {
    let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    column.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Naive cosine similarity double loop.
pub fn cosine_double_loop(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let norm = |r: &Vec<f64>| r.iter().map(|x| x * x).sum::<f64>().sqrt();
    rows.iter()
        .map(|a| {
            rows.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b)))
                .collect()
        })
        .collect()
}
