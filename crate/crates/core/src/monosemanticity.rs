//! Monosemanticity Score (MS) of individual neurons.
//!
//! For each neuron the activations over an evaluation set are min-max
//! normalized to `ã ∈ [0,1]ᴺ`, and the score is the similarity-weighted mean
//! over ordered pairs of distinct samples:
//!
//! ```text
//! MS = Σ_{n≠m} ãₙ ãₘ sₙₘ / (N(N−1)) = (ãᵀSã − Σₙ ãₙ² sₙₙ) / (N(N−1))
//! ```
//!
//! With [`MsNormalization::Relevance`] the same sum is divided by the total
//! relevance `Σ_{n≠m} ãₙ ãₘ` instead, which makes the score a weighted average
//! of similarities that does not shrink with the firing rate of the neuron.
//!
//! `S` is the cosine similarity of per-sample embeddings. It is available
//! either as a dense (tiled) matrix or in factored form `S = ÛÛᵀ` over the
//! unit-normalized embeddings, which gives the same quadratic form in
//! `O(N·e)` time and memory.

use std::fmt::Write as _;

use crate::error::{check_dim, Error, Result};
use crate::matrix::{Matrix, Real};

pub const DEFAULT_TILE: usize = 1024;
pub const DEFAULT_TOP_COUNT: usize = 16;

/// Anything that can evaluate `xᵀSx` and the diagonal of a similarity matrix.
pub trait Similarity {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn diagonal(&self, n: usize) -> f64;
    fn quadratic_form(&self, x: &[f64]) -> f64;
}

/// Dense symmetric `N × N` cosine similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f32>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j] as f64
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

impl Similarity for SimilarityMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn diagonal(&self, n: usize) -> f64 {
        self.get(n, n)
    }

    fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = self.row(i);
            let mut acc = 0.0;
            for (&s, &xj) in row.iter().zip(x) {
                acc += s as f64 * xj;
            }
            total += xi * acc;
        }
        total
    }
}

/// `S = ÛÛᵀ` with `Û` the row-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredSimilarity {
    unit_rows: Matrix<f64>,
}

impl FactoredSimilarity {
    pub fn from_embeddings<T: Real>(embeddings: &Matrix<T>) -> Result<Self> {
        Ok(Self {
            unit_rows: unit_rows(embeddings)?,
        })
    }

    pub fn unit_rows(&self) -> &Matrix<f64> {
        &self.unit_rows
    }

    /// Materializes the dense matrix (for small N).
    pub fn to_dense(&self, tile: usize) -> SimilarityMatrix {
        dense_from_unit_rows(&self.unit_rows, tile)
    }
}

impl Similarity for FactoredSimilarity {
    fn len(&self) -> usize {
        self.unit_rows.rows()
    }

    fn diagonal(&self, n: usize) -> f64 {
        let r = self.unit_rows.row(n);
        r.iter().map(|x| x * x).sum()
    }

    fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut proj = vec![0.0; self.unit_rows.cols()];
        for (row, &xi) in self.unit_rows.iter_rows().zip(x) {
            if xi == 0.0 {
                continue;
            }
            for (p, &u) in proj.iter_mut().zip(row) {
                *p += xi * u;
            }
        }
        proj.iter().map(|p| p * p).sum()
    }
}

fn unit_rows<T: Real>(embeddings: &Matrix<T>) -> Result<Matrix<f64>> {
    let mut out = embeddings.cast::<f64>();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Data(format!(
                "embedding of sample {i} has norm {norm}; cosine similarity undefined"
            )));
        }
        row.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

fn dense_from_unit_rows(u: &Matrix<f64>, tile: usize) -> SimilarityMatrix {
    let n = u.rows();
    let tile = tile.max(1);
    let mut values = vec![0.0f32; n * n];
    for i0 in (0..n).step_by(tile) {
        let i1 = (i0 + tile).min(n);
        for j0 in (i0..n).step_by(tile) {
            let j1 = (j0 + tile).min(n);
            for i in i0..i1 {
                let a = u.row(i);
                for j in j0.max(i)..j1 {
                    let s = a
                        .iter()
                        .zip(u.row(j))
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                        .clamp(-1.0, 1.0) as f32;
                    values[i * n + j] = s;
                    values[j * n + i] = s;
                }
            }
        }
    }
    SimilarityMatrix { n, values }
}

/// Pairwise cosine similarity of embedding rows, computed tile by tile.
pub fn embedding_similarity<T: Real>(embeddings: &Matrix<T>, tile: usize) -> Result<SimilarityMatrix> {
    Ok(dense_from_unit_rows(&unit_rows(embeddings)?, tile))
}

/// Min-max normalizes one neuron's activations. A constant column maps to
/// zeros and is reported as degenerate (`true`).
pub fn normalize_activations<T: Real>(column: &[T]) -> (Vec<f64>, bool) {
    let (lo, hi) = column
        .iter()
        .map(|x| x.to_f64())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if column.is_empty() || !(hi > lo) {
        return (vec![0.0; column.len()], true);
    }
    let span = hi - lo;
    (column.iter().map(|x| (x.to_f64() - lo) / span).collect(), false)
}

/// Denominator of the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MsNormalization {
    /// Number of ordered pairs `N(N−1)`.
    #[default]
    Pairs,
    /// Total relevance `Σ_{n≠m} ãₙ ãₘ`.
    Relevance,
}

impl MsNormalization {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pairs => "pairs",
            Self::Relevance => "relevance",
        }
    }
}

impl std::str::FromStr for MsNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs" => Ok(Self::Pairs),
            "relevance" => Ok(Self::Relevance),
            other => Err(Error::Argument(format!(
                "unknown MS normalization {other:?} (expected pairs or relevance)"
            ))),
        }
    }
}

impl std::fmt::Display for MsNormalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Score of one neuron from its normalized activations, over `N(N−1)` pairs.
pub fn ms_score(normalized: &[f64], sim: &impl Similarity) -> Result<f64> {
    Ok(ms_score_with(normalized, sim, MsNormalization::Pairs)?.unwrap_or(0.0))
}

/// Score under the chosen normalization. `None` when the relevance total is
/// zero (at most one sample has nonzero normalized activation), where the
/// relevance-weighted average is undefined.
pub fn ms_score_with(normalized: &[f64], sim: &impl Similarity, norm: MsNormalization) -> Result<Option<f64>> {
    check_dim("normalized activations", sim.len(), normalized.len())?;
    let n = normalized.len();
    if n < 2 {
        return Err(Error::Argument(format!("monosemanticity needs at least 2 samples, got {n}")));
    }
    let diag: f64 = normalized
        .iter()
        .enumerate()
        .map(|(i, &x)| x * x * sim.diagonal(i))
        .sum();
    let weighted = sim.quadratic_form(normalized) - diag;
    let denom = match norm {
        MsNormalization::Pairs => n as f64 * (n as f64 - 1.0),
        MsNormalization::Relevance => {
            let sum: f64 = normalized.iter().sum();
            let sq: f64 = normalized.iter().map(|x| x * x).sum();
            sum * sum - sq
        }
    };
    if !(denom > 0.0) {
        return Ok(None);
    }
    // rounding in the quadratic form can push a perfect score past 1
    Ok(Some((weighted / denom).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSummary {
    pub best: f64,
    pub best_neuron: usize,
    pub worst: f64,
    pub worst_neuron: usize,
    pub mean: f64,
    pub std: f64,
    /// Neurons contributing to the statistics (degenerate ones are left out).
    pub counted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsReport {
    pub scores: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub summary: MsSummary,
}

impl MsReport {
    pub fn from_scores(scores: Vec<f64>, degenerate: Vec<bool>) -> Self {
        let live: Vec<(usize, f64)> = scores
            .iter()
            .zip(&degenerate)
            .enumerate()
            .filter(|(_, (_, &d))| !d)
            .map(|(k, (&s, _))| (k, s))
            .collect();
        let summary = if live.is_empty() {
            MsSummary {
                best: 0.0,
                best_neuron: 0,
                worst: 0.0,
                worst_neuron: 0,
                mean: 0.0,
                std: 0.0,
                counted: 0,
            }
        } else {
            let mut best = live[0];
            let mut worst = live[0];
            for &(k, s) in &live[1..] {
                if s > best.1 {
                    best = (k, s);
                }
                if s < worst.1 {
                    worst = (k, s);
                }
            }
            let n = live.len() as f64;
            let mean = live.iter().map(|p| p.1).sum::<f64>() / n;
            let var = live.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
            MsSummary {
                best: best.1,
                best_neuron: best.0,
                worst: worst.1,
                worst_neuron: worst.0,
                mean,
                std: var.sqrt(),
                counted: live.len(),
            }
        };
        Self {
            scores,
            degenerate,
            summary,
        }
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }

    /// Median over non-degenerate neurons.
    pub fn median(&self) -> f64 {
        let mut live: Vec<f64> = self
            .scores
            .iter()
            .zip(&self.degenerate)
            .filter(|(_, &d)| !d)
            .map(|(&s, _)| s)
            .collect();
        if live.is_empty() {
            return 0.0;
        }
        live.sort_by(f64::total_cmp);
        let m = live.len() / 2;
        if live.len() % 2 == 1 {
            live[m]
        } else {
            0.5 * (live[m - 1] + live[m])
        }
    }

    /// `neuron \t score \t degenerate` lines followed by a `key=value` summary.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# neuron\tscore\tdegenerate\n");
        for (k, (s, d)) in self.scores.iter().zip(&self.degenerate).enumerate() {
            writeln!(out, "{k}\t{s:.9}\t{}", *d as u8).unwrap();
        }
        let s = &self.summary;
        writeln!(out, "# summary").unwrap();
        writeln!(out, "neurons={}", self.scores.len()).unwrap();
        writeln!(out, "degenerate={}", self.degenerate_count()).unwrap();
        writeln!(out, "best={:.9} neuron={}", s.best, s.best_neuron).unwrap();
        writeln!(out, "worst={:.9} neuron={}", s.worst, s.worst_neuron).unwrap();
        writeln!(out, "mean={:.9}", s.mean).unwrap();
        writeln!(out, "std={:.9}", s.std).unwrap();
        writeln!(out, "best/worst={:.2} / {:.2}", s.best, s.worst).unwrap();
        out
    }

    /// Parses the per-neuron lines written by [`MsReport::to_text`]; the
    /// summary is recomputed.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut scores = Vec::new();
        let mut degenerate = Vec::new();
        for line in text.lines() {
            if line.starts_with('#') {
                if line == "# summary" {
                    break;
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parsed = (fields.len() == 3)
                .then(|| {
                    Some((
                        fields[0].parse::<usize>().ok()?,
                        fields[1].parse::<f64>().ok()?,
                        fields[2].parse::<u8>().ok()?,
                    ))
                })
                .flatten();
            match parsed {
                Some((k, s, d)) if k == scores.len() && d <= 1 => {
                    scores.push(s);
                    degenerate.push(d == 1);
                }
                _ => return Err(Error::Format(format!("bad MS report line {line:?}"))),
            }
        }
        Ok(Self::from_scores(scores, degenerate))
    }
}

/// Scores every column of an `N × ω′` activation table over `N(N−1)` pairs.
pub fn ms_all<T: Real>(acts: &Matrix<T>, sim: &impl Similarity) -> Result<MsReport> {
    ms_all_with(acts, sim, MsNormalization::Pairs)
}

/// [`ms_all`] under a chosen normalization. Neurons whose score is undefined
/// (constant, or too few firing samples for relevance weighting) get 0 and
/// are flagged degenerate.
pub fn ms_all_with<T: Real>(acts: &Matrix<T>, sim: &impl Similarity, norm: MsNormalization) -> Result<MsReport> {
    check_dim("activation rows", sim.len(), acts.rows())?;
    let columns = acts.transpose();
    let mut scores = Vec::with_capacity(acts.cols());
    let mut degenerate = Vec::with_capacity(acts.cols());
    for col in columns.iter_rows() {
        let (normalized, constant) = normalize_activations(col);
        let score = if constant { None } else { ms_score_with(&normalized, sim, norm)? };
        scores.push(score.unwrap_or(0.0));
        degenerate.push(score.is_none());
    }
    Ok(MsReport::from_scores(scores, degenerate))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopActivating {
    /// Sample indices, largest activation first.
    pub indices: Vec<usize>,
    /// Fewer than the requested number of samples had positive activation.
    pub underfilled: bool,
}

/// The `count` samples with the largest positive activation of `neuron`.
pub fn top_activating<T: Real>(acts: &Matrix<T>, neuron: usize, count: usize) -> Result<TopActivating> {
    if neuron >= acts.cols() {
        return Err(Error::Argument(format!(
            "neuron {neuron} out of range for {} neurons",
            acts.cols()
        )));
    }
    if count > acts.rows() {
        return Err(Error::Argument(format!(
            "asked for {count} samples out of {}",
            acts.rows()
        )));
    }
    let column: Vec<f64> = (0..acts.rows()).map(|n| acts.get(n, neuron).to_f64()).collect();
    let indices = crate::model::top_k_positive(&column, count);
    Ok(TopActivating {
        underfilled: indices.len() < count,
        indices,
    })
}
