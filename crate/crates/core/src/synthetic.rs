//! Ground-truth superposition data.
//!
//! Each sample is a sparse nonnegative combination of `M` unit-norm concept
//! atoms in `ℝᵈ` (with `M > d` to force superposition) plus isotropic Gaussian
//! noise. Optionally the concepts form a tree and every sample activates the
//! nodes along random root-to-leaf walks, so parents co-occur with their
//! children.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::hierarchy::TaxonomyTree;
use crate::matrix::{Matrix, Real};
use crate::monosemanticity::FactoredSimilarity;
use crate::store::{ActivationDataset, SampleMeta};

pub const TRUTH_MAGIC: &[u8; 8] = b"SAETRU01";
pub const TRUTH_VERSION: u32 = 1;

/// Complete `branching`-ary concept tree of the given depth (root excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeShape {
    pub depth: usize,
    pub branching: usize,
}

impl TreeShape {
    /// Concepts per level, top level first.
    pub fn level_sizes(&self) -> Vec<usize> {
        (1..=self.depth as u32).map(|l| self.branching.pow(l)).collect()
    }

    pub fn concept_count(&self) -> usize {
        self.level_sizes().iter().sum()
    }

    /// Cumulative level sizes, i.e. Matryoshka groups aligned with the tree.
    pub fn cumulative_sizes(&self) -> Vec<usize> {
        self.level_sizes()
            .iter()
            .scan(0, |acc, &s| {
                *acc += s;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub input_dim: usize,
    pub concepts: usize,
    pub samples: usize,
    /// Active concepts per sample.
    pub sparsity: usize,
    pub noise_sigma: f64,
    /// Code magnitudes are uniform on `[magnitude_min, magnitude_max]`.
    pub magnitude_min: f64,
    pub magnitude_max: f64,
    pub tree: Option<TreeShape>,
    pub seed: u64,
}

impl ScenarioConfig {
    /// d=64, M=128, N=50000, s=4, σ=0.01, seed 1234.
    pub fn standard() -> Self {
        Self {
            name: "standard-v1".into(),
            input_dim: 64,
            concepts: 128,
            samples: 50_000,
            sparsity: 4,
            noise_sigma: 0.01,
            magnitude_min: 0.5,
            magnitude_max: 1.5,
            tree: None,
            seed: 1234,
        }
    }

    /// Tree-structured scenario: 4 + 16 + 64 concepts in three levels over
    /// 42 dimensions, one root-to-leaf walk per sample.
    pub fn hierarchical() -> Self {
        let tree = TreeShape {
            depth: 3,
            branching: 4,
        };
        Self {
            name: "hierarchical-v1".into(),
            input_dim: 42,
            concepts: tree.concept_count(),
            samples: 30_000,
            sparsity: tree.depth,
            noise_sigma: 0.01,
            magnitude_min: 0.5,
            magnitude_max: 1.5,
            tree: Some(tree),
            seed: 4321,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "standard" | "standard-v1" => Ok(Self::standard()),
            "hierarchical" | "hierarchical-v1" => Ok(Self::hierarchical()),
            other => Err(Error::Argument(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(format!("infeasible scenario: {msg}")));
        if self.input_dim < 2 {
            return bad(format!("input_dim must be >= 2, got {}", self.input_dim));
        }
        if self.concepts == 0 || self.samples == 0 {
            return bad("concepts and samples must be positive".into());
        }
        if self.sparsity == 0 || self.sparsity > self.concepts {
            return bad(format!("sparsity {} must lie in 1..={}", self.sparsity, self.concepts));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.magnitude_min > 0.0 && self.magnitude_max >= self.magnitude_min && self.magnitude_max.is_finite()) {
            return bad("magnitudes must satisfy 0 < min <= max".into());
        }
        if let Some(t) = self.tree {
            if t.depth == 0 || t.branching == 0 {
                return bad("tree depth and branching must be positive".into());
            }
            if t.concept_count() != self.concepts {
                return bad(format!(
                    "tree of depth {} and branching {} has {} concepts, config says {}",
                    t.depth,
                    t.branching,
                    t.concept_count(),
                    self.concepts
                ));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("name", self.name.clone());
        kv("input_dim", self.input_dim.to_string());
        kv("concepts", self.concepts.to_string());
        kv("samples", self.samples.to_string());
        kv("sparsity", self.sparsity.to_string());
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("magnitude_min", self.magnitude_min.to_string());
        kv("magnitude_max", self.magnitude_max.to_string());
        if let Some(t) = self.tree {
            kv("tree_depth", t.depth.to_string());
            kv("tree_branching", t.branching.to_string());
        }
        kv("seed", self.seed.to_string());
        out
    }

    /// Parses `key=value` lines; omitted keys keep the standard values and
    /// unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key=value, got {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = match map.get("name") {
            Some(n) => Self::by_name(n).unwrap_or_else(|_| Self {
                name: n.clone(),
                ..Self::standard()
            }),
            None => Self::standard(),
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad value for {k}: {v:?}")))
        }
        let (mut depth, mut branching) = cfg.tree.map_or((None, None), |t| (Some(t.depth), Some(t.branching)));
        for (k, v) in &map {
            match k.as_str() {
                "name" => {}
                "input_dim" => cfg.input_dim = num(k, v)?,
                "concepts" => cfg.concepts = num(k, v)?,
                "samples" => cfg.samples = num(k, v)?,
                "sparsity" => cfg.sparsity = num(k, v)?,
                "noise_sigma" => cfg.noise_sigma = num(k, v)?,
                "magnitude_min" => cfg.magnitude_min = num(k, v)?,
                "magnitude_max" => cfg.magnitude_max = num(k, v)?,
                "seed" => cfg.seed = num(k, v)?,
                "tree_depth" => depth = Some(num(k, v)?),
                "tree_branching" => branching = Some(num(k, v)?),
                other => return Err(Error::Format(format!("unknown scenario key {other:?}"))),
            }
        }
        cfg.tree = match (depth, branching) {
            (Some(depth), Some(branching)) => Some(TreeShape { depth, branching }),
            (None, None) => None,
            _ => return Err(Error::Format("tree_depth and tree_branching go together".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `M × d`, unit rows.
    pub dictionary: Matrix<f32>,
    /// `N × M`, nonnegative.
    pub codes: Matrix<f32>,
    pub concept_tree: Option<TaxonomyTree>,
    pub noise_sigma: f64,
}

/// Taxon id of concept `m` in the concept tree.
pub fn concept_id(m: usize) -> String {
    format!("c{m}")
}

pub const TREE_ROOT: &str = "root";

/// Parent of each concept in the complete tree, concepts numbered level by
/// level (all level-1 concepts first).
fn tree_parents(shape: TreeShape) -> Vec<Option<usize>> {
    let mut parents = Vec::new();
    let mut level_start = 0;
    let mut prev_start = 0;
    for (l, &size) in shape.level_sizes().iter().enumerate() {
        for i in 0..size {
            parents.push((l > 0).then(|| prev_start + i / shape.branching));
        }
        prev_start = level_start;
        level_start += size;
    }
    parents
}

fn build_tree(shape: TreeShape) -> Result<TaxonomyTree> {
    let edges: Vec<(String, String)> = tree_parents(shape)
        .iter()
        .enumerate()
        .map(|(m, p)| (concept_id(m), p.map_or(TREE_ROOT.to_string(), concept_id)))
        .collect();
    TaxonomyTree::from_edges(&edges)
}

/// Draws a dataset and its ground truth; fully determined by `cfg.seed`.
pub fn generate(cfg: &ScenarioConfig) -> Result<(ActivationDataset, GroundTruth)> {
    cfg.validate()?;
    let (d, m, n) = (cfg.input_dim, cfg.concepts, cfg.samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut dictionary = Matrix::<f32>::zeros(m, d);
    for j in 0..m {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (dst, x) in dictionary.row_mut(j).iter_mut().zip(&row) {
            *dst = (x / norm) as f32;
        }
    }

    let children: Vec<Vec<usize>> = match cfg.tree {
        Some(shape) => {
            let parents = tree_parents(shape);
            // index m is the root's child list, index c < m are concept children
            let mut ch = vec![Vec::new(); m + 1];
            for (c, p) in parents.iter().enumerate() {
                ch[p.unwrap_or(m)].push(c);
            }
            ch
        }
        None => Vec::new(),
    };

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Argument(e.to_string()))?;
    let mut codes = Matrix::<f32>::zeros(n, m);
    let mut data = Matrix::<f32>::zeros(n, d);
    let mut meta = Vec::with_capacity(n);
    let all: Vec<usize> = (0..m).collect();
    let mut acc = vec![0.0f64; d];
    for i in 0..n {
        let mut active: Vec<usize> = Vec::with_capacity(cfg.sparsity);
        let mut taxon = None;
        if let Some(shape) = cfg.tree {
            // the sample's taxon is the deepest node of its first walk
            while active.len() < cfg.sparsity {
                let mut node = m;
                while let Some(&next) = children[node].choose(&mut rng) {
                    node = next;
                    if active.len() < cfg.sparsity && !active.contains(&node) {
                        active.push(node);
                        if active.len() <= shape.depth {
                            taxon = Some(node);
                        }
                    }
                }
            }
        } else {
            active.extend(all.choose_multiple(&mut rng, cfg.sparsity).copied());
        }
        acc.iter_mut().for_each(|x| *x = 0.0);
        for &c in &active {
            let mag = rng.gen_range(cfg.magnitude_min..=cfg.magnitude_max);
            codes.set(i, c, mag as f32);
            for (a, &w) in acc.iter_mut().zip(dictionary.row(c)) {
                *a += codes.get(i, c) as f64 * w as f64;
            }
        }
        for (dst, a) in data.row_mut(i).iter_mut().zip(&acc) {
            let e = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *dst = (a + e) as f32;
        }
        let mut sm = SampleMeta::new(format!("s{i}"));
        sm.taxon_id = taxon.map(concept_id);
        meta.push(sm);
    }

    let concept_tree = cfg.tree.map(build_tree).transpose()?;
    let dataset = ActivationDataset::new(data, meta)?.with_attribute("scenario", &cfg.name)?;
    Ok((
        dataset,
        GroundTruth {
            dictionary,
            codes,
            concept_tree,
            noise_sigma: cfg.noise_sigma,
        },
    ))
}

impl GroundTruth {
    pub fn concepts(&self) -> usize {
        self.dictionary.rows()
    }

    /// Ground truth restricted to the listed samples.
    pub fn select_samples(&self, indices: &[usize]) -> Self {
        Self {
            codes: self.codes.select_rows(indices),
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let tree = self
            .concept_tree
            .as_ref()
            .map(TaxonomyTree::to_edge_text)
            .unwrap_or_default();
        out.extend_from_slice(TRUTH_MAGIC);
        out.extend_from_slice(&TRUTH_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dictionary.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dictionary.cols() as u32).to_le_bytes());
        out.extend_from_slice(&(self.codes.rows() as u64).to_le_bytes());
        out.extend_from_slice(&self.noise_sigma.to_le_bytes());
        out.extend_from_slice(&(tree.len() as u64).to_le_bytes());
        for &x in self.dictionary.as_slice().iter().chain(self.codes.as_slice()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(tree.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const HEAD: usize = 8 + 4 + 4 + 4 + 8 + 8 + 8;
        if bytes.len() < HEAD {
            return Err(Error::Corrupt {
                expected: HEAD as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..8] != TRUTH_MAGIC {
            return Err(Error::Format("bad ground-truth magic, expected \"SAETRU01\"".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
        if u32_at(8) != TRUTH_VERSION as usize {
            return Err(Error::Format(format!("unsupported ground-truth version {}", u32_at(8))));
        }
        let (m, d, n) = (u32_at(12), u32_at(16), u64_at(20));
        let noise_sigma = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
        let tree_len = u64_at(36);
        let expected = HEAD + 4 * (m * d + n * m) + tree_len;
        if bytes.len() != expected {
            return Err(Error::Corrupt {
                expected: expected as u64,
                actual: bytes.len() as u64,
            });
        }
        let floats: Vec<f32> = bytes[HEAD..HEAD + 4 * (m * d + n * m)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tree_text = std::str::from_utf8(&bytes[expected - tree_len..])
            .map_err(|e| Error::Format(format!("tree block is not UTF-8: {e}")))?;
        Ok(Self {
            dictionary: Matrix::from_vec(m, d, floats[..m * d].to_vec())?,
            codes: Matrix::from_vec(n, m, floats[m * d..].to_vec())?,
            concept_tree: (tree_len > 0).then(|| TaxonomyTree::parse_edges(tree_text)).transpose()?,
            noise_sigma,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Codes as an activation dataset aligned with the generated samples, so
    /// they can serve as the embedding file of a monosemanticity evaluation.
    pub fn codes_dataset(&self, meta: &[SampleMeta]) -> Result<ActivationDataset> {
        ActivationDataset::new(self.codes.clone(), meta.to_vec())
    }
}

/// Sample similarity from shared concepts: cosine of the code rows.
pub fn ground_truth_similarity(truth: &GroundTruth) -> Result<FactoredSimilarity> {
    FactoredSimilarity::from_embeddings(&truth.codes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryScore {
    /// Sum of matched cosines (negatives count as 0) divided by the number
    /// of atoms; unmatched atoms contribute 0.
    pub mean_max_cosine: f64,
    /// `(atom, neuron, cosine)`, one entry per matched atom.
    pub matched: Vec<(usize, usize, f64)>,
    pub unmatched_atoms: usize,
}

/// Cosine between every atom (rows) and every learned decoder row (columns).
pub fn atom_cosines<T: Real>(learned: &Matrix<T>, truth: &GroundTruth) -> Result<Matrix<f64>> {
    let d = truth.dictionary.cols();
    if learned.cols() != d {
        return Err(Error::Dimension {
            what: "decoder width",
            expected: d,
            actual: learned.cols(),
        });
    }
    if learned.rows() == 0 || truth.concepts() == 0 {
        return Err(Error::Argument("cannot match empty dictionaries".into()));
    }
    let unit = |m: &Matrix<f64>| {
        let mut m = m.clone();
        for i in 0..m.rows() {
            let r = m.row_mut(i);
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter_mut().for_each(|x| *x /= norm);
            }
        }
        m
    };
    let a = unit(&truth.dictionary.cast());
    let b = unit(&learned.cast());
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let c: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            out.set(i, j, c);
        }
    }
    Ok(out)
}

/// Greedy injective matching of atoms to learned decoder rows by descending
/// cosine.
pub fn match_atoms<T: Real>(learned_decoder: &Matrix<T>, truth: &GroundTruth) -> Result<RecoveryScore> {
    let cos = atom_cosines(learned_decoder, truth)?;
    let (m, w) = (cos.rows(), cos.cols());
    let mut pairs: Vec<(f64, usize, usize)> = (0..m)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .map(|(i, j)| (cos.get(i, j), i, j))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut atom_used = vec![false; m];
    let mut neuron_used = vec![false; w];
    let mut matched = Vec::new();
    for (c, i, j) in pairs {
        if atom_used[i] || neuron_used[j] {
            continue;
        }
        atom_used[i] = true;
        neuron_used[j] = true;
        matched.push((i, j, c));
        if matched.len() == m.min(w) {
            break;
        }
    }
    matched.sort_by_key(|p| p.0);
    let total: f64 = matched.iter().map(|p| p.2.max(0.0)).sum();
    Ok(RecoveryScore {
        mean_max_cosine: total / m as f64,
        unmatched_atoms: m - matched.len(),
        matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            name: "small".into(),
            input_dim: 6,
            concepts: 10,
            samples: 50,
            sparsity: 3,
            noise_sigma: 0.0,
            magnitude_min: 0.5,
            magnitude_max: 1.5,
            tree: None,
            seed,
        }
    }

    #[test]
    fn single_concept_rows_are_scaled_atoms() {
        let cfg = ScenarioConfig {
            sparsity: 1,
            ..small(3)
        };
        let (ds, truth) = generate(&cfg).unwrap();
        for n in 0..ds.rows() {
            let active: Vec<usize> = (0..10).filter(|&m| truth.codes.get(n, m) > 0.0).collect();
            assert_eq!(active.len(), 1);
            let c = truth.codes.get(n, active[0]);
            assert!(c > 0.0);
            for (x, a) in ds.data().row(n).iter().zip(truth.dictionary.row(active[0])) {
                assert!((x - c * a).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn noiseless_rows_equal_code_times_dictionary() {
        let (ds, truth) = generate(&small(5)).unwrap();
        for n in 0..ds.rows() {
            for i in 0..6 {
                let expect: f64 = (0..10)
                    .map(|m| truth.codes.get(n, m) as f64 * truth.dictionary.get(m, i) as f64)
                    .sum();
                assert!((ds.data().get(n, i) as f64 - expect).abs() < 1e-6);
            }
            assert_eq!((0..10).filter(|&m| truth.codes.get(n, m) > 0.0).count(), 3);
        }
        for m in 0..10 {
            let norm: f64 = truth.dictionary.row(m).iter().map(|x| (*x as f64).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small(9)).unwrap(), generate(&small(9)).unwrap());
        assert_ne!(generate(&small(9)).unwrap().0, generate(&small(10)).unwrap().0);
    }

    #[test]
    fn infeasible_configs_rejected() {
        assert!(generate(&ScenarioConfig { sparsity: 11, ..small(1) }).is_err());
        assert!(generate(&ScenarioConfig { input_dim: 1, ..small(1) }).is_err());
        let bad_tree = ScenarioConfig {
            tree: Some(TreeShape { depth: 2, branching: 2 }),
            ..small(1)
        };
        assert!(generate(&bad_tree).is_err());
    }

    #[test]
    fn tree_walks_activate_ancestors() {
        let shape = TreeShape { depth: 3, branching: 2 };
        assert_eq!(shape.level_sizes(), vec![2, 4, 8]);
        assert_eq!(shape.cumulative_sizes(), vec![2, 6, 14]);
        let cfg = ScenarioConfig {
            concepts: 14,
            sparsity: 3,
            samples: 40,
            tree: Some(shape),
            ..small(2)
        };
        let (ds, truth) = generate(&cfg).unwrap();
        let tree = truth.concept_tree.as_ref().unwrap();
        assert_eq!(tree.depth_of("c0").unwrap(), 1);
        assert_eq!(tree.depth_of("c13").unwrap(), 3);
        for (n, meta) in ds.meta().iter().enumerate() {
            let leaf = meta.taxon_id.as_deref().unwrap();
            assert_eq!(tree.depth_of(leaf).unwrap(), 3);
            let mut node = Some(leaf);
            while let Some(id) = node.filter(|&id| id != TREE_ROOT) {
                let m: usize = id[1..].parse().unwrap();
                assert!(truth.codes.get(n, m) > 0.0, "ancestor {id} of {leaf} inactive");
                node = tree.parent_of(id).unwrap();
            }
        }
    }

    #[test]
    fn truth_round_trip() {
        let shape = TreeShape { depth: 2, branching: 2 };
        let cfg = ScenarioConfig {
            concepts: 6,
            sparsity: 2,
            tree: Some(shape),
            ..small(4)
        };
        let (_, truth) = generate(&cfg).unwrap();
        let back = GroundTruth::decode(&truth.encode()).unwrap();
        assert_eq!(back.dictionary, truth.dictionary);
        assert_eq!(back.codes, truth.codes);
        assert_eq!(back.noise_sigma, truth.noise_sigma);
        let (t1, t2) = (back.concept_tree.unwrap(), truth.concept_tree.clone().unwrap());
        assert_eq!(lca(&t1, "c2", "c3"), lca(&t2, "c2", "c3"));
        let mut bytes = truth.encode();
        bytes[0] = b'X';
        assert!(matches!(GroundTruth::decode(&bytes), Err(Error::Format(_))));
    }

    fn lca(t: &TaxonomyTree, a: &str, b: &str) -> usize {
        crate::hierarchy::lca_depth(t, a, b).unwrap()
    }

    #[test]
    fn scenario_text_round_trip() {
        for cfg in [ScenarioConfig::standard(), ScenarioConfig::hierarchical()] {
            assert_eq!(ScenarioConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
        assert!(ScenarioConfig::from_text("bogus=1").is_err());
        let c = ScenarioConfig::from_text("samples=100\nseed=9\n").unwrap();
        assert_eq!((c.samples, c.seed, c.input_dim), (100, 9, 64));
    }

    #[test]
    fn matching_permuted_and_orthogonal() {
        let (_, truth) = generate(&small(6)).unwrap();
        let mut order: Vec<usize> = (0..10).rev().collect();
        order.swap(0, 4);
        let permuted = truth.dictionary.select_rows(&order);
        let r = match_atoms(&permuted, &truth).unwrap();
        assert!((r.mean_max_cosine - 1.0).abs() < 1e-6);
        assert_eq!(r.unmatched_atoms, 0);

        // two atoms in the x/y plane, learned rows along z and w
        let truth = GroundTruth {
            dictionary: Matrix::from_rows(&[[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap(),
            codes: Matrix::from_rows(&[[1.0f32, 0.0]]).unwrap(),
            concept_tree: None,
            noise_sigma: 0.0,
        };
        let learned = Matrix::from_rows(&[[0.0f32, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(match_atoms(&learned, &truth).unwrap().mean_max_cosine, 0.0);
    }

    #[test]
    fn similarity_from_codes() {
        let truth = GroundTruth {
            dictionary: Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [0.6, 0.8]]).unwrap(),
            codes: Matrix::from_rows(&[[1.0f32, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 3.0], [2.0, 0.0, 2.0]]).unwrap(),
            concept_tree: None,
            noise_sigma: 0.0,
        };
        let s = ground_truth_similarity(&truth).unwrap().to_dense(2);
        assert!((s.get(0, 1) - 1.0).abs() < 1e-7);
        assert_eq!(s.get(0, 2), 0.0);
        // (1,2,0)·(2,0,2) / (√5 · √8)
        assert!((s.get(0, 3) - 2.0 / (5f64.sqrt() * 8f64.sqrt())).abs() < 1e-7);

        let zero = GroundTruth {
            codes: Matrix::from_rows(&[[0.0f32, 0.0, 0.0]]).unwrap(),
            ..truth
        };
        assert!(ground_truth_similarity(&zero).is_err());
    }
}
