//! Concept hierarchy analysis against a taxonomy tree.
//!
//! Each neuron is mapped to the mean pairwise lowest-common-ancestor depth of
//! the taxa of its top-activating samples. Averaging that depth per Matryoshka
//! level shows whether early (coarse) levels hold more general concepts than
//! later ones. Pairwise Jaccard overlap of top-activating sets measures how
//! unique the learned concepts are.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::monosemanticity::MsReport;

/// Rooted tree over taxon ids; the root has depth 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyTree {
    ids: Vec<String>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    index: HashMap<String, usize>,
    level_names: Vec<String>,
}

impl TaxonomyTree {
    /// Builds a tree from `(child, parent)` edges. The single node that never
    /// appears as a child is the root.
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)]) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut ids = Vec::new();
        let mut intern = |id: &str, ids: &mut Vec<String>| -> usize {
            *index.entry(id.to_string()).or_insert_with(|| {
                ids.push(id.to_string());
                ids.len() - 1
            })
        };
        let mut parent_of: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (c, p) in edges {
            let c = intern(c.as_ref(), &mut ids);
            let p = intern(p.as_ref(), &mut ids);
            if c == p {
                return Err(Error::Format(format!("node {:?} is its own parent", ids[c])));
            }
            parent_of.push((c, p));
        }
        let n = ids.len();
        let mut parent = vec![None; n];
        for (c, p) in parent_of {
            if parent[c].replace(p).is_some() {
                return Err(Error::Format(format!("node {:?} has more than one parent", ids[c])));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Format(format!(
                "taxonomy must have exactly one root, found {}",
                roots.len()
            )));
        }

        const UNKNOWN: usize = usize::MAX;
        let mut depth = vec![UNKNOWN; n];
        depth[roots[0]] = 0;
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            while depth[cur] == UNKNOWN {
                path.push(cur);
                if path.len() > n {
                    return Err(Error::Format("taxonomy contains a cycle".into()));
                }
                cur = parent[cur].expect("only the root lacks a parent");
            }
            let mut d = depth[cur];
            for &node in path.iter().rev() {
                d += 1;
                depth[node] = d;
            }
        }
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            ids,
            parent,
            depth,
            index,
            level_names: Vec::new(),
        })
    }

    /// Parses a whitespace-separated `child parent` edge list (`#` comments).
    pub fn parse_edges(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(Error::Format(format!(
                    "edge list line {}: expected `child parent`, got {line:?}",
                    ln + 1
                )));
            }
            edges.push((f[0], f[1]));
        }
        Self::from_edges(&edges)
    }

    /// Attaches level names from `depth name` lines.
    pub fn with_level_names(mut self, text: &str) -> Result<Self> {
        let mut names = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (d, name) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Format(format!("bad level-name line {line:?}")))?;
            let d: usize = d
                .parse()
                .map_err(|_| Error::Format(format!("bad depth in level-name line {line:?}")))?;
            names.insert(d, name.trim().to_string());
        }
        self.level_names = (0..=self.height())
            .map(|d| names.get(&d).cloned().unwrap_or_else(|| format!("depth{d}")))
            .collect();
        Ok(self)
    }

    pub fn read(edges: impl AsRef<Path>, levels: Option<&Path>) -> Result<Self> {
        let tree = Self::parse_edges(&std::fs::read_to_string(edges)?)?;
        match levels {
            Some(p) => tree.with_level_names(&std::fs::read_to_string(p)?),
            None => Ok(tree),
        }
    }

    pub fn to_edge_text(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                writeln!(out, "{}\t{}", self.ids[i], self.ids[*p]).unwrap();
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    fn resolve(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Argument(format!("unknown taxon id {id:?}")))
    }

    pub fn depth_of(&self, id: &str) -> Result<usize> {
        Ok(self.depth[self.resolve(id)?])
    }

    pub fn level_name(&self, depth: usize) -> Option<&str> {
        self.level_names.get(depth).map(String::as_str)
    }

    pub fn parent_of(&self, id: &str) -> Result<Option<&str>> {
        Ok(self.parent[self.resolve(id)?].map(|p| self.ids[p].as_str()))
    }

    fn lca_index(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }
}

/// Depth of the deepest common ancestor of two taxa.
pub fn lca_depth(tree: &TaxonomyTree, a: &str, b: &str) -> Result<usize> {
    let (a, b) = (tree.resolve(a)?, tree.resolve(b)?);
    Ok(tree.depth[tree.lca_index(a, b)])
}

#[derive(Debug, Clone, PartialEq)]
pub enum NeuronDepth {
    Mean(f64),
    Excluded(String),
}

impl NeuronDepth {
    pub fn value(&self) -> Option<f64> {
        match self {
            NeuronDepth::Mean(d) => Some(*d),
            NeuronDepth::Excluded(_) => None,
        }
    }
}

/// Mean LCA depth over all unordered pairs of the given taxa. Samples without
/// a taxon are dropped; fewer than two remaining excludes the neuron.
pub fn neuron_lca_depth<S: AsRef<str>>(tree: &TaxonomyTree, taxa: &[Option<S>]) -> Result<NeuronDepth> {
    let nodes = taxa
        .iter()
        .flatten()
        .map(|t| tree.resolve(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    if nodes.len() < 2 {
        return Ok(NeuronDepth::Excluded(format!(
            "{} sample(s) with a taxon, need at least 2",
            nodes.len()
        )));
    }
    let mut sum = 0usize;
    let mut pairs = 0usize;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            sum += tree.depth[tree.lca_index(nodes[i], nodes[j])];
            pairs += 1;
        }
    }
    Ok(NeuronDepth::Mean(sum as f64 / pairs as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    /// Half-open neuron index range `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Neurons with a depth.
    pub included: usize,
    pub avg_depth: Option<f64>,
    pub avg_ms: f64,
    pub max_ms: f64,
    pub min_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyReport {
    pub neuron_depths: Vec<Option<f64>>,
    pub levels: Vec<LevelStats>,
    pub excluded: Vec<(usize, String)>,
}

impl HierarchyReport {
    /// Level-by-column table: depth row followed by MS avg/max/min rows.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let cols = |f: &dyn Fn(&LevelStats) -> String| {
            self.levels.iter().map(f).collect::<Vec<_>>().join("\t")
        };
        writeln!(out, "Level\t{}", cols(&|l| l.level.to_string())).unwrap();
        writeln!(out, "Neurons\t{}", cols(&|l| format!("{}-{}", l.start, l.end))).unwrap();
        writeln!(
            out,
            "Depth\t{}",
            cols(&|l| l.avg_depth.map_or("-".into(), |d| format!("{d:.2}")))
        )
        .unwrap();
        writeln!(out, "MS Avg.\t{}", cols(&|l| format!("{:.2}", l.avg_ms))).unwrap();
        writeln!(out, "MS Max.\t{}", cols(&|l| format!("{:.2}", l.max_ms))).unwrap();
        writeln!(out, "MS Min.\t{}", cols(&|l| format!("{:.2}", l.min_ms))).unwrap();
        for (k, why) in &self.excluded {
            writeln!(out, "# excluded neuron {k}: {why}").unwrap();
        }
        out
    }
}

/// Aggregates per-neuron depths and MS over the Matryoshka levels
/// `(M_{ℓ−1}, M_ℓ]`. Degenerate neurons are left out of the MS columns.
pub fn level_summary(groups: &[usize], depths: &[NeuronDepth], ms: &MsReport) -> Result<HierarchyReport> {
    if groups.is_empty() || groups[0] == 0 || groups.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!("groups must be strictly increasing and positive, got {groups:?}")));
    }
    let width = *groups.last().unwrap();
    check_dim("neuron depths", width, depths.len())?;
    check_dim("MS scores", width, ms.scores.len())?;

    let mut levels = Vec::with_capacity(groups.len());
    let mut start = 0;
    for (level, &end) in groups.iter().enumerate() {
        let ds: Vec<f64> = depths[start..end].iter().filter_map(NeuronDepth::value).collect();
        let scores: Vec<f64> = (start..end)
            .filter(|&k| !ms.degenerate[k])
            .map(|k| ms.scores[k])
            .collect();
        let (avg_ms, max_ms, min_ms) = if scores.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                scores.iter().sum::<f64>() / scores.len() as f64,
                scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                scores.iter().copied().fold(f64::INFINITY, f64::min),
            )
        };
        levels.push(LevelStats {
            level,
            start,
            end,
            included: ds.len(),
            avg_depth: (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64),
            avg_ms,
            max_ms,
            min_ms,
        });
        start = end;
    }
    let excluded = depths
        .iter()
        .enumerate()
        .filter_map(|(k, d)| match d {
            NeuronDepth::Excluded(why) => Some((k, why.clone())),
            NeuronDepth::Mean(_) => None,
        })
        .collect();
    Ok(HierarchyReport {
        neuron_depths: depths.iter().map(NeuronDepth::value).collect(),
        levels,
        excluded,
    })
}

pub const JACCARD_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub included: usize,
    /// Neurons whose set did not have the required size.
    pub excluded: Vec<usize>,
    pub total_pairs: u64,
    pub nonzero_pairs: u64,
    pub above_half_pairs: u64,
    /// Counts over `[0, 0.1), [0.1, 0.2), …, [0.9, 1.0]`.
    pub histogram: [u64; JACCARD_BINS],
}

impl UniquenessReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "included_neurons={}", self.included).unwrap();
        writeln!(out, "excluded_neurons={}", self.excluded.len()).unwrap();
        writeln!(out, "total_pairs={}", self.total_pairs).unwrap();
        writeln!(out, "pairs_j_gt_0={}", self.nonzero_pairs).unwrap();
        writeln!(out, "pairs_j_gt_0.5={}", self.above_half_pairs).unwrap();
        for (i, c) in self.histogram.iter().enumerate() {
            let hi = if i + 1 == JACCARD_BINS { "]" } else { ")" };
            writeln!(out, "J[{:.1},{:.1}{hi}\t{c}", i as f64 / 10.0, (i + 1) as f64 / 10.0).unwrap();
        }
        out
    }
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    let inter = a.iter().filter(|x| b.binary_search(x).is_ok()).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

fn bin_of(j: f64) -> usize {
    ((j * JACCARD_BINS as f64) as usize).min(JACCARD_BINS - 1)
}

/// Pairwise Jaccard overlap of per-neuron top-activating sets. Sets without
/// exactly `set_size` distinct members are excluded. Only pairs that share a
/// sample are visited; all others have `J = 0`.
pub fn jaccard_uniqueness(sets: &[Vec<usize>], set_size: usize) -> UniquenessReport {
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for (k, s) in sets.iter().enumerate() {
        let mut s = s.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() == set_size {
            included.push(s);
        } else {
            excluded.push(k);
        }
    }
    let w = included.len() as u64;
    let total_pairs = w * w.saturating_sub(1) / 2;

    let mut by_sample: HashMap<usize, Vec<u32>> = HashMap::new();
    for (i, s) in included.iter().enumerate() {
        for &x in s {
            by_sample.entry(x).or_default().push(i as u32);
        }
    }
    let mut shared: HashMap<(u32, u32), u32> = HashMap::new();
    for neurons in by_sample.values() {
        for (a, &i) in neurons.iter().enumerate() {
            for &j in &neurons[a + 1..] {
                *shared.entry((i, j)).or_default() += 1;
            }
        }
    }

    let mut histogram = [0u64; JACCARD_BINS];
    let mut above_half = 0;
    for (&(i, j), &inter) in &shared {
        let union = included[i as usize].len() + included[j as usize].len() - inter as usize;
        let jac = inter as f64 / union as f64;
        histogram[bin_of(jac)] += 1;
        if jac > 0.5 {
            above_half += 1;
        }
    }
    let nonzero = shared.len() as u64;
    histogram[0] += total_pairs - nonzero;
    UniquenessReport {
        included: included.len(),
        excluded,
        total_pairs,
        nonzero_pairs: nonzero,
        above_half_pairs: above_half,
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// root → {A, B}, A → {a1, a2}, B → {b1}
    fn toy() -> TaxonomyTree {
        TaxonomyTree::parse_edges("A root\nB root\na1 A\na2 A\nb1 B\n").unwrap()
    }

    /// Path-intersection oracle: deepest shared node on the two root paths.
    fn lca_by_paths(t: &TaxonomyTree, a: &str, b: &str) -> usize {
        let path = |x: &str| {
            let mut p = vec![x.to_string()];
            while let Some(up) = t.parent_of(p.last().unwrap()).unwrap() {
                p.push(up.to_string());
            }
            p
        };
        let pa = path(a);
        let pb = path(b);
        pa.iter()
            .filter(|n| pb.contains(n))
            .map(|n| t.depth_of(n).unwrap())
            .max()
            .unwrap()
    }

    #[test]
    fn lca_examples() {
        let t = toy();
        assert_eq!(lca_depth(&t, "a1", "a1").unwrap(), 2);
        assert_eq!(lca_depth(&t, "a1", "b1").unwrap(), 0);
        assert_eq!(lca_depth(&t, "a1", "a2").unwrap(), 1);
        let ids = ["root", "A", "B", "a1", "a2", "b1"];
        for a in ids {
            for b in ids {
                let d = lca_depth(&t, a, b).unwrap();
                assert_eq!(d, lca_by_paths(&t, a, b));
                assert_eq!(d, lca_depth(&t, b, a).unwrap());
                assert!(d <= t.depth_of(a).unwrap().min(t.depth_of(b).unwrap()));
            }
        }
        assert!(matches!(lca_depth(&t, "a1", "zzz"), Err(Error::Argument(_))));
    }

    #[test]
    fn tree_validation() {
        assert!(TaxonomyTree::parse_edges("a r\nb s\n").is_err());
        assert!(TaxonomyTree::parse_edges("a r\na s\n").is_err());
        assert!(TaxonomyTree::parse_edges("a b\nb a\nc r\n").is_err());
        assert!(TaxonomyTree::parse_edges("a r x\n").is_err());
        assert_eq!(toy().height(), 2);
    }

    #[test]
    fn level_names_default_and_given() {
        let t = toy().with_level_names("0 life\n1 kingdom\n").unwrap();
        assert_eq!(t.level_name(1), Some("kingdom"));
        assert_eq!(t.level_name(2), Some("depth2"));
    }

    #[test]
    fn neuron_depth_examples() {
        let t = toy();
        let same: Vec<Option<&str>> = vec![Some("a1"); 16];
        assert_eq!(neuron_lca_depth(&t, &same).unwrap(), NeuronDepth::Mean(2.0));
        assert_eq!(
            neuron_lca_depth(&t, &[Some("a1"), Some("a2")]).unwrap(),
            NeuronDepth::Mean(1.0)
        );
        // pairs: (a1,a2)=1, (a1,a1')=2, (a2,a1')=1 → 4/3
        let d = neuron_lca_depth(&t, &[Some("a1"), Some("a2"), Some("a1")]).unwrap();
        assert!((d.value().unwrap() - 4.0 / 3.0).abs() < 1e-12);
        let excluded = neuron_lca_depth(&t, &[Some("a1"), None, None]).unwrap();
        assert!(matches!(excluded, NeuronDepth::Excluded(_)));
    }

    #[test]
    fn three_taxa_with_pairwise_depths_1_1_3() {
        // r → A → B → C → {c1, c2}; A → D → d1
        let t = TaxonomyTree::parse_edges("A r\nB A\nC B\nc1 C\nc2 C\nD A\nd1 D\n").unwrap();
        let taxa = [Some("c1"), Some("c2"), Some("d1")];
        let mut pair_depths = Vec::new();
        for i in 0..3 {
            for j in i + 1..3 {
                pair_depths.push(lca_by_paths(&t, taxa[i].unwrap(), taxa[j].unwrap()));
            }
        }
        pair_depths.sort_unstable();
        assert_eq!(pair_depths, vec![1, 1, 3]);
        let d = neuron_lca_depth(&t, &taxa).unwrap();
        assert!((d.value().unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn level_summary_hand_averages() {
        let depths = vec![
            NeuronDepth::Mean(1.0),
            NeuronDepth::Mean(2.0),
            NeuronDepth::Mean(3.0),
            NeuronDepth::Excluded("dead".into()),
            NeuronDepth::Mean(4.0),
        ];
        let ms = MsReport::from_scores(vec![0.2, 0.4, 0.5, 0.0, 0.9], vec![false, false, false, true, false]);
        let r = level_summary(&[2, 5], &depths, &ms).unwrap();
        assert_eq!(r.levels.len(), 2);
        assert_eq!(r.levels[0].avg_depth, Some(1.5));
        assert!((r.levels[0].avg_ms - 0.3).abs() < 1e-12);
        assert_eq!(r.levels[1].avg_depth, Some(3.5));
        assert_eq!((r.levels[1].max_ms, r.levels[1].min_ms), (0.9, 0.5));
        assert!((r.levels[1].avg_ms - 0.7).abs() < 1e-12);
        assert_eq!(r.excluded, vec![(3, "dead".to_string())]);
        assert_eq!(r.levels.iter().map(|l| l.end - l.start).sum::<usize>(), 5);

        let one = level_summary(&[5], &depths, &ms).unwrap();
        assert_eq!(one.levels[0].avg_depth, Some(2.5));
        assert!(r.to_text().starts_with("Level\t0\t1\n"));
    }

    #[test]
    fn level_summary_rejects_mismatch() {
        let ms = MsReport::from_scores(vec![0.0; 3], vec![false; 3]);
        let depths = vec![NeuronDepth::Mean(1.0); 3];
        assert!(level_summary(&[2, 4], &depths, &ms).is_err());
        assert!(level_summary(&[2, 2, 3], &depths, &ms).is_err());
    }

    #[test]
    fn jaccard_basics() {
        let a: Vec<usize> = (0..16).collect();
        let b: Vec<usize> = (100..116).collect();
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &b), 0.0);
        let c: Vec<usize> = (8..24).collect();
        assert!((jaccard(&a, &c) - 8.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn uniqueness_matches_brute_force() {
        let sets: Vec<Vec<usize>> = (0..12)
            .map(|k| (0..4).map(|i| (k * 3 + i * 5) % 23).collect())
            .chain(std::iter::once(vec![1, 2]))
            .collect();
        let r = jaccard_uniqueness(&sets, 4);
        assert_eq!(r.excluded, vec![12]);
        assert_eq!(r.total_pairs, 66);
        let mut nonzero = 0;
        let mut half = 0;
        let mut hist = [0u64; JACCARD_BINS];
        for i in 0..12 {
            for j in i + 1..12 {
                let jac = jaccard(&sets[i], &sets[j]);
                nonzero += (jac > 0.0) as u64;
                half += (jac > 0.5) as u64;
                hist[bin_of(jac)] += 1;
            }
        }
        assert_eq!(r.nonzero_pairs, nonzero);
        assert_eq!(r.above_half_pairs, half);
        assert_eq!(r.histogram, hist);
        assert_eq!(r.histogram.iter().sum::<u64>(), r.total_pairs);
    }
}
