use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{canonical, AttributedGraph, Edge, GraphFormat};
use crate::error::{NoradError, Result};
use crate::rng;

/// Edge partition for link prediction.
///
/// Counts: with `m` edges, `round(train_ratio · m)` train edges; of the
/// removed `r` edges, `floor(val_fraction · r)` go to validation and the
/// rest to test. Negatives match the positive counts, are drawn uniformly
/// from node pairs that are not edges of the full graph, and are pairwise
/// distinct across both negative sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train_edges: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub train_ratio: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

pub fn split_edges(
    g: &AttributedGraph,
    train_ratio: f64,
    val_fraction_of_removed: f64,
    seed: u64,
) -> Result<EdgeSplit> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(NoradError::Contract(format!(
            "train ratio must lie in (0, 1), got {train_ratio}"
        )));
    }
    if !(0.0..=1.0).contains(&val_fraction_of_removed) {
        return Err(NoradError::Contract(format!(
            "validation fraction must lie in [0, 1], got {val_fraction_of_removed}"
        )));
    }
    let mut rng = rng::stream(seed, rng::SPLIT);
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);

    let m = edges.len();
    let n_train = ((train_ratio * m as f64).round() as usize).min(m);
    let removed = m - n_train;
    let n_val = (val_fraction_of_removed * removed as f64 + 1e-9).floor() as usize;

    let mut train_edges = edges[..n_train].to_vec();
    let mut val_pos = edges[n_train..n_train + n_val].to_vec();
    let mut test_pos = edges[n_train + n_val..].to_vec();

    let negatives = sample_negatives(g, n_val + test_pos.len(), &mut rng)?;
    let mut val_neg = negatives[..n_val].to_vec();
    let mut test_neg = negatives[n_val..].to_vec();
    for list in [
        &mut train_edges,
        &mut val_pos,
        &mut test_pos,
        &mut val_neg,
        &mut test_neg,
    ] {
        list.sort_unstable();
    }
    Ok(EdgeSplit {
        train_edges,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
        train_ratio,
        val_fraction: val_fraction_of_removed,
        seed,
    })
}

fn sample_negatives<R: Rng>(g: &AttributedGraph, count: usize, rng: &mut R) -> Result<Vec<Edge>> {
    let n = g.n();
    let pairs = n * n.saturating_sub(1) / 2;
    let available = pairs - g.edges().len();
    if count > available {
        return Err(NoradError::Capacity(format!(
            "need {count} negative pairs but only {available} non-edges exist"
        )));
    }
    let positives = g.edge_set();
    if count * 2 > available {
        // dense regime: enumerate the complement and shuffle
        let mut all: Vec<Edge> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|e| !positives.contains(e))
            .collect();
        all.shuffle(rng);
        all.truncate(count);
        return Ok(all);
    }
    let mut drawn = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let e = canonical(i, j);
        if positives.contains(&e) || !drawn.insert(e) {
            continue;
        }
        out.push(e);
    }
    Ok(out)
}

pub const SPLIT_MANIFEST_VERSION: u32 = 1;

/// Where the graph behind a split came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSource {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub format: GraphFormat,
    pub labels: Option<PathBuf>,
    /// SHA-256 of each input file, hex.
    pub hashes: Vec<String>,
}

/// JSON document listing every edge list of a split, enough to reproduce
/// it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub n: usize,
    pub source: SplitSource,
    pub split: EdgeSplit,
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NoradError::io(path, e))?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        if m.version != SPLIT_MANIFEST_VERSION {
            return Err(NoradError::Compatibility(format!(
                "split manifest version {} (expected {SPLIT_MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| NoradError::io(path, e))
    }

    pub fn load_graph(&self) -> Result<AttributedGraph> {
        let g = super::load_graph(
            &self.source.edges,
            &self.source.features,
            self.source.format,
            self.source.labels.as_deref(),
        )?;
        if g.n() != self.n {
            return Err(NoradError::Consistency(format!(
                "graph has {} nodes but the split was made for {}",
                g.n(),
                self.n
            )));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn ring_with_chords(n: usize, m: usize) -> AttributedGraph {
        let mut edges = HashSet::new();
        let mut k = 1;
        while edges.len() < m {
            for i in 0..n {
                if edges.len() == m {
                    break;
                }
                edges.insert(canonical(i, (i + k) % n));
            }
            k += 1;
        }
        AttributedGraph::new(n, edges.into_iter().collect(), Tensor::zeros(&[n, 1])).unwrap()
    }

    #[test]
    fn counts_follow_rounding_rule() {
        let g = ring_with_chords(60, 100);
        let s = split_edges(&g, 0.8, 1.0 / 3.0, 3).unwrap();
        assert_eq!(s.train_edges.len(), 80);
        assert_eq!(s.val_pos.len(), 6);
        assert_eq!(s.test_pos.len(), 14);
        assert_eq!(s.val_neg.len(), 6);
        assert_eq!(s.test_neg.len(), 14);
    }

    #[test]
    fn partition_and_negative_purity() {
        let g = ring_with_chords(40, 90);
        let s = split_edges(&g, 0.6, 1.0 / 3.0, 11).unwrap();
        let mut all: Vec<Edge> = s
            .train_edges
            .iter()
            .chain(&s.val_pos)
            .chain(&s.test_pos)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, g.edges());
        let pos = g.edge_set();
        let mut negs = HashSet::new();
        for e in s.val_neg.iter().chain(&s.test_neg) {
            assert!(!pos.contains(e));
            assert!(negs.insert(*e), "duplicate negative {e:?}");
        }
    }

    #[test]
    fn same_seed_same_split() {
        let g = ring_with_chords(30, 50);
        assert_eq!(
            split_edges(&g, 0.85, 1.0 / 3.0, 5).unwrap(),
            split_edges(&g, 0.85, 1.0 / 3.0, 5).unwrap()
        );
        assert_ne!(
            split_edges(&g, 0.85, 1.0 / 3.0, 5).unwrap().train_edges,
            split_edges(&g, 0.85, 1.0 / 3.0, 6).unwrap().train_edges
        );
    }

    #[test]
    fn dense_graph_capacity_error() {
        let n = 5;
        let edges: Vec<Edge> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&e| e != (0, 1))
            .collect();
        let g = AttributedGraph::new(n, edges, Tensor::zeros(&[n, 1])).unwrap();
        assert!(matches!(
            split_edges(&g, 0.5, 0.5, 1),
            Err(NoradError::Capacity(_))
        ));
    }

    #[test]
    fn invalid_ratio() {
        let g = ring_with_chords(10, 10);
        assert!(split_edges(&g, 1.0, 0.5, 1).is_err());
        assert!(split_edges(&g, 0.0, 0.5, 1).is_err());
    }
}
