//! Attributed graphs: storage, file formats, edge splits and the
//! normalized adjacency operator used by the encoder.

mod adjacency;
mod io;
mod split;

pub use adjacency::NormalizedAdjacency;
pub use io::{
    load_cora_content, load_edge_list, load_features, load_graph, load_labels, write_edge_list,
    write_features, write_labels, write_node_map, EdgeList, FeatureTable, GraphFormat, NodeIndex,
};
pub use split::{split_edges, EdgeSplit, SplitManifest, SplitSource, SPLIT_MANIFEST_VERSION};

use std::collections::HashSet;

use crate::error::{NoradError, Result};
use crate::tensor::Tensor;

/// Undirected edge stored with `i < j`.
pub type Edge = (usize, usize);

pub fn canonical(i: usize, j: usize) -> Edge {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributedGraph {
    n: usize,
    edges: Vec<Edge>,
    features: Tensor,
    labels: Option<Vec<usize>>,
    label_names: Option<Vec<String>>,
    node_names: Option<Vec<String>>,
}

impl AttributedGraph {
    /// Validates and canonicalizes: edges are stored sorted with `i < j`.
    pub fn new(n: usize, edges: Vec<Edge>, features: Tensor) -> Result<Self> {
        if n == 0 {
            return Err(NoradError::Contract("graph needs at least one node".into()));
        }
        if !features.is_matrix() || features.rows() != n {
            return Err(NoradError::dim("graph features", features.shape(), &[n]));
        }
        if let Some(bad) = features.data().iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(NoradError::Domain(format!("non-binary feature value {bad}")));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut canon = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(NoradError::Consistency(format!(
                    "edge ({i}, {j}) references a node outside [0, {n})"
                )));
            }
            if i == j {
                return Err(NoradError::Consistency(format!("self-loop at node {i}")));
            }
            let e = canonical(i, j);
            if !seen.insert(e) {
                return Err(NoradError::Consistency(format!("duplicate edge {e:?}")));
            }
            canon.push(e);
        }
        canon.sort_unstable();
        Ok(AttributedGraph {
            n,
            edges: canon,
            features,
            labels: None,
            label_names: None,
            node_names: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>, names: Option<Vec<String>>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(NoradError::Consistency(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        self.label_names = names;
        Ok(self)
    }

    pub fn with_node_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n {
            return Err(NoradError::Consistency(format!(
                "{} node names for {} nodes",
                names.len(),
                self.n
            )));
        }
        self.node_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn node_names(&self) -> Option<&[String]> {
        self.node_names.as_deref()
    }

    pub fn edge_set(&self) -> HashSet<Edge> {
        self.edges.iter().copied().collect()
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        let mut g = AttributedGraph::new(self.n, edges, self.features.clone())?;
        g.labels = self.labels.clone();
        g.label_names = self.label_names.clone();
        g.node_names = self.node_names.clone();
        Ok(g)
    }
}

/// Nodes with no incident edge, ascending.
pub fn isolated_nodes(edges: &[Edge], n: usize) -> Vec<usize> {
    let mut degree = vec![0usize; n];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    (0..n).filter(|&i| degree[i] == 0).collect()
}

/// Dense symmetric 0/1 adjacency matrix.
pub fn dense_adjacency(edges: &[Edge], n: usize) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for &(i, j) in edges {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    a
}
