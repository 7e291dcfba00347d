//! Held-out evaluation of a trained model on a split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderInput;
use crate::error::{NoradError, Result};
use crate::graph::{isolated_nodes, AttributedGraph, Edge, EdgeSplit, NormalizedAdjacency};
use crate::metrics::{hungarian_accuracy, kmeans, link_report, nmi, roc_auc, ScoredEdges};
use crate::rectify::{rectify, RectifyConfig, RectifyOutcome};
use crate::tensor::Tensor;
use crate::trainer::Model;

pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ap: f64,
    pub hits: BTreeMap<String, Option<f64>>,
    /// Present when the graph carries labels.
    pub nmi: Option<f64>,
    pub acc: Option<f64>,
    pub clusters: Option<usize>,
}

/// `Z°` computed on the training graph.
pub fn representation(model: &Model, graph: &AttributedGraph, train_edges: &[Edge]) -> Result<Tensor> {
    let adj = NormalizedAdjacency::new(train_edges, graph.n())?;
    model.representation(&EncoderInput::new(&adj, graph.features())?)
}

/// Number of distinct values in `labels`.
pub fn class_count(labels: &[usize]) -> usize {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// NMI and matched accuracy of k-means on `z` against `labels`.
pub fn cluster_scores(z: &Tensor, labels: &[usize], clusters: usize, seed: u64) -> Result<(f64, f64)> {
    let assignment = kmeans(z, clusters, seed, KMEANS_MAX_ITERS)?;
    Ok((nmi(&assignment.labels, labels)?, hungarian_accuracy(&assignment.labels, labels)?))
}

/// Test-edge link metrics, plus clustering scores when the graph has
/// labels. `clusters` defaults to the number of label classes.
pub fn evaluate(
    model: &Model,
    graph: &AttributedGraph,
    split: &EdgeSplit,
    clusters: Option<usize>,
) -> Result<(EvalReport, Tensor)> {
    let z = representation(model, graph, &split.train_edges)?;
    let b = model.blockmodel()?;
    let link = link_report(&ScoredEdges::from_split(&z, &b, &split.test_pos, &split.test_neg)?)?;
    let (nmi, acc, clusters) = match graph.labels() {
        Some(labels) => {
            let c = clusters.unwrap_or_else(|| class_count(labels));
            let (n, a) = cluster_scores(&z, labels, c, model.config.seed)?;
            (Some(n), Some(a), Some(c))
        }
        None => (None, None, None),
    };
    Ok((
        EvalReport {
            auc: link.auc,
            ap: link.ap,
            hits: link.hits,
            nmi,
            acc,
            clusters,
        },
        z,
    ))
}

/// Validation AUC of the current model, the score used for best-snapshot
/// selection.
pub fn validation_auc(model: &Model, input: &EncoderInput, split: &EdgeSplit) -> Result<f64> {
    let z = model.representation(input)?;
    let b = model.blockmodel()?;
    roc_auc(&ScoredEdges::from_split(&z, &b, &split.val_pos, &split.val_neg)?)
}

/// Link AUC restricted to held-out pairs touching an isolated node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolatedLink {
    pub isolated_nodes: usize,
    pub positives: usize,
    pub negatives: usize,
    pub auc_before: f64,
    pub auc_after: f64,
}

pub struct RectifyStudy {
    pub outcome: RectifyOutcome,
    pub z_before: Tensor,
    /// `None` when the test pairs at isolated nodes lack a positive or a
    /// negative.
    pub isolated: Option<IsolatedLink>,
}

/// Held-out pairs with at least one endpoint in `nodes`.
pub fn pairs_touching(pairs: &[Edge], nodes: &[usize], n: usize) -> Vec<Edge> {
    let mut mark = vec![false; n];
    for &i in nodes {
        mark[i] = true;
    }
    pairs.iter().copied().filter(|&(i, j)| mark[i] || mark[j]).collect()
}

/// Rectifies `Z°` and scores test pairs at isolated nodes before and after.
pub fn rectification_study(
    model: &Model,
    graph: &AttributedGraph,
    split: &EdgeSplit,
    config: &RectifyConfig,
) -> Result<RectifyStudy> {
    let atn = model
        .atn()?
        .ok_or_else(|| NoradError::Contract(format!("mode {} has no attribute decoder to rectify with", model.config.mode)))?;
    let z = representation(model, graph, &split.train_edges)?;
    let outcome = rectify(&z, graph, &split.train_edges, &atn, config)?;
    let isolated = isolated_nodes(&split.train_edges, graph.n());
    let pos = pairs_touching(&split.test_pos, &isolated, graph.n());
    let neg = pairs_touching(&split.test_neg, &isolated, graph.n());
    let link = if pos.is_empty() || neg.is_empty() {
        None
    } else {
        let b = model.blockmodel()?;
        Some(IsolatedLink {
            isolated_nodes: isolated.len(),
            positives: pos.len(),
            negatives: neg.len(),
            auc_before: roc_auc(&ScoredEdges::from_split(&z, &b, &pos, &neg)?)?,
            auc_after: roc_auc(&ScoredEdges::from_split(&outcome.z, &b, &pos, &neg)?)?,
        })
    };
    Ok(RectifyStudy {
        outcome,
        z_before: z,
        isolated: link,
    })
}
