//! Post-hoc refinement of node representations by plain gradient ascent on
//! each node's attribute log-likelihood under a frozen ATN.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compute;
use crate::decoder::{atn::rectification_gradient, AtnParams};
use crate::error::{NoradError, Result};
use crate::graph::{isolated_nodes, AttributedGraph, Edge};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RectifyConfig {
    pub epsilon: f64,
    pub iterations: usize,
    /// Nodes to refine; the isolated nodes of the training graph when unset.
    pub targets: Option<Vec<usize>>,
    /// Only update coordinates that are already nonzero.
    pub preserve_mask: bool,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        RectifyConfig {
            epsilon: 0.001,
            iterations: 50,
            targets: None,
            preserve_mask: false,
        }
    }
}

impl RectifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(NoradError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Log-likelihood of one node before and after every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub node: usize,
    /// `iterations + 1` values; shorter when the node failed.
    pub log_likelihood: Vec<f64>,
    pub failure: Option<String>,
}

impl NodeTrace {
    pub fn before(&self) -> Option<f64> {
        self.log_likelihood.first().copied()
    }

    pub fn after(&self) -> Option<f64> {
        self.log_likelihood.last().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RectifyOutcome {
    pub z: Tensor,
    pub traces: Vec<NodeTrace>,
}

impl RectifyOutcome {
    /// Fraction of steps, over all successful traces, that did not lower
    /// the log-likelihood.
    pub fn ascent_fraction(&self) -> f64 {
        let (mut up, mut total) = (0usize, 0usize);
        for t in self.traces.iter().filter(|t| t.failure.is_none()) {
            for w in t.log_likelihood.windows(2) {
                total += 1;
                if w[1] >= w[0] {
                    up += 1;
                }
            }
        }
        if total == 0 {
            1.0
        } else {
            up as f64 / total as f64
        }
    }
}

fn ascend(z0: &[f64], x: &[f64], atn: &AtnParams, config: &RectifyConfig) -> std::result::Result<(Vec<f64>, Vec<f64>), (Vec<f64>, String)> {
    if !z0.iter().all(|v| v.is_finite()) {
        return Err((Vec::new(), "non-finite starting representation".into()));
    }
    let mut z = z0.to_vec();
    let mut trace = Vec::with_capacity(config.iterations + 1);
    for step in 0..=config.iterations {
        let (ll, grad) = rectification_gradient(&z, x, atn).map_err(|e| (trace.clone(), e.to_string()))?;
        if !ll.is_finite() {
            return Err((trace, format!("non-finite log-likelihood {ll} at step {step}")));
        }
        trace.push(ll);
        if step == config.iterations {
            break;
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err((trace, format!("non-finite gradient at step {step}")));
        }
        for ((zk, g), z0k) in z.iter_mut().zip(&grad).zip(z0) {
            if !config.preserve_mask || *z0k != 0.0 {
                *zk += config.epsilon * g;
            }
        }
    }
    Ok((z, trace))
}

/// Runs `config.iterations` ascent steps on every target row of `z`.
/// Non-target rows are copied unchanged; a node whose likelihood or
/// gradient turns non-finite keeps its original row and records why.
pub fn rectify(
    z: &Tensor,
    graph: &AttributedGraph,
    train_edges: &[Edge],
    atn: &AtnParams,
    config: &RectifyConfig,
) -> Result<RectifyOutcome> {
    config.validate()?;
    let n = graph.n();
    if z.rows() != n || z.cols() != atn.k() {
        return Err(NoradError::dim("rectify", z.shape(), &[n, atn.k()]));
    }
    let targets = match &config.targets {
        Some(t) => t.clone(),
        None => isolated_nodes(train_edges, n),
    };
    if let Some(&bad) = targets.iter().find(|&&i| i >= n) {
        return Err(NoradError::Index(format!("rectify target {bad} out of range for {n} nodes")));
    }
    let x = graph.features();
    let run = |&i: &usize| {
        let (row, trace) = match ascend(z.row(i), x.row(i), atn, config) {
            Ok((row, ll)) => (
                row,
                NodeTrace {
                    node: i,
                    log_likelihood: ll,
                    failure: None,
                },
            ),
            Err((ll, why)) => (
                z.row(i).to_vec(),
                NodeTrace {
                    node: i,
                    log_likelihood: ll,
                    failure: Some(why),
                },
            ),
        };
        (i, row, trace)
    };
    let results: Vec<_> = if compute::parallel() {
        targets.par_iter().map(run).collect()
    } else {
        targets.iter().map(run).collect()
    };
    let mut out = z.clone();
    let mut traces = Vec::with_capacity(results.len());
    for (i, row, trace) in results {
        out.row_mut(i).copy_from_slice(&row);
        traces.push(trace);
    }
    Ok(RectifyOutcome { z: out, traces })
}
