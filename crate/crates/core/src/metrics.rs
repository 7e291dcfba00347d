//! Link prediction and clustering metrics.

use std::collections::HashMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::compute;
use crate::error::{NoradError, Result};
use crate::graph::Edge;
use crate::rng;
use crate::tensor::Tensor;

/// Edge scores `(σ(z_iᵀBz_j) + σ(z_jᵀBz_i)) / 2`.
pub fn score_edges(z: &Tensor, b: &Tensor, edges: &[Edge]) -> Result<Vec<f64>> {
    let (n, k) = (z.rows(), z.cols());
    if b.shape() != [k, k] {
        return Err(NoradError::dim("score edges", z.shape(), b.shape()));
    }
    let zb = z.matmul(b)?;
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    edges
        .iter()
        .map(|&(i, j)| {
            if i >= n || j >= n {
                return Err(NoradError::Index(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            let sij = sigmoid(dot(zb.row(i), z.row(j)));
            let sji = sigmoid(dot(zb.row(j), z.row(i)));
            Ok((sij + sji) / 2.0)
        })
        .collect()
}

/// Edges with scores and binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredEdges {
    pub edges: Vec<Edge>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredEdges {
    pub fn new(edges: Vec<Edge>, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if edges.len() != scores.len() || scores.len() != labels.len() {
            return Err(NoradError::Contract(format!(
                "scored edge lists differ in length: {} edges, {} scores, {} labels",
                edges.len(),
                scores.len(),
                labels.len()
            )));
        }
        Ok(ScoredEdges { edges, scores, labels })
    }

    /// Positives followed by negatives, scored under `(z, b)`.
    pub fn from_split(z: &Tensor, b: &Tensor, pos: &[Edge], neg: &[Edge]) -> Result<Self> {
        let edges: Vec<Edge> = pos.iter().chain(neg).copied().collect();
        let scores = score_edges(z, b, &edges)?;
        let labels = (0..edges.len()).map(|i| i < pos.len()).collect();
        ScoredEdges::new(edges, scores, labels)
    }

    fn check_labels(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|&&l| l).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(NoradError::Contract(format!(
                "need at least one positive and one negative, got {pos} and {neg}"
            )));
        }
        Ok((pos, neg))
    }

    pub fn positive_scores(&self) -> Vec<f64> {
        self.scores.iter().zip(&self.labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect()
    }

    pub fn negative_scores(&self) -> Vec<f64> {
        self.scores.iter().zip(&self.labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect()
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn roc_auc(scored: &ScoredEdges) -> Result<f64> {
    let (pos, neg) = scored.check_labels()?;
    let mut order: Vec<usize> = (0..scored.scores.len()).collect();
    order.sort_by(|&a, &b| scored.scores[a].total_cmp(&scored.scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored.scores[order[j + 1]] == scored.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&o| scored.labels[o]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Mean over positives of precision at each positive's rank. Items are
/// ranked by descending score, ties broken by ascending edge.
pub fn average_precision(scored: &ScoredEdges) -> Result<f64> {
    let (pos, _) = scored.check_labels()?;
    let mut order: Vec<usize> = (0..scored.scores.len()).collect();
    order.sort_by(|&a, &b| {
        scored.scores[b]
            .total_cmp(&scored.scores[a])
            .then(scored.edges[a].cmp(&scored.edges[b]))
    });
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &o) in order.iter().enumerate() {
        if scored.labels[o] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// Fraction of positives scoring strictly above the `k`-th highest
/// negative.
pub fn hits_at_k(pos_scores: &[f64], neg_scores: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(NoradError::Contract("k must be at least 1".into()));
    }
    if neg_scores.len() < k {
        return Err(NoradError::Contract(format!(
            "hits@{k} needs at least {k} negatives, got {}",
            neg_scores.len()
        )));
    }
    if pos_scores.is_empty() {
        return Err(NoradError::Contract("hits@k needs at least one positive".into()));
    }
    let mut neg = neg_scores.to_vec();
    neg.sort_by(|a, b| b.total_cmp(a));
    let threshold = neg[k - 1];
    Ok(pos_scores.iter().filter(|&&s| s > threshold).count() as f64 / pos_scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

pub const KMEANS_RESTARTS: usize = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy k-means++: each new center is the best, by resulting potential,
/// of `2 + ⌊ln k⌋` candidates drawn proportionally to squared distance.
fn seed_centers<R: Rng>(z: &Tensor, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = z.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![z.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if target < d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let nd: Vec<f64> = (0..n).map(|i| d2[i].min(sq_dist(z.row(i), z.row(cand)))).collect();
            let potential: f64 = nd.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, cand, nd));
            }
        }
        let (_, cand, nd) = best.expect("at least one trial");
        centers.push(z.row(cand).to_vec());
        d2 = nd;
    }
    centers
}

fn lloyd<R: Rng>(z: &Tensor, k: usize, max_iters: usize, rng: &mut R) -> ClusterAssignment {
    let (n, dim) = (z.rows(), z.cols());
    let mut centers = seed_centers(z, k, rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut inertia = 0.0;
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, d) = nearest(z.row(i), &centers);
            if c != *label {
                changed = true;
            }
            *label = c;
            inertia += d;
        }
        history.push(inertia);
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(z.row(i)) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // farthest point from its current center
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        let da = sq_dist(z.row(a), &centers[labels[a]]);
                        let db = sq_dist(z.row(b), &centers[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("k <= n");
                taken[far] = true;
                centers[c] = z.row(far).to_vec();
            }
        }
    }
    let inertia = labels.iter().enumerate().map(|(i, &c)| sq_dist(z.row(i), &centers[c])).sum();
    ClusterAssignment {
        labels,
        k,
        inertia,
        history,
    }
}

/// Lloyd's algorithm from greedy k-means++ seeds; the best of
/// [`KMEANS_RESTARTS`] restarts by inertia (then restart index) wins.
pub fn kmeans(z: &Tensor, k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    let n = z.rows();
    if k == 0 || k > n {
        return Err(NoradError::Contract(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let run = |r: usize| {
        let mut g = rng::stream(seed, &format!("{}:{r}", rng::KMEANS));
        (r, lloyd(z, k, max_iters, &mut g))
    };
    let results: Vec<(usize, ClusterAssignment)> = if compute::parallel() {
        (0..KMEANS_RESTARTS).into_par_iter().map(run).collect()
    } else {
        (0..KMEANS_RESTARTS).map(run).collect()
    };
    let (_, best) = results
        .into_iter()
        .min_by(|(ra, a), (rb, b)| a.inertia.total_cmp(&b.inertia).then(ra.cmp(rb)))
        .expect("restarts");
    Ok(best)
}

/// Dense contingency table with rows indexed by distinct `a` values and
/// columns by distinct `b` values, both in ascending order.
fn contingency(a: &[usize], b: &[usize]) -> Vec<Vec<usize>> {
    let index = |v: &[usize]| {
        let mut u: Vec<usize> = v.to_vec();
        u.sort_unstable();
        u.dedup();
        u.into_iter().enumerate().map(|(i, x)| (x, i)).collect::<HashMap<_, _>>()
    };
    let (ia, ib) = (index(a), index(b));
    let mut table = vec![vec![0usize; ib.len()]; ia.len()];
    for (x, y) in a.iter().zip(b) {
        table[ia[x]][ib[y]] += 1;
    }
    table
}

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(NoradError::Contract(format!(
            "label vectors differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(NoradError::Contract("empty label vectors".into()));
    }
    Ok(())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(pred; true) / ((H(pred) + H(true)) / 2)`.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let table = contingency(pred, truth);
    let n = pred.len() as f64;
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h_pred = entropy(rows.iter().copied(), n);
    let h_true = entropy(cols.iter().copied(), n);
    let denom = (h_pred + h_true) / 2.0;
    if denom == 0.0 {
        return Ok(if rows.len() == 1 && cols.len() == 1 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Accuracy under the cluster-to-class matching that maximizes agreement.
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let table = contingency(pred, truth);
    let size = table.len().max(table[0].len());
    let mut weights = Matrix::new_square(size, 0i64);
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            weights[(i, j)] = c as i64;
        }
    }
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / pred.len() as f64)
}

/// Link-prediction summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub auc: f64,
    pub ap: f64,
    pub hits: std::collections::BTreeMap<String, Option<f64>>,
}

pub const HITS_KS: [usize; 3] = [10, 50, 100];

pub fn link_report(scored: &ScoredEdges) -> Result<LinkReport> {
    let pos = scored.positive_scores();
    let neg = scored.negative_scores();
    let hits = HITS_KS
        .iter()
        .map(|&k| (k.to_string(), hits_at_k(&pos, &neg, k).ok()))
        .collect();
    Ok(LinkReport {
        auc: roc_auc(scored)?,
        ap: average_precision(scored)?,
        hits,
    })
}
