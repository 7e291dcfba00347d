//! Attributed graphs sampled from the model's own generative process.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::decoder::{attribute_probs, AtnParams};
use crate::error::{NoradError, Result};
use crate::graph::{self, AttributedGraph, Edge};
use crate::prior::SpikeSlabPrior;
use crate::rng;
use crate::tensor::Tensor;

/// A sampled graph with the latent state that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedInstance {
    pub graph: AttributedGraph,
    pub z_true: Tensor,
    pub c_true: Tensor,
    pub v_true: Tensor,
    pub b_true: Tensor,
    pub atn_true: AtnParams,
    pub labels: Vec<usize>,
    pub seed: u64,
}

/// `diag` on the diagonal, `offdiag` elsewhere.
pub fn planted_blockmodel(k: usize, diag: f64, offdiag: f64) -> Tensor {
    let mut b = Tensor::filled(&[k, k], offdiag);
    for i in 0..k {
        b.set(i, i, diag);
    }
    b
}

/// Dominant community per node: the active coordinate of largest `|z|`,
/// lowest index on ties. Nodes without an active spike get class `K`.
pub fn planted_labels(c_true: &Tensor, z_true: &Tensor) -> Vec<usize> {
    let k = c_true.cols();
    (0..c_true.rows())
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..k {
                if c_true.get(i, c) != 0.0 {
                    let mag = z_true.get(i, c).abs();
                    if best.is_none_or(|(_, m)| mag > m) {
                        best = Some((c, mag));
                    }
                }
            }
            best.map_or(k, |(c, _)| c)
        })
        .collect()
}

/// Samples `C ~ Bernoulli(δ)`, `V ~ N(u, s²)`, `Z = C ⊙ V`, one edge draw per
/// unordered pair with probability `σ(z_iᵀ B z_j)`, and attributes
/// `x_id ~ Bernoulli(λ_id)`.
pub fn generate(
    n: usize,
    k: usize,
    prior: &SpikeSlabPrior,
    b_true: &Tensor,
    atn_true: &AtnParams,
    seed: u64,
) -> Result<PlantedInstance> {
    if b_true.shape() != [k, k] || atn_true.k() != k {
        return Err(NoradError::dim("generate", &[k, k], b_true.shape()));
    }
    if !(0.0..=1.0).contains(&prior.delta) || !(prior.s > 0.0) {
        return Err(NoradError::Domain(format!("invalid generating prior {prior:?}")));
    }
    let mut rng = rng::stream(seed, rng::SYNTH);
    let slab = Normal::new(prior.u, prior.s).map_err(|e| NoradError::Domain(e.to_string()))?;
    let mut c = Tensor::zeros(&[n, k]);
    let mut v = Tensor::zeros(&[n, k]);
    for i in 0..n {
        for j in 0..k {
            c.set(i, j, if rng.random_bool(prior.delta) { 1.0 } else { 0.0 });
            v.set(i, j, slab.sample(&mut rng));
        }
    }
    let z = c.zip_map(&v, |a, b| a * b);

    let zb = z.matmul(b_true)?;
    let mut edges: Vec<Edge> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let logit: f64 = zb.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum();
            if rng.random::<f64>() < sigmoid(logit) {
                edges.push((i, j));
            }
        }
    }

    let lambda = attribute_probs(&z, atn_true)?;
    let mut x = Tensor::zeros(lambda.shape());
    for (xi, &l) in x.data_mut().iter_mut().zip(lambda.data()) {
        *xi = if rng.random::<f64>() < l { 1.0 } else { 0.0 };
    }

    let labels = planted_labels(&c, &z);
    let graph = AttributedGraph::new(n, edges, x)?.with_labels(labels.clone(), None)?;
    Ok(PlantedInstance {
        graph,
        z_true: z,
        c_true: c,
        v_true: v,
        b_true: b_true.clone(),
        atn_true: atn_true.clone(),
        labels,
        seed,
    })
}

/// Everything needed to draw a planted instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub d_prime: usize,
    pub d_dprime: usize,
    pub delta: f64,
    pub u: f64,
    pub s: f64,
    pub diag: f64,
    pub offdiag: f64,
    /// Multiplies the Glorot-drawn attribute embeddings `U`.
    pub atn_scale: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 200,
            k: 4,
            d: 64,
            d_prime: 16,
            d_dprime: 8,
            delta: 0.3,
            u: 0.0,
            s: 1.0,
            diag: 4.0,
            offdiag: -4.0,
            atn_scale: 1.0,
            seed: 0,
        }
    }
}

pub const PRESETS: [&str; 5] = ["default", "recovery", "blind", "sparse", "tiny"];

impl SynthParams {
    /// Named configurations.
    ///
    /// * `default`: `n=200, K=4, δ=0.3, u=0, s=1, B = 4·I − 4·(1 − I)`,
    ///   `D=64, d′=16, d″=8`.
    /// * `recovery`: as `default` but with `δ=0.4` and positive slabs
    ///   `u=2, s=0.75`, used for the planted recovery runs.
    /// * `blind`: `recovery` with `B = 0`, a community-blind edge model.
    /// * `sparse`: `δ=0.6, u=2, s=0.75, B = −0.5·I − 8·(1 − I)`, attribute
    ///   embeddings scaled by 3; density near 0.02, so a 40% edge split
    ///   leaves many nodes isolated.
    /// * `tiny`: `n=12, K=4, D=8, d′=8, d″=4`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = SynthParams::default();
        let recovery = SynthParams {
            delta: 0.4,
            u: 2.0,
            s: 0.75,
            ..base.clone()
        };
        match name {
            "default" => Ok(base),
            "recovery" => Ok(recovery),
            "blind" => Ok(SynthParams {
                diag: 0.0,
                offdiag: 0.0,
                ..recovery
            }),
            "sparse" => Ok(SynthParams {
                delta: 0.6,
                u: 2.0,
                s: 0.75,
                diag: -0.5,
                offdiag: -8.0,
                atn_scale: 3.0,
                ..base
            }),
            "tiny" => Ok(SynthParams {
                n: 12,
                k: 4,
                d: 8,
                d_prime: 8,
                d_dprime: 4,
                ..base
            }),
            other => Err(NoradError::Config(format!(
                "unknown synth preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn prior(&self) -> SpikeSlabPrior {
        SpikeSlabPrior {
            delta: self.delta,
            u: self.u,
            s: self.s,
        }
    }

    /// Draws the ATN weights from the `synth` stream, then the instance.
    pub fn sample(&self) -> Result<PlantedInstance> {
        let mut rng = rng::stream(self.seed, "synth:atn");
        let mut atn = AtnParams::glorot(self.k, self.d, self.d_prime, self.d_dprime, &mut rng);
        atn.u = atn.u.map(|v| v * self.atn_scale);
        let b = planted_blockmodel(self.k, self.diag, self.offdiag);
        generate(self.n, self.k, &self.prior(), &b, &atn, self.seed)
    }
}

/// `planted.json`: latent state and labels of an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecord {
    pub params: Option<SynthParams>,
    pub seed: u64,
    pub z_true: Tensor,
    pub c_true: Tensor,
    pub b_true: Tensor,
    pub atn_true: AtnParams,
    pub labels: Vec<usize>,
}

/// Paths written by [`write_instance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFiles {
    pub edges: std::path::PathBuf,
    pub features: std::path::PathBuf,
    pub labels: std::path::PathBuf,
    pub planted: std::path::PathBuf,
}

/// Writes `edges.tsv`, `features.tsv`, `labels.tsv` and `planted.json`
/// into `dir`.
pub fn write_instance(inst: &PlantedInstance, params: Option<&SynthParams>, dir: &Path) -> Result<InstanceFiles> {
    std::fs::create_dir_all(dir).map_err(|e| NoradError::io(dir, e))?;
    let files = InstanceFiles {
        edges: dir.join("edges.tsv"),
        features: dir.join("features.tsv"),
        labels: dir.join("labels.tsv"),
        planted: dir.join("planted.json"),
    };
    graph::write_edge_list(&files.edges, &inst.graph, inst.graph.edges())?;
    graph::write_features(&files.features, &inst.graph)?;
    graph::write_labels(&files.labels, &inst.graph)?;
    let record = PlantedRecord {
        params: params.cloned(),
        seed: inst.seed,
        z_true: inst.z_true.clone(),
        c_true: inst.c_true.clone(),
        b_true: inst.b_true.clone(),
        atn_true: inst.atn_true.clone(),
        labels: inst.labels.clone(),
    };
    let text = serde_json::to_string_pretty(&record)?;
    std::fs::write(&files.planted, text).map_err(|e| NoradError::io(&files.planted, e))?;
    Ok(files)
}
