use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, ParamSet, Tape, Var};
use crate::encoder::glorot_uniform;
use crate::error::{NoradError, Result};
use crate::rng;
use crate::tensor::{gemm, Tensor};

pub const T_NAME: &str = "atn.T";
pub const U_NAME: &str = "atn.U";
pub const WQ_NAME: &str = "atn.Wq";
pub const WK_NAME: &str = "atn.Wk";

pub const PROB_EPS: f64 = 1e-6;

/// Community embeddings `T` (K×d′), attribute embeddings `U` (d′×D) and
/// the attention projections `W_q`, `W_k` (d′×d″).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtnParams {
    pub t: Tensor,
    pub u: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
}

impl AtnParams {
    pub fn glorot<R: Rng>(k: usize, d: usize, d_prime: usize, d_dprime: usize, rng: &mut R) -> Self {
        AtnParams {
            t: glorot_uniform(k, d_prime, rng),
            u: glorot_uniform(d_prime, d, rng),
            wq: glorot_uniform(d_prime, d_dprime, rng),
            wk: glorot_uniform(d_prime, d_dprime, rng),
        }
    }

    pub fn from_params(params: &ParamSet) -> Result<Self> {
        let get = |name: &str| {
            params
                .get(name)
                .cloned()
                .ok_or_else(|| NoradError::Contract(format!("missing parameter {name}")))
        };
        let p = AtnParams {
            t: get(T_NAME)?,
            u: get(U_NAME)?,
            wq: get(WQ_NAME)?,
            wk: get(WK_NAME)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn insert_into(&self, params: &mut ParamSet, trainable: bool) -> Result<()> {
        self.validate()?;
        params.insert(T_NAME, self.t.clone(), trainable)?;
        params.insert(U_NAME, self.u.clone(), trainable)?;
        params.insert(WQ_NAME, self.wq.clone(), trainable)?;
        params.insert(WK_NAME, self.wk.clone(), trainable)?;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.t.rows()
    }

    pub fn num_attributes(&self) -> usize {
        self.u.cols()
    }

    pub fn d_dprime(&self) -> usize {
        self.wq.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let dp = self.t.cols();
        if self.u.rows() != dp {
            return Err(NoradError::dim("atn T/U", self.t.shape(), self.u.shape()));
        }
        if self.wq.rows() != dp || self.wk.shape() != self.wq.shape() {
            return Err(NoradError::dim("atn Wq/Wk", self.wq.shape(), self.wk.shape()));
        }
        Ok(())
    }

    /// `W_q · W_kᵀ · U / √d″`, the d′×D map from aggregated community vectors
    /// to attribute logits.
    fn readout(&self) -> Result<Tensor> {
        let qk = gemm(&self.wq, false, &self.wk, true)?;
        let scale = 1.0 / (self.d_dprime() as f64).sqrt();
        Ok(qk.matmul(&self.u)?.map(|v| v * scale))
    }

    /// Attribute logits for every row of `z` (n×K).
    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.k() {
            return Err(NoradError::dim("attribute probs", z.shape(), self.t.shape()));
        }
        let g = z.matmul(&self.t)?.map(|v| v.max(0.0));
        g.matmul(&self.readout()?)
    }
}

/// λ for every row of `z`, clamped to `[1e-6, 1 − 1e-6]`.
pub fn attribute_probs(z: &Tensor, atn: &AtnParams) -> Result<Tensor> {
    Ok(atn.logits(z)?.map(|l| sigmoid(l).clamp(PROB_EPS, 1.0 - PROB_EPS)))
}

/// `Σ x log λ + (1 − x) log(1 − λ)` over all entries.
pub fn attribute_log_likelihood(x: &Tensor, lambda: &Tensor) -> Result<f64> {
    if x.shape() != lambda.shape() {
        return Err(NoradError::dim("attribute log-likelihood", x.shape(), lambda.shape()));
    }
    Ok(x.data()
        .iter()
        .zip(lambda.data())
        .map(|(&xi, &l)| xi * l.ln() + (1.0 - xi) * (1.0 - l).ln())
        .sum())
}

/// Tape handle for the batched attribute logits of `z`.
pub fn logits_on_tape(tape: &mut Tape, z: Var, t: Var, u: Var, wq: Var, wk: Var) -> Result<Var> {
    let d2 = tape.value(wq).cols();
    let zt = tape.matmul(z, t)?;
    let g = tape.relu(zt);
    let wkt = tape.transpose(wk)?;
    let qk = tape.matmul(wq, wkt)?;
    let gq = tape.matmul(g, qk)?;
    let raw = tape.matmul(gq, u)?;
    Ok(tape.scale(raw, 1.0 / (d2 as f64).sqrt()))
}

/// Log-likelihood of binary attributes `x` under the ATN applied to `z`, in
/// logits form.
pub fn log_likelihood_on_tape(
    tape: &mut Tape,
    z: Var,
    x: &Arc<Tensor>,
    params: &ParamSet,
) -> Result<Var> {
    let t = params.bind(tape, T_NAME)?;
    let u = params.bind(tape, U_NAME)?;
    let wq = params.bind(tape, WQ_NAME)?;
    let wk = params.bind(tape, WK_NAME)?;
    let logits = logits_on_tape(tape, z, t, u, wq, wk)?;
    tape.bernoulli_log_likelihood(logits, Arc::clone(x), 1.0, false)
}

/// Gradient of one node's attribute log-likelihood wrt its representation
/// `z` (length K); the ATN weights are held fixed.
pub fn rectification_gradient(z: &[f64], x: &[f64], atn: &AtnParams) -> Result<(f64, Vec<f64>)> {
    if z.len() != atn.k() || x.len() != atn.num_attributes() {
        return Err(NoradError::dim("rectification gradient", &[z.len(), x.len()], &[atn.k(), atn.num_attributes()]));
    }
    let mut tape = Tape::new();
    let zv = tape.param(0, Tensor::from_rows(1, z.len(), z.to_vec())?);
    let t = tape.constant(atn.t.clone());
    let u = tape.constant(atn.u.clone());
    let wq = tape.constant(atn.wq.clone());
    let wk = tape.constant(atn.wk.clone());
    let logits = logits_on_tape(&mut tape, zv, t, u, wq, wk)?;
    let target = Arc::new(Tensor::from_rows(1, x.len(), x.to_vec())?);
    let ll = tape.bernoulli_log_likelihood(logits, target, 1.0, false)?;
    let value = tape.scalar(ll);
    let grads = tape.backward(ll)?;
    let g = grads
        .param(0)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; z.len()]);
    Ok((value, g))
}

/// One entry of a topic's word list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopWord {
    pub attribute: usize,
    pub name: Option<String>,
    pub mean_activation: f64,
}

/// Per-community attribute distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub community: usize,
    pub top_words: Vec<TopWord>,
    #[serde(skip)]
    pub mean_activation: Vec<f64>,
    #[serde(skip)]
    pub activation_stddev: Vec<f64>,
}

/// Removes non-semantic attributes from topic word lists.
#[derive(Clone, Debug, Default)]
pub struct TopicFilter {
    /// Drop attributes present in more than this fraction of nodes.
    pub doc_freq_ceiling: Option<(f64, Vec<f64>)>,
    pub stop_list: HashSet<String>,
}

pub const DEFAULT_DOC_FREQ_CEILING: f64 = 0.2;
pub const DEFAULT_TOPIC_SAMPLES: usize = 10_000;

impl TopicFilter {
    /// Filter from a feature matrix: per-attribute document frequency against
    /// `ceiling`.
    pub fn from_features(features: &Tensor, ceiling: f64, stop_list: HashSet<String>) -> Self {
        let n = features.rows() as f64;
        let mut freq = vec![0.0; features.cols()];
        for i in 0..features.rows() {
            for (f, &x) in freq.iter_mut().zip(features.row(i)) {
                *f += x;
            }
        }
        freq.iter_mut().for_each(|f| *f /= n);
        TopicFilter {
            doc_freq_ceiling: Some((ceiling, freq)),
            stop_list,
        }
    }

    fn keeps(&self, attribute: usize, name: Option<&str>) -> bool {
        if let Some((ceiling, freq)) = &self.doc_freq_ceiling {
            if freq.get(attribute).is_some_and(|&f| f > *ceiling) {
                return false;
            }
        }
        !name.is_some_and(|n| self.stop_list.contains(n))
    }
}

/// Mean λ over `num_samples` draws of `z = onehot(k) ⊙ v`, `v ~ N(0, I)`.
pub fn topic_distribution(atn: &AtnParams, k: usize, num_samples: usize, seed: u64) -> Result<TopicReport> {
    if k >= atn.k() {
        return Err(NoradError::Index(format!("community {k} out of range for K = {}", atn.k())));
    }
    if num_samples == 0 {
        return Err(NoradError::Contract("num_samples must be at least 1".into()));
    }
    // with a single active coordinate, relu(v·T_k) = v·relu(T_k) for v ≥ 0
    // and |v|·relu(−T_k) otherwise
    let readout = atn.readout()?;
    let tk = atn.t.row(k);
    let pos = Tensor::from_rows(1, tk.len(), tk.iter().map(|v| v.max(0.0)).collect())?.matmul(&readout)?;
    let neg = Tensor::from_rows(1, tk.len(), tk.iter().map(|v| (-v).max(0.0)).collect())?.matmul(&readout)?;

    let d = atn.num_attributes();
    let mut rng = rng::stream(seed, &format!("{}:{k}", rng::TOPICS));
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for _ in 0..num_samples {
        let v: f64 = rng.sample(StandardNormal);
        let base = if v >= 0.0 { pos.data() } else { neg.data() };
        let a = v.abs();
        for ((s, q), &b) in sum.iter_mut().zip(sq.iter_mut()).zip(base) {
            let lam = sigmoid(a * b).clamp(PROB_EPS, 1.0 - PROB_EPS);
            *s += lam;
            *q += lam * lam;
        }
    }
    let ns = num_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / ns).collect();
    let stddev = mean
        .iter()
        .zip(&sq)
        .map(|(m, q)| (q / ns - m * m).max(0.0).sqrt())
        .collect();
    Ok(TopicReport {
        community: k,
        top_words: Vec::new(),
        mean_activation: mean,
        activation_stddev: stddev,
    })
}

impl TopicReport {
    /// Fills `top_words` with the `m` highest-activation attributes that pass
    /// `filter`, descending; ties by attribute index.
    pub fn select_top(&mut self, m: usize, names: Option<&[String]>, filter: &TopicFilter) {
        let mut order: Vec<usize> = (0..self.mean_activation.len())
            .filter(|&a| filter.keeps(a, names.and_then(|n| n.get(a)).map(String::as_str)))
            .collect();
        order.sort_by(|&a, &b| {
            self.mean_activation[b]
                .total_cmp(&self.mean_activation[a])
                .then(a.cmp(&b))
        });
        self.top_words = order
            .into_iter()
            .take(m)
            .map(|a| TopWord {
                attribute: a,
                name: names.and_then(|n| n.get(a)).cloned(),
                mean_activation: self.mean_activation[a],
            })
            .collect();
    }
}
