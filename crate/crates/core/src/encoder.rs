use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::{NoradError, Result};
use crate::graph::NormalizedAdjacency;
use crate::prior::{VariationalParams, ETA_EPS, SIGMA_MAX, SIGMA_MIN};
use crate::tensor::Tensor;

pub const HEADS: [&str; 3] = ["eta", "mu", "logsigma"];

pub fn self_weight(head: &str) -> String {
    format!("enc.{head}.W")
}

pub fn neighbor_weight(head: &str) -> String {
    format!("enc.{head}.V")
}

/// Uniform on `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

/// Adds the six `D × K` encoder weight matrices to `params`.
pub fn init_params<R: Rng>(params: &mut ParamSet, d: usize, k: usize, rng: &mut R) -> Result<()> {
    for head in HEADS {
        params.insert(&self_weight(head), glorot_uniform(d, k, rng), true)?;
        params.insert(&neighbor_weight(head), glorot_uniform(d, k, rng), true)?;
    }
    Ok(())
}

/// Encoder input: the features and their one-hop propagation `Ã·X`, which
/// stays fixed for the whole fit.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    pub x: Tensor,
    pub ax: Tensor,
}

impl EncoderInput {
    pub fn new(adj: &NormalizedAdjacency, x: &Tensor) -> Result<Self> {
        Ok(EncoderInput {
            x: x.clone(),
            ax: adj.apply(x)?,
        })
    }
}

/// Tape handles for the three head outputs after activation.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub eta: Var,
    pub mu: Var,
    pub log_sigma: Var,
    pub sigma: Var,
}

fn check_shapes(input: &EncoderInput, params: &ParamSet) -> Result<()> {
    let w = params
        .get(&self_weight("eta"))
        .ok_or_else(|| NoradError::Contract("encoder parameters missing".into()))?;
    if input.x.cols() != w.rows() {
        return Err(NoradError::dim("encode", input.x.shape(), w.shape()));
    }
    Ok(())
}

fn head_on_tape(
    tape: &mut Tape,
    x: Var,
    ax: Var,
    params: &ParamSet,
    head: &str,
    l2_normalize: bool,
) -> Result<Var> {
    let w = params.bind(tape, &self_weight(head))?;
    let v = params.bind(tape, &neighbor_weight(head))?;
    let xw = tape.matmul(x, w)?;
    let axv = tape.matmul(ax, v)?;
    let h = tape.add(xw, axv)?;
    if l2_normalize {
        tape.row_l2_normalize(h)
    } else {
        Ok(h)
    }
}

pub fn encode_on_tape(
    tape: &mut Tape,
    input: &EncoderInput,
    params: &ParamSet,
    l2_normalize: bool,
) -> Result<EncodedVars> {
    check_shapes(input, params)?;
    let x = tape.constant(input.x.clone());
    let ax = tape.constant(input.ax.clone());
    let h_eta = head_on_tape(tape, x, ax, params, "eta", l2_normalize)?;
    let h_mu = head_on_tape(tape, x, ax, params, "mu", l2_normalize)?;
    let h_ls = head_on_tape(tape, x, ax, params, "logsigma", l2_normalize)?;
    let eta = tape.sigmoid(h_eta);
    let eta = tape.clamp(eta, ETA_EPS, 1.0 - ETA_EPS);
    let half = tape.scale(h_ls, 0.5);
    let sigma = tape.exp(half);
    let sigma = tape.clamp(sigma, SIGMA_MIN, SIGMA_MAX);
    let log_sigma = tape.log(sigma)?;
    Ok(EncodedVars {
        eta,
        mu: h_mu,
        log_sigma,
        sigma,
    })
}

pub fn encode(input: &EncoderInput, params: &ParamSet, l2_normalize: bool) -> Result<VariationalParams> {
    let mut tape = Tape::new();
    let out = encode_on_tape(&mut tape, input, params, l2_normalize)?;
    Ok(VariationalParams {
        eta: tape.value(out.eta).clone(),
        mu: tape.value(out.mu).clone(),
        log_sigma: tape.value(out.log_sigma).clone(),
    })
}

/// `Z°`: `mu` where `eta > 0.5`, exactly zero elsewhere.
pub fn deterministic_representation(eta: &Tensor, mu: &Tensor) -> Result<Tensor> {
    if eta.shape() != mu.shape() {
        return Err(NoradError::dim("deterministic representation", eta.shape(), mu.shape()));
    }
    Ok(eta.zip_map(mu, |e, m| if e > 0.5 { m } else { 0.0 }))
}
