use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainData};
use crate::autodiff::{ParamSet, Tape, Var};
use crate::decoder::{osbm, Variant};
use crate::encoder::{encode_on_tape, EncodedVars};
use crate::error::{NoradError, Result};
use crate::prior::{
    gaussian_on_tape, kl_bernoulli_on_tape, kl_gaussian_on_tape, relaxed_bernoulli_on_tape, ReparamNoise,
};
use crate::tensor::Tensor;

/// Value of each objective term at one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub edge: f64,
    /// Attribute log-likelihood before weighting by alpha.
    pub attribute: f64,
    pub kl_bernoulli: f64,
    pub kl_gaussian: f64,
    pub total: f64,
}

impl ElboTerms {
    /// Numeric error naming every non-finite term.
    pub fn check_finite(&self) -> Result<()> {
        let named = [
            ("edge", self.edge),
            ("attribute", self.attribute),
            ("kl_bernoulli", self.kl_bernoulli),
            ("kl_gaussian", self.kl_gaussian),
            ("total", self.total),
        ];
        let bad: Vec<String> = named
            .iter()
            .filter(|(_, v)| !v.is_finite())
            .map(|(n, v)| format!("{n}={v}"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(NoradError::Numeric(format!("non-finite ELBO terms: {}", bad.join(", "))))
        }
    }
}

/// Tape handles of the objective and its parts.
#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub total: Var,
    pub edge: Var,
    pub attribute: Option<Var>,
    pub kl_bernoulli: Var,
    pub kl_gaussian: Var,
    pub encoded: EncodedVars,
    pub z: Var,
}

impl ElboVars {
    pub fn terms(&self, tape: &Tape) -> ElboTerms {
        ElboTerms {
            edge: tape.scalar(self.edge),
            attribute: self.attribute.map_or(0.0, |a| tape.scalar(a)),
            kl_bernoulli: tape.scalar(self.kl_bernoulli),
            kl_gaussian: tape.scalar(self.kl_gaussian),
            total: tape.scalar(self.total),
        }
    }
}

/// Effective attribute weight: zero when the variant has no attribute model.
pub fn attribute_weight(config: &TrainConfig, variant: &Variant) -> f64 {
    if variant.attributes.models_attributes() {
        config.alpha
    } else {
        0.0
    }
}

/// `edge LL + α · attribute LL − KL(C) − KL(V)` at the sample fixed by
/// `noise`.
pub fn elbo_on_tape(
    tape: &mut Tape,
    data: &TrainData,
    params: &ParamSet,
    variant: &Variant,
    noise: &ReparamNoise,
    temperature: f64,
    config: &TrainConfig,
) -> Result<ElboVars> {
    let prior = config.prior()?;
    let enc = encode_on_tape(tape, &data.input, params, config.l2_normalize)?;
    let c = relaxed_bernoulli_on_tape(tape, enc.eta, temperature, &noise.uniform)?;
    let v = gaussian_on_tape(tape, enc.mu, enc.sigma, &noise.normal)?;
    let z = tape.hadamard(c, v)?;

    let logits = variant.edge.logits_on_tape(tape, z, params)?;
    let edge = osbm::adjacency_log_likelihood_on_tape(
        tape,
        &data.adjacency,
        logits,
        data.pos_weight,
        config.exclude_diagonal,
    )?;

    let alpha = attribute_weight(config, variant);
    let attribute = if alpha > 0.0 {
        variant.attributes.log_likelihood_on_tape(tape, z, &data.features, params)?
    } else {
        None
    };

    let kl_bernoulli = kl_bernoulli_on_tape(tape, enc.eta, prior.delta)?;
    let kl_gaussian = kl_gaussian_on_tape(tape, enc.mu, enc.sigma, prior.u, prior.s)?;

    let mut total = edge;
    if let Some(a) = attribute {
        let weighted = tape.scale(a, alpha);
        total = tape.add(total, weighted)?;
    }
    total = tape.sub(total, kl_bernoulli)?;
    total = tape.sub(total, kl_gaussian)?;
    Ok(ElboVars {
        total,
        edge,
        attribute,
        kl_bernoulli,
        kl_gaussian,
        encoded: enc,
        z,
    })
}

/// Forward evaluation only.
pub fn elbo(
    data: &TrainData,
    params: &ParamSet,
    variant: &Variant,
    noise: &ReparamNoise,
    temperature: f64,
    config: &TrainConfig,
) -> Result<ElboTerms> {
    let mut tape = Tape::new();
    let vars = elbo_on_tape(&mut tape, data, params, variant, noise, temperature, config)?;
    let terms = vars.terms(&tape);
    terms.check_finite()?;
    Ok(terms)
}

/// M-step objective handles: `edge LL − γ‖B‖₁` at a fixed representation.
#[derive(Clone, Copy, Debug)]
pub struct MStepVars {
    pub total: Var,
    pub edge: Var,
    pub penalty: Var,
}

pub fn m_objective_on_tape(
    tape: &mut Tape,
    data: &TrainData,
    params: &ParamSet,
    variant: &Variant,
    z: &Tensor,
    config: &TrainConfig,
) -> Result<MStepVars> {
    let zv = tape.constant(z.clone());
    let logits = variant.edge.logits_on_tape(tape, zv, params)?;
    let edge = osbm::adjacency_log_likelihood_on_tape(
        tape,
        &data.adjacency,
        logits,
        data.pos_weight,
        config.exclude_diagonal,
    )?;
    let b = params.bind(tape, osbm::B_NAME)?;
    let penalty = osbm::b_penalty_on_tape(tape, b, config.gamma);
    let total = tape.sub(edge, penalty)?;
    Ok(MStepVars { total, edge, penalty })
}
