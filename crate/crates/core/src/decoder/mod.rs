//! Edge and attribute decoders, and the named model variants built from
//! them.

pub mod atn;
pub mod osbm;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::{NoradError, Result};
use crate::tensor::Tensor;

pub use atn::{attribute_log_likelihood, attribute_probs, AtnParams, TopicFilter, TopicReport};
pub use osbm::{adjacency_log_likelihood, b_penalty, default_pos_weight, edge_logits};

/// Maps representations `Z` to pairwise edge logits.
pub trait EdgeDecoder: Send + Sync {
    fn name(&self) -> &'static str;

    /// Adds this decoder's parameters for `k` communities.
    fn init_params(&self, params: &mut ParamSet, k: usize) -> Result<()>;

    /// Whether the M-step updates the blockmodel.
    fn learns_blockmodel(&self) -> bool;

    fn logits_on_tape(&self, tape: &mut Tape, z: Var, params: &ParamSet) -> Result<Var>;

    /// The blockmodel used at prediction time.
    fn blockmodel(&self, params: &ParamSet) -> Result<Tensor> {
        params
            .get(osbm::B_NAME)
            .cloned()
            .ok_or_else(|| NoradError::Contract(format!("missing parameter {}", osbm::B_NAME)))
    }
}

/// Sizes for attribute decoder parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttributeDims {
    pub k: usize,
    pub d: usize,
    pub d_prime: usize,
    pub d_dprime: usize,
}

/// Maps representations `Z` to a log-likelihood of the node attributes.
pub trait AttributeDecoder: Send + Sync {
    fn name(&self) -> &'static str;

    fn init_params(&self, params: &mut ParamSet, dims: AttributeDims, rng: &mut dyn rand::RngCore) -> Result<()>;

    fn models_attributes(&self) -> bool {
        true
    }

    /// `None` when the decoder models no attributes.
    fn log_likelihood_on_tape(
        &self,
        tape: &mut Tape,
        z: Var,
        x: &Arc<Tensor>,
        params: &ParamSet,
    ) -> Result<Option<Var>>;
}

/// Learned `B`, initialized at the identity.
pub struct Blockmodel;

impl EdgeDecoder for Blockmodel {
    fn name(&self) -> &'static str {
        "blockmodel"
    }

    fn init_params(&self, params: &mut ParamSet, k: usize) -> Result<()> {
        params.insert(osbm::B_NAME, Tensor::eye(k), true)?;
        Ok(())
    }

    fn learns_blockmodel(&self) -> bool {
        true
    }

    fn logits_on_tape(&self, tape: &mut Tape, z: Var, params: &ParamSet) -> Result<Var> {
        let b = params.bind(tape, osbm::B_NAME)?;
        osbm::edge_logits_on_tape(tape, z, b)
    }
}

/// Dot-product decoder: `B` pinned to the identity.
pub struct DotProduct;

impl EdgeDecoder for DotProduct {
    fn name(&self) -> &'static str {
        "dot_product"
    }

    fn init_params(&self, params: &mut ParamSet, k: usize) -> Result<()> {
        params.insert(osbm::B_NAME, Tensor::eye(k), false)?;
        Ok(())
    }

    fn learns_blockmodel(&self) -> bool {
        false
    }

    fn logits_on_tape(&self, tape: &mut Tape, z: Var, _params: &ParamSet) -> Result<Var> {
        let zt = tape.transpose(z)?;
        tape.matmul(z, zt)
    }
}

pub struct Atn;

impl AttributeDecoder for Atn {
    fn name(&self) -> &'static str {
        "atn"
    }

    fn init_params(&self, params: &mut ParamSet, dims: AttributeDims, rng: &mut dyn rand::RngCore) -> Result<()> {
        AtnParams::glorot(dims.k, dims.d, dims.d_prime, dims.d_dprime, &mut &mut *rng).insert_into(params, true)
    }

    fn log_likelihood_on_tape(
        &self,
        tape: &mut Tape,
        z: Var,
        x: &Arc<Tensor>,
        params: &ParamSet,
    ) -> Result<Option<Var>> {
        atn::log_likelihood_on_tape(tape, z, x, params).map(Some)
    }
}

/// No attribute model; the objective reduces to the edge term and the KLs.
pub struct NoAttributes;

impl AttributeDecoder for NoAttributes {
    fn name(&self) -> &'static str {
        "none"
    }

    fn init_params(&self, _params: &mut ParamSet, _dims: AttributeDims, _rng: &mut dyn rand::RngCore) -> Result<()> {
        Ok(())
    }

    fn models_attributes(&self) -> bool {
        false
    }

    fn log_likelihood_on_tape(
        &self,
        _tape: &mut Tape,
        _z: Var,
        _x: &Arc<Tensor>,
        _params: &ParamSet,
    ) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// An edge decoder paired with an attribute decoder.
#[derive(Clone)]
pub struct Variant {
    pub name: String,
    pub edge: Arc<dyn EdgeDecoder>,
    pub attributes: Arc<dyn AttributeDecoder>,
}

impl std::fmt::Debug for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Variant")
            .field("name", &self.name)
            .field("edge", &self.edge.name())
            .field("attributes", &self.attributes.name())
            .finish()
    }
}

impl Variant {
    pub fn init_params<R: Rng>(&self, params: &mut ParamSet, dims: AttributeDims, rng: &mut R) -> Result<()> {
        self.edge.init_params(params, dims.k)?;
        self.attributes.init_params(params, dims, rng)
    }
}

/// Variants by name.
pub struct VariantRegistry {
    variants: BTreeMap<String, Variant>,
}

pub const OSBM: &str = "osbm";
pub const IDENTITY_B: &str = "identity_b";
pub const NO_ATTR: &str = "no_attr";

impl Default for VariantRegistry {
    fn default() -> Self {
        let mut r = VariantRegistry {
            variants: BTreeMap::new(),
        };
        r.register(OSBM, Arc::new(Blockmodel), Arc::new(Atn));
        r.register(IDENTITY_B, Arc::new(DotProduct), Arc::new(Atn));
        r.register(NO_ATTR, Arc::new(Blockmodel), Arc::new(NoAttributes));
        r
    }
}

impl VariantRegistry {
    pub fn register(&mut self, name: &str, edge: Arc<dyn EdgeDecoder>, attributes: Arc<dyn AttributeDecoder>) {
        self.variants.insert(
            name.to_string(),
            Variant {
                name: name.to_string(),
                edge,
                attributes,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<Variant> {
        self.variants.get(name).cloned().ok_or_else(|| {
            NoradError::Config(format!(
                "unknown decoder mode {name:?}; expected one of {:?}",
                self.names()
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.variants.keys().map(String::as_str).collect()
    }
}
