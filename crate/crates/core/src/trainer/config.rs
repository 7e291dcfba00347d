use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{VariantRegistry, OSBM};
use crate::error::{NoradError, Result};
use crate::prior::SpikeSlabPrior;

/// How the M-step and prediction read a representation off the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// `μ ⊙ 1(η > 0.5)`.
    #[default]
    Threshold,
    /// `η ⊙ μ`.
    Soft,
}

/// Flat training configuration. Missing keys take their defaults when
/// deserialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Decoder variant name, see [`VariantRegistry`].
    pub mode: String,
    pub alpha: f64,
    pub gamma: f64,
    pub t_e: usize,
    pub t_m: usize,
    pub outer_rounds: usize,
    pub learning_rate: f64,
    pub k: usize,
    pub d_prime: usize,
    pub d_dprime: usize,
    pub temperature_start: f64,
    pub temperature_floor: f64,
    /// E-iterations over which the temperature decays; `outer_rounds · t_e`
    /// when unset.
    pub anneal_iterations: Option<usize>,
    pub seed: u64,
    /// Positive-pair weight; negative-to-positive ratio when unset.
    pub pos_weight: Option<f64>,
    pub exclude_diagonal: bool,
    pub l2_normalize: bool,
    pub m_step_representation: Representation,
    /// Stop when the relative ELBO change across `convergence_window`
    /// rounds falls below this. Zero disables early stopping.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub prior_delta: f64,
    pub prior_u: f64,
    pub prior_s: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: OSBM.to_string(),
            alpha: 1.0,
            gamma: 0.001,
            t_e: 10,
            t_m: 10,
            outer_rounds: 200,
            learning_rate: 0.001,
            k: 256,
            d_prime: 128,
            d_dprime: 64,
            temperature_start: 1.0,
            temperature_floor: 0.5,
            anneal_iterations: None,
            seed: 0,
            pos_weight: None,
            exclude_diagonal: true,
            l2_normalize: false,
            m_step_representation: Representation::Threshold,
            convergence_tol: 1e-4,
            convergence_window: 5,
            prior_delta: 0.5,
            prior_u: 0.0,
            prior_s: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(NoradError::Config(m));
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0) {
            return fail(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.t_e == 0 || self.t_m == 0 {
            return fail("t_e and t_m must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.k == 0 || self.d_prime == 0 || self.d_dprime == 0 {
            return fail("k, d_prime and d_dprime must be positive".into());
        }
        if !(self.temperature_floor > 0.0 && self.temperature_start >= self.temperature_floor) {
            return fail(format!(
                "temperatures need start >= floor > 0, got start {} floor {}",
                self.temperature_start, self.temperature_floor
            ));
        }
        if let Some(pw) = self.pos_weight {
            if !(pw > 0.0) {
                return fail(format!("pos_weight must be positive, got {pw}"));
            }
        }
        if self.convergence_window == 0 {
            return fail("convergence_window must be at least 1".into());
        }
        self.prior()?;
        VariantRegistry::default().get(&self.mode)?;
        Ok(())
    }

    pub fn prior(&self) -> Result<SpikeSlabPrior> {
        SpikeSlabPrior::new(self.prior_delta, self.prior_u, self.prior_s)
    }

    pub fn anneal_total(&self) -> usize {
        self.anneal_iterations.unwrap_or(self.outer_rounds * self.t_e)
    }

    /// SHA-256 of the canonical JSON form (keys sorted), hex.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hash_json(&value)
    }

    /// Parses a JSON object, then overlays it on the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| NoradError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// SHA-256 over the compact serialization of `value` with object keys in
/// sorted order.
pub fn hash_json(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(&sort_keys(value)).expect("json serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn sort_keys(v: &serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            let sorted: std::collections::BTreeMap<_, _> = map.iter().map(|(k, v)| (k.clone(), sort_keys(v))).collect();
            serde_json::Value::Object(sorted.into_iter().collect())
        }
        serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.t_e, c.t_m, c.k, c.d_prime, c.d_dprime), (10, 10, 256, 128, 64));
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.temperature_floor, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_overlays_defaults() {
        let c = TrainConfig::from_json(r#"{"alpha": 2.0, "k": 16}"#).unwrap();
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.k, 16);
        assert_eq!(c.t_e, 10);
        assert!(TrainConfig::from_json(r#"{"alpah": 2.0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"mode": "nrtm"}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"t_e": 0}"#).is_err());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a": 1, "b": {"x": 1, "y": 2}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b": {"y": 2, "x": 1}, "a": 1}"#).unwrap();
        assert_eq!(hash_json(&a), hash_json(&b));
        let mut c = TrainConfig::default();
        let h = c.hash();
        c.alpha = 3.0;
        assert_ne!(h, c.hash());
    }
}
