use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{NoradError, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for a fixed subset of a [`ParamSet`], addressed by slot.
/// Updates ascend: the step is added to the parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    slots: Vec<usize>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, slots: Vec<usize>) -> Self {
        let m: Vec<Tensor> = slots.iter().map(|&s| Tensor::zeros(params.tensor(s).shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            slots,
            step: 0,
        }
    }

    pub fn for_names(params: &ParamSet, names: &[&str]) -> Result<Self> {
        let slots = names
            .iter()
            .map(|n| params.slot(n).ok_or_else(|| NoradError::Contract(format!("unknown parameter {n}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(AdamState::new(params, slots))
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected step. `grads` is indexed by slot over the whole
    /// parameter set.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, &slot) in self.slots.iter().enumerate() {
            let g = &grads[slot];
            let p = params.tensor_mut(slot);
            if g.shape() != p.shape() {
                return Err(NoradError::dim("adam update", p.shape(), g.shape()));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = BETA1 * *mj + (1.0 - BETA1) * gj;
                *vj = BETA2 * *vj + (1.0 - BETA2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *pj += lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::scalar(value), true).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(0.0);
        let mut adam = AdamState::for_names(&p, &["p"]).unwrap();
        adam.update(&mut p, &[Tensor::scalar(1.0)], 1e-3).unwrap();
        // m̂ / √v̂ = 1, so only ε separates the step from lr
        assert!((p.tensor(0).item() - 1e-3).abs() < 1e-3 * 1e-7);
    }

    #[test]
    fn zero_gradient_keeps_parameter() {
        let mut p = single(0.25);
        let mut adam = AdamState::for_names(&p, &["p"]).unwrap();
        for _ in 0..100 {
            adam.update(&mut p, &[Tensor::scalar(0.0)], 1e-2).unwrap();
        }
        assert_eq!(p.tensor(0).item(), 0.25);
    }

    #[test]
    fn climbs_negative_quadratic() {
        // maximize −p², gradient −2p
        let mut p = single(1.0);
        let mut adam = AdamState::for_names(&p, &["p"]).unwrap();
        for _ in 0..500 {
            let g = -2.0 * p.tensor(0).item();
            adam.update(&mut p, &[Tensor::scalar(g)], 0.01).unwrap();
        }
        assert!(p.tensor(0).item().abs() < 0.05);
    }

    #[test]
    fn untracked_slots_are_left_alone() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::scalar(1.0), true).unwrap();
        p.insert("b", Tensor::scalar(1.0), true).unwrap();
        let mut adam = AdamState::for_names(&p, &["b"]).unwrap();
        adam.update(&mut p, &[Tensor::scalar(5.0), Tensor::scalar(5.0)], 0.1).unwrap();
        assert_eq!(p.tensor(0).item(), 1.0);
        assert!(p.tensor(1).item() > 1.0);
    }
}
