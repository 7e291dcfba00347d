use std::sync::Arc;

use crate::autodiff::{bernoulli_ll_value, Tape, Var};
use crate::error::{NoradError, Result};
use crate::tensor::{gemm, Tensor};

pub const B_NAME: &str = "osbm.B";

/// `Z · B · Zᵀ`. A symmetric `B` yields an exactly symmetric result.
pub fn edge_logits(z: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !b.is_matrix() || b.rows() != b.cols() || z.cols() != b.rows() {
        return Err(NoradError::dim("edge logits", z.shape(), b.shape()));
    }
    let zb = z.matmul(b)?;
    let mut l = gemm(&zb, false, z, true)?;
    if is_symmetric(b) {
        let n = l.rows();
        for i in 0..n {
            for j in i + 1..n {
                let v = l.get(i, j);
                l.set(j, i, v);
            }
        }
    }
    Ok(l)
}

fn is_symmetric(b: &Tensor) -> bool {
    let k = b.rows();
    (0..k).all(|i| (i + 1..k).all(|j| b.get(i, j).to_bits() == b.get(j, i).to_bits()))
}

pub fn edge_logits_on_tape(tape: &mut Tape, z: Var, b: Var) -> Result<Var> {
    let zb = tape.matmul(z, b)?;
    let zt = tape.transpose(z)?;
    tape.matmul(zb, zt)
}

/// Weighted Bernoulli log-likelihood of a dense 0/1 adjacency under logits,
/// summed over ordered pairs (optionally skipping `i = j`).
pub fn adjacency_log_likelihood(
    adjacency: &Tensor,
    logits: &Tensor,
    pos_weight: f64,
    exclude_diagonal: bool,
) -> Result<f64> {
    if adjacency.shape() != logits.shape() {
        return Err(NoradError::dim("adjacency log-likelihood", adjacency.shape(), logits.shape()));
    }
    if !(pos_weight > 0.0) {
        return Err(NoradError::Contract(format!("pos_weight must be positive, got {pos_weight}")));
    }
    Ok(bernoulli_ll_value(logits, adjacency, pos_weight, exclude_diagonal))
}

pub fn adjacency_log_likelihood_on_tape(
    tape: &mut Tape,
    adjacency: &Arc<Tensor>,
    logits: Var,
    pos_weight: f64,
    exclude_diagonal: bool,
) -> Result<Var> {
    tape.bernoulli_log_likelihood(logits, Arc::clone(adjacency), pos_weight, exclude_diagonal)
}

/// `gamma · Σ|B_ij|`; subtract it from the objective being maximized.
pub fn b_penalty(b: &Tensor, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    gamma * b.data().iter().map(|v| v.abs()).sum::<f64>()
}

pub fn b_penalty_on_tape(tape: &mut Tape, b: Var, gamma: f64) -> Var {
    let a = tape.abs(b);
    let s = tape.sum(a);
    tape.scale(s, gamma)
}

/// Negative-to-positive ratio over the included ordered pairs.
pub fn default_pos_weight(n: usize, num_edges: usize, exclude_diagonal: bool) -> f64 {
    let pairs = if exclude_diagonal { n * n - n } else { n * n };
    if num_edges == 0 {
        return 1.0;
    }
    let pos = 2 * num_edges;
    (pairs.saturating_sub(pos)) as f64 / pos as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::log_sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_representation_gives_zero_logits() {
        let l = edge_logits(&Tensor::zeros(&[4, 3]), &Tensor::eye(3)).unwrap();
        assert!(l.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_blockmodel_is_dot_product() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let z = random(6, 4, &mut r);
        let l = edge_logits(&z, &Tensor::eye(4)).unwrap();
        assert_eq!(l, gemm(&z, false, &z, true).unwrap());
    }

    #[test]
    fn hand_computed_single_community() {
        let z = Tensor::from_rows(2, 1, vec![1.0, 2.0]).unwrap();
        let l = edge_logits(&z, &Tensor::from_rows(1, 1, vec![3.0]).unwrap()).unwrap();
        assert_eq!(l.data(), &[3.0, 6.0, 6.0, 12.0]);
    }

    #[test]
    fn symmetric_blockmodel_gives_symmetric_logits() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let z = random(5, 3, &mut r);
        let b0 = random(3, 3, &mut r);
        let mut b = b0.clone();
        b.add_assign(&b0.transpose().unwrap());
        let l = edge_logits(&z, &b).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(l.get(i, j).to_bits(), l.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn saturated_non_edges_have_vanishing_likelihood() {
        let n = 5;
        let ll = adjacency_log_likelihood(&Tensor::zeros(&[n, n]), &Tensor::filled(&[n, n], -30.0), 1.0, true)
            .unwrap();
        assert!(ll <= 0.0 && ll.abs() / ((n * (n - 1)) as f64) < 1e-10);
    }

    #[test]
    fn single_pair_at_zero_logit() {
        let a = Tensor::from_rows(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let mut l = Tensor::filled(&[2, 2], -1e3);
        l.set(0, 1, 0.0);
        let ll = adjacency_log_likelihood(&a, &l, 1.0, true).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_pair_loop() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for &(pw, excl) in &[(1.0, true), (2.5, true), (0.7, false)] {
            let n = 3;
            let logits = random(n, n, &mut r);
            let a = Tensor::from_rows(n, n, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
            let mut naive = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if excl && i == j {
                        continue;
                    }
                    let p = 1.0 / (1.0 + (-logits.get(i, j)).exp());
                    let aij = a.get(i, j);
                    naive += pw * aij * p.ln() + (1.0 - aij) * (1.0 - p).ln();
                }
            }
            let ll = adjacency_log_likelihood(&a, &logits, pw, excl).unwrap();
            assert!((ll - naive).abs() < 1e-12, "{ll} vs {naive}");
        }
    }

    #[test]
    fn raising_an_edge_logit_never_lowers_likelihood() {
        let a = Tensor::from_rows(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for step in -20..=20 {
            let v = step as f64;
            let l = Tensor::from_rows(2, 2, vec![0.0, v, v, 0.0]).unwrap();
            let ll = adjacency_log_likelihood(&a, &l, 1.0, true).unwrap();
            assert!(ll >= prev);
            prev = ll;
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let a = Tensor::from_rows(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = Tensor::from_rows(2, 2, vec![-500.0, 500.0, 500.0, -500.0]).unwrap();
        assert!(adjacency_log_likelihood(&a, &l, 1.0, false).unwrap().is_finite());
        assert!(log_sigmoid(-500.0).is_finite());
    }

    #[test]
    fn penalty_values() {
        assert_eq!(b_penalty(&Tensor::eye(3), 0.0), 0.0);
        assert!((b_penalty(&Tensor::eye(3), 0.001) - 0.003).abs() < 1e-18);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let b = random(4, 4, &mut r);
        let oracle: f64 = b.data().iter().map(|v| v.abs()).sum::<f64>() * 0.2;
        assert_eq!(b_penalty(&b, 0.2), oracle);
    }

    #[test]
    fn pos_weight_counts_ordered_pairs() {
        // 4 nodes, 2 edges: 12 off-diagonal ordered pairs, 4 positive
        assert_eq!(default_pos_weight(4, 2, true), 2.0);
        assert_eq!(default_pos_weight(4, 2, false), 3.0);
    }
}
