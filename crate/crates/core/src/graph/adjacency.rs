use super::Edge;
use crate::error::{NoradError, Result};
use crate::tensor::Tensor;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in CSR form, `D̃` the degree matrix of
/// `A + I`. Column indices within a row are ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(edges: &[Edge], n: usize) -> Result<Self> {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(NoradError::Consistency(format!(
                    "invalid edge ({i}, {j}) for {n} nodes"
                )));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        let inv_sqrt: Vec<f64> = neighbors
            .iter()
            .map(|nb| 1.0 / (nb.len() as f64).sqrt())
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            for &j in nb.iter() {
                cols.push(j);
                vals.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            row_ptr.push(cols.len());
        }
        Ok(NormalizedAdjacency {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    /// `(row, col, value)` for every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k]))
        })
    }

    /// `Ã · m` for an `n × c` dense matrix.
    pub fn apply(&self, m: &Tensor) -> Result<Tensor> {
        if !m.is_matrix() || m.rows() != self.n {
            return Err(NoradError::dim("normalized adjacency apply", &[self.n, self.n], m.shape()));
        }
        let c = m.cols();
        let mut out = Tensor::zeros(&[self.n, c]);
        for i in 0..self.n {
            let dst = out.row_mut(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (j, v) = (self.cols[k], self.vals[k]);
                for (o, x) in dst.iter_mut().zip(m.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut d = Tensor::zeros(&[self.n, self.n]);
        for (i, j, v) in self.entries() {
            d.set(i, j, v);
        }
        d
    }
}
