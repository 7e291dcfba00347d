//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Leaves are either
//! constants or bound parameters (identified by their slot in a
//! [`ParamSet`]); every other node records the operation that produced it.
//! [`Tape::backward`] walks the nodes in reverse insertion order, which is a
//! valid topological order because operands always precede their results.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NoradError, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Hadamard,
    Scale,
    Offset,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Softplus,
    LogSigmoid,
    Clamp,
    Abs,
    Sum,
    Mean,
    SumAxis,
    MeanAxis,
    RowL2Normalize,
    BernoulliLogLik,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Hadamard,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Softplus,
    Scale(OrderedScalar),
}

/// Scalar carried by [`Elementwise::Scale`]; compared bitwise.
#[derive(Clone, Copy, Debug)]
pub struct OrderedScalar(pub f64);

impl PartialEq for OrderedScalar {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}
impl Eq for OrderedScalar {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    LogSigmoid(Var),
    Clamp(Var, f64, f64),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    RowL2Normalize(Var),
    BernoulliLogLik {
        logits: Var,
        targets: Arc<Tensor>,
        pos_weight: f64,
        exclude_diagonal: bool,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Scale(..) => OpKind::Scale,
            Op::Offset(..) => OpKind::Offset,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Softplus(_) => OpKind::Softplus,
            Op::LogSigmoid(_) => OpKind::LogSigmoid,
            Op::Clamp(..) => OpKind::Clamp,
            Op::Abs(_) => OpKind::Abs,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::SumAxis(..) => OpKind::SumAxis,
            Op::MeanAxis(..) => OpKind::MeanAxis,
            Op::RowL2Normalize(_) => OpKind::RowL2Normalize,
            Op::BernoulliLogLik { .. } => OpKind::BernoulliLogLik,
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    param: Option<usize>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)`, finite for any finite `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `log(1 + eˣ)` as `max(x, 0) + log1p(e^{-|x|})`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Scales the backward rule of every `kind` node by `factor`. Used only to
    /// validate that the gradient checker detects a broken derivative.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Leaf bound to parameter slot `slot`.
    pub fn param(&mut self, slot: usize, value: Tensor) -> Var {
        let v = self.push(Op::Leaf, value);
        self.nodes[v.0].param = Some(slot);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NoradError::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Hadamard(a, b), out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| s * x);
        self.push(Op::Scale(a, s), out)
    }

    /// Adds a scalar to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if let Some(bad) = v.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(NoradError::Domain(format!("log of non-positive value {bad}")));
        }
        let out = v.map(f64::ln);
        Ok(self.push(Op::Log(a), out))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(Op::Softplus(a), out)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid);
        self.push(Op::LogSigmoid(a), out)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the input lies outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), out)
    }

    /// `|x|`, with subgradient 0 at the origin.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), out)
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need = |b: Option<Var>| {
            b.ok_or_else(|| NoradError::Contract("binary op needs two operands".into()))
        };
        match op {
            Elementwise::Add => self.add(a, need(b)?),
            Elementwise::Sub => self.sub(a, need(b)?),
            Elementwise::Hadamard => self.hadamard(a, need(b)?),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Relu => Ok(self.relu(a)),
            Elementwise::Exp => Ok(self.exp(a)),
            Elementwise::Log => self.log(a),
            Elementwise::Softplus => Ok(self.softplus(a)),
            Elementwise::Scale(s) => Ok(self.scale(a, s.0)),
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(Op::Mean(a), out)
    }

    /// Reduction over all elements, or along `axis` of a matrix keeping the
    /// reduced dimension with extent 1.
    pub fn reduce(&mut self, op: Reduce, a: Var, axis: Option<usize>) -> Result<Var> {
        match (op, axis) {
            (Reduce::Sum, None) => Ok(self.sum(a)),
            (Reduce::Mean, None) => Ok(self.mean(a)),
            (op, Some(axis)) => {
                let v = self.value(a);
                if !v.is_matrix() || axis > 1 {
                    return Err(NoradError::dim("reduce axis", v.shape(), &[axis]));
                }
                let (r, c) = (v.rows(), v.cols());
                let mut out = if axis == 0 {
                    Tensor::zeros(&[1, c])
                } else {
                    Tensor::zeros(&[r, 1])
                };
                for i in 0..r {
                    for j in 0..c {
                        let idx = if axis == 0 { j } else { i };
                        out.data_mut()[idx] += v.get(i, j);
                    }
                }
                if op == Reduce::Mean {
                    let count = if axis == 0 { r } else { c } as f64;
                    out.data_mut().iter_mut().for_each(|x| *x /= count);
                }
                let node = match op {
                    Reduce::Sum => Op::SumAxis(a, axis),
                    Reduce::Mean => Op::MeanAxis(a, axis),
                };
                Ok(self.push(node, out))
            }
        }
    }

    /// Scales each row to unit Euclidean norm; all-zero rows stay zero.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if !v.is_matrix() {
            return Err(NoradError::dim("row_l2_normalize", v.shape(), &[]));
        }
        let mut out = v.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Ok(self.push(Op::RowL2Normalize(a), out))
    }

    /// `Σ w·t·log σ(L) + (1−t)·log(1−σ(L))` over all entries of `logits`
    /// (or all off-diagonal entries when `exclude_diagonal`), with
    /// `w = pos_weight`.
    pub fn bernoulli_log_likelihood(
        &mut self,
        logits: Var,
        targets: Arc<Tensor>,
        pos_weight: f64,
        exclude_diagonal: bool,
    ) -> Result<Var> {
        let l = self.value(logits);
        if l.shape() != targets.shape() {
            return Err(NoradError::dim("bernoulli_log_likelihood", l.shape(), targets.shape()));
        }
        if exclude_diagonal && (!l.is_matrix() || l.rows() != l.cols()) {
            return Err(NoradError::Contract(
                "diagonal exclusion needs a square logit matrix".into(),
            ));
        }
        let total = bernoulli_ll_value(l, &targets, pos_weight, exclude_diagonal);
        Ok(self.push(
            Op::BernoulliLogLik {
                logits,
                targets,
                pos_weight,
                exclude_diagonal,
            },
            Tensor::scalar(total),
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(NoradError::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(self.value(output).shape()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let factor = match self.fault {
                Some((kind, f)) if kind == node.op.kind() => f,
                _ => 1.0,
            };
            self.propagate(&node.op, &node.value, &g, factor, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut by_param = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let (Some(slot), Some(g)) = (node.param, grads[idx].as_ref()) {
                by_param
                    .entry(slot)
                    .and_modify(|acc: &mut Tensor| acc.add_assign(g))
                    .or_insert_with(|| g.clone());
            }
        }
        Ok(Gradients {
            nodes: grads,
            by_param,
        })
    }

    fn propagate(
        &self,
        op: &Op,
        value: &Tensor,
        g: &Tensor,
        factor: f64,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let mut acc = |v: Var, contrib: Tensor| {
            let contrib = if factor != 1.0 {
                contrib.map(|x| x * factor)
            } else {
                contrib
            };
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, gemm(g, false, self.value(*b), true)?);
                acc(*b, gemm(self.value(*a), true, g, false)?);
            }
            Op::Transpose(a) => acc(*a, g.transpose()?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gi, bi| gi * bi));
                acc(*b, g.zip_map(self.value(*a), |gi, ai| gi * ai));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => acc(*a, g.zip_map(value, |gi, y| gi * y * (1.0 - y))),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
            ),
            Op::Exp(a) => acc(*a, g.zip_map(value, |gi, y| gi * y)),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |gi, x| gi / x)),
            Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |gi, x| gi * sigmoid(x))),
            Op::LogSigmoid(a) => acc(*a, g.zip_map(self.value(*a), |gi, x| gi * sigmoid(-x))),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(self.value(*a), |gi, x| {
                    if x >= *lo && x <= *hi {
                        gi
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Abs(a) => acc(
                *a,
                g.zip_map(self.value(*a), |gi, x| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Sum(a) => {
                let s = g.item();
                acc(*a, Tensor::filled(self.value(*a).shape(), s));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                acc(*a, Tensor::filled(v.shape(), g.item() / v.len() as f64));
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let v = self.value(*a);
                let (r, c) = (v.rows(), v.cols());
                let scale = match op {
                    Op::MeanAxis(..) => 1.0 / (if *axis == 0 { r } else { c }) as f64,
                    _ => 1.0,
                };
                let mut out = Tensor::zeros(v.shape());
                for i in 0..r {
                    for j in 0..c {
                        let gi = if *axis == 0 { g.data()[j] } else { g.data()[i] };
                        out.set(i, j, gi * scale);
                    }
                }
                acc(*a, out);
            }
            Op::RowL2Normalize(a) => {
                let x = self.value(*a);
                let mut out = Tensor::zeros(x.shape());
                for i in 0..x.rows() {
                    let xr = x.row(i);
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let yr = value.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(y, gg)| y * gg).sum();
                    for (o, (y, gg)) in out.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = (gg - y * dot) / norm;
                    }
                }
                acc(*a, out);
            }
            Op::BernoulliLogLik {
                logits,
                targets,
                pos_weight,
                exclude_diagonal,
            } => {
                let l = self.value(*logits);
                let s = g.item();
                let cols = l.cols();
                let mut out = Tensor::zeros(l.shape());
                for (idx, (o, (&li, &ti))) in out
                    .data_mut()
                    .iter_mut()
                    .zip(l.data().iter().zip(targets.data()))
                    .enumerate()
                {
                    if *exclude_diagonal && idx / cols == idx % cols {
                        continue;
                    }
                    *o = s * (pos_weight * ti * sigmoid(-li) - (1.0 - ti) * sigmoid(li));
                }
                acc(*logits, out);
            }
        }
        Ok(())
    }
}

pub(crate) fn bernoulli_ll_value(
    logits: &Tensor,
    targets: &Tensor,
    pos_weight: f64,
    exclude_diagonal: bool,
) -> f64 {
    let cols = logits.cols();
    let mut total = 0.0;
    for (idx, (&l, &t)) in logits.data().iter().zip(targets.data()).enumerate() {
        if exclude_diagonal && idx / cols == idx % cols {
            continue;
        }
        let mut term = 0.0;
        if t != 0.0 {
            term += pos_weight * t * log_sigmoid(l);
        }
        if t != 1.0 {
            term += (1.0 - t) * log_sigmoid(-l);
        }
        total += term;
    }
    total
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    by_param: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient with respect to any node, `None` if unreachable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Accumulated gradient for a parameter slot, summed over every leaf
    /// bound to that slot.
    pub fn param(&self, slot: usize) -> Option<&Tensor> {
        self.by_param.get(&slot)
    }
}

/// A named tensor in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named parameter collection; names are unique.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<usize> {
        if self.slot(name).is_some() {
            return Err(NoradError::Contract(format!("duplicate parameter name {name}")));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(self.params.len() - 1)
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|s| &self.params[s].tensor)
    }

    pub fn tensor(&self, slot: usize) -> &Tensor {
        &self.params[slot].tensor
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.params[slot].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Puts parameter `name` on the tape: trainable parameters become
    /// parameter leaves, frozen ones become constants.
    pub fn bind(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let slot = self
            .slot(name)
            .ok_or_else(|| NoradError::Contract(format!("unknown parameter {name}")))?;
        let p = &self.params[slot];
        Ok(if p.trainable {
            tape.param(slot, p.tensor.clone())
        } else {
            tape.constant(p.tensor.clone())
        })
    }

    /// Puts parameter `name` on the tape as a constant regardless of its
    /// trainable flag.
    pub fn bind_const(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let t = self
            .get(name)
            .ok_or_else(|| NoradError::Contract(format!("unknown parameter {name}")))?;
        Ok(tape.constant(t.clone()))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(s) = self.slot(name) {
            self.params[s].trainable = trainable;
        }
    }

    /// Gradient for every parameter, zero where unreachable.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.params
            .iter()
            .enumerate()
            .map(|(slot, p)| {
                grads
                    .param(slot)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))
            })
            .collect()
    }
}
