//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation appends one node holding its output value and whatever
//! the backward pass needs. Nodes are only ever appended, so node order is a
//! topological order and the reverse sweep visits each node once.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, numerics_err, shape_err, Result};
use crate::linalg::{gemm, Window};
use crate::nn;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation defined outside this crate.
///
/// The caller computes the forward value; the tape calls `backward` with the
/// gradient flowing into the output and expects one gradient per input
/// (`None` meaning zero).
pub trait CustomOp<T: Real> {
    fn name(&self) -> &str;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

enum Op<T: Real> {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Conv2d { x: Var, w: Var, b: Var, cols: Vec<T>, win: Window },
    ConvT2d { x: Var, w: Var, b: Var, win: Window },
    GlobalAvgPool(Var),
    CrossEntropy { probs: Var, labels: Tensor<T> },
    MeanSquaredError(Var, Var),
    MeanAbsoluteError(Var, Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(BinaryKind::Add, ..) => "add",
            Op::Binary(BinaryKind::Sub, ..) => "sub",
            Op::Binary(BinaryKind::Mul, ..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT2d { .. } => "conv2d_transpose",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::MeanSquaredError(..) => "mse",
            Op::MeanAbsoluteError(..) => "mae",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Binary(_, a, b)
            | Op::MatMul(a, b)
            | Op::AddRowBias(a, b)
            | Op::MeanSquaredError(a, b)
            | Op::MeanAbsoluteError(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GlobalAvgPool(a) => vec![*a],
            Op::Conv2d { x, w, b, .. } | Op::ConvT2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::CrossEntropy { probs, .. } => vec![*probs],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Probability floor applied before the logarithm in cross-entropy.
pub const CROSS_ENTROPY_EPS: f64 = 1e-7;

/// Per-node gradients produced by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `var`, or `None` if `var` does not require gradients or
    /// the seed does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Record of one forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.name()
    }

    /// Inputs of the node, in recording order.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Records a leaf; gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(numerics_err!("{} produced a non-finite value", op.name()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: value.with_requires_grad(requires_grad), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Elementwise `a op b`; either side may be a one-element tensor.
    pub fn ewise(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let f = |p: T, q: T| match kind {
            BinaryKind::Add => p + q,
            BinaryKind::Sub => p - q,
            BinaryKind::Mul => p * q,
        };
        let out = if x.shape() == y.shape() {
            x.zip_map(y, f)?
        } else if y.is_scalar() {
            let q = y.data()[0];
            x.map(|p| f(p, q))
        } else if x.is_scalar() {
            let p = x.data()[0];
            y.map(|q| f(p, q))
        } else {
            return Err(shape_err!("elementwise {:?} of {:?} and {:?}", kind, x.shape(), y.shape()));
        };
        self.push(out, Op::Binary(kind, a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(BinaryKind::Mul, a, b)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k, n) = match (x.shape(), y.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (xs, ys) => return Err(shape_err!("matmul of {:?} and {:?}", xs, ys)),
        };
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, k, n, x.data(), y.data(), &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a `[c]` bias to every row of a `[B, c]` tensor.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = match xv.shape() {
            &[_, c] if bv.shape() == [c] => c,
            xs => return Err(shape_err!("row bias {:?} for input {:?}", bv.shape(), xs)),
        };
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, &bias) in row.iter_mut().zip(bv.data()) {
                *o += bias;
            }
        }
        self.push(out, Op::AddRowBias(x, b))
    }

    /// `x · w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    /// Row-wise softmax over the last axis of a `[B, c]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = match xv.shape() {
            &[_, c] => c,
            s => return Err(shape_err!("softmax expects [B, c], got {:?}", s)),
        };
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / T::from_f64(xv.len() as f64));
        self.push(out, Op::Mean(x))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let fwd = nn::conv2d_forward(self.value(x), self.value(w), self.value(b), stride)?;
        self.push(fwd.out, Op::Conv2d { x, w, b, cols: fwd.cols, win: fwd.win })
    }

    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (out, win) = nn::conv_t_forward(self.value(x), self.value(w), self.value(b))?;
        self.push(out, Op::ConvT2d { x, w, b, win })
    }

    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (b, c, hw) = match xv.shape() {
            &[b, c, h, w] => (b, c, h * w),
            s => return Err(shape_err!("global_avg_pool expects [B, C, H, W], got {:?}", s)),
        };
        let inv = T::from_f64(1.0 / hw as f64);
        let data = xv.data().chunks_exact(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(&[b, c], data)?;
        self.push(out, Op::GlobalAvgPool(x))
    }

    /// Batch mean of `-Σ y log(max(p, ε))` for one-hot `labels`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &Tensor<T>) -> Result<Var> {
        let p = self.value(probs);
        p.expect_same_shape(labels)?;
        let c = match p.shape() {
            &[_, c] => c,
            s => return Err(shape_err!("cross_entropy expects [B, c], got {:?}", s)),
        };
        for (i, row) in labels.data().chunks_exact(c).enumerate() {
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != c - 1 {
                return Err(contract_err!("label row {} is not one-hot", i));
            }
        }
        for (i, row) in p.data().chunks_exact(c).enumerate() {
            let total: f64 = row.iter().map(|v| v.as_f64()).sum();
            if (total - 1.0).abs() > 1e-5 {
                return Err(contract_err!("probability row {} sums to {}", i, total));
            }
        }
        let eps = T::from_f64(CROSS_ENTROPY_EPS);
        let batch = T::from_f64(p.shape()[0] as f64);
        let loss: T = p
            .data()
            .iter()
            .zip(labels.data())
            .filter(|(_, &y)| y != T::zero())
            .map(|(&q, &y)| -y * q.max(eps).min(T::one()).ln())
            .sum();
        let out = Tensor::scalar(loss / batch);
        self.push(out, Op::CrossEntropy { probs, labels: labels.clone() })
    }

    /// Mean over all elements of `(a - b)²`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.expect_same_shape(y)?;
        let total: T = x.data().iter().zip(y.data()).map(|(&p, &q)| (p - q) * (p - q)).sum();
        let out = Tensor::scalar(total / T::from_f64(x.len() as f64));
        self.push(out, Op::MeanSquaredError(a, b))
    }

    /// Mean over all elements of `|a - b|`.
    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.expect_same_shape(y)?;
        let total: T = x.data().iter().zip(y.data()).map(|(&p, &q)| (p - q).abs()).sum();
        let out = Tensor::scalar(total / T::from_f64(x.len() as f64));
        self.push(out, Op::MeanAbsoluteError(a, b))
    }

    /// Records an externally computed `output` of `op` applied to `inputs`.
    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var], output: Tensor<T>) -> Result<Var> {
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Gradients of a scalar `loss` w.r.t. every node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(contract_err!("backward needs a scalar loss, got shape {:?}", lv.shape()));
        }
        self.backward_with_seed(loss, Tensor::ones(lv.shape()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// through the tape. Leaves that require gradients but are unreachable
    /// get zero gradients.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.value(output).expect_same_shape(&seed)?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(seed);
        }
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].as_ref() else { continue };
            let contributions = self.node_backward(node, g)?;
            for (input, grad) in node.op.inputs().into_iter().zip(contributions) {
                let Some(grad) = grad else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if !grad.all_finite() {
                    return Err(numerics_err!("backward of {} produced a non-finite gradient", node.op.name()));
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign_tensor(&grad)?,
                    slot => *slot = Some(grad),
                }
            }
        }
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if matches!(node.op, Op::Leaf) && node.requires_grad && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary(kind, a, b) => {
                let (x, y) = (val(a), val(b));
                let ga = wants(a).then(|| {
                    let full = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.clone(),
                        BinaryKind::Mul => broadcast_mul(g, y),
                    };
                    reduce_to(full, x)
                });
                let gb = wants(b).then(|| {
                    let full = match kind {
                        BinaryKind::Add => g.clone(),
                        BinaryKind::Sub => g.map(|v| -v),
                        BinaryKind::Mul => broadcast_mul(g, x),
                    };
                    reduce_to(full, y)
                });
                vec![ga, gb]
            }
            Op::Scale(_, c) => vec![Some(g.map(|v| v * *c))],
            Op::MatMul(a, b) => {
                let (x, y) = (val(a), val(b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                let ga = wants(a).then(|| {
                    let mut d = vec![T::zero(); m * k];
                    gemm(false, true, m, n, k, g.data(), y.data(), &mut d, false);
                    Tensor::new(x.shape(), d).expect("matmul grad shape")
                });
                let gb = wants(b).then(|| {
                    let mut d = vec![T::zero(); k * n];
                    gemm(true, false, k, m, n, x.data(), g.data(), &mut d, false);
                    Tensor::new(y.shape(), d).expect("matmul grad shape")
                });
                vec![ga, gb]
            }
            Op::AddRowBias(_, b) => {
                let c = val(b).len();
                let mut db = vec![T::zero(); c];
                for row in g.data().chunks_exact(c) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![Some(g.clone()), Some(Tensor::new(&[c], db)?)]
            }
            Op::Relu(a) => vec![Some(val(a).zip_map(g, |x, g| if x > T::zero() { g } else { T::zero() })?)],
            Op::Sigmoid(_) => vec![Some(node.value.zip_map(g, |y, g| g * y * (T::one() - y))?)],
            Op::Softmax(_) => {
                let y = &node.value;
                let c = y.shape()[1];
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                vec![Some(Tensor::new(y.shape(), d)?)]
            }
            Op::Sum(a) => vec![Some(Tensor::full(val(a).shape(), g.data()[0]))],
            Op::Mean(a) => {
                let x = val(a);
                vec![Some(Tensor::full(x.shape(), g.data()[0] / T::from_f64(x.len() as f64)))]
            }
            Op::Conv2d { x, w, cols, win, .. } => {
                let (dx, dw, db) = nn::conv2d_backward(val(x).shape(), val(w), cols, win, g);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::ConvT2d { x, w, win, .. } => {
                let (dx, dw, db) = nn::conv_t_backward(val(x), val(w), win, g);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::GlobalAvgPool(a) => {
                let x = val(a);
                let hw = x.shape()[2] * x.shape()[3];
                let inv = T::from_f64(1.0 / hw as f64);
                let mut d = Vec::with_capacity(x.len());
                for &v in g.data() {
                    d.extend(core::iter::repeat_n(v * inv, hw));
                }
                vec![Some(Tensor::new(x.shape(), d)?)]
            }
            Op::CrossEntropy { probs, labels } => {
                let p = val(probs);
                let eps = T::from_f64(CROSS_ENTROPY_EPS);
                let scale = g.data()[0] / T::from_f64(p.shape()[0] as f64);
                let d = p.zip_map(labels, |q, y| {
                    if y == T::zero() || q < eps || q > T::one() {
                        T::zero()
                    } else {
                        -scale * y / q
                    }
                })?;
                vec![Some(d)]
            }
            Op::MeanSquaredError(a, b) => {
                let x = val(a);
                let k = g.data()[0] * T::from_f64(2.0 / x.len() as f64);
                let diff = x.zip_map(val(b), |p, q| (p - q) * k)?;
                let neg = diff.map(|v| -v);
                vec![Some(diff), Some(neg)]
            }
            Op::MeanAbsoluteError(a, b) => {
                let x = val(a);
                let k = g.data()[0] / T::from_f64(x.len() as f64);
                let d = x.zip_map(val(b), |p, q| {
                    if p > q {
                        k
                    } else if p < q {
                        -k
                    } else {
                        T::zero()
                    }
                })?;
                let neg = d.map(|v| -v);
                vec![Some(d), Some(neg)]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(val).collect();
                let out = op.backward(&ins, &node.value, g);
                if out.len() != inputs.len() {
                    return Err(contract_err!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        out.len(),
                        inputs.len()
                    ));
                }
                for (grad, input) in out.iter().zip(&ins) {
                    if let Some(grad) = grad {
                        input.expect_same_shape(grad)?;
                    }
                }
                out
            }
        })
    }

    /// Short human-readable listing, one node per line.
    pub fn describe(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "%{} = {}{:?} {:?}", i, n.op.name(), n.op.inputs(), n.value.shape());
        }
        s
    }
}

/// Elementwise product where `other` may be a one-element tensor.
fn broadcast_mul<T: Real>(g: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    if other.shape() == g.shape() {
        g.zip_map(other, |a, b| a * b).expect("same shape")
    } else {
        let s = other.data()[0];
        g.map(|a| a * s)
    }
}

/// Sums a broadcast gradient back down to the shape of `target`.
fn reduce_to<T: Real>(full: Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if full.shape() == target.shape() {
        full
    } else {
        Tensor::full(target.shape(), full.sum())
    }
}
