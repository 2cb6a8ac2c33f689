//! Tape-based reverse-mode automatic differentiation.
//!
//! Operations append nodes to a [`Tape`] in execution order, so every node's
//! inputs precede it. [`Tape::backward`] walks the nodes in exact reverse
//! order and adds the resulting adjoints of parameter leaves into the tape's
//! gradient accumulators. Accumulators persist across calls until
//! [`Tape::zero_grad`].

use std::rc::Rc;

use crate::tensor::{sigmoid, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m × n` plus a broadcast `1 × n` row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Rows { input: Var, start: usize },
    Cols { input: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    Bce { pred: Var, labels: Rc<[f64]>, eps: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter leaf reaches this node.
    tracked: bool,
}

#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Finite checks on op outputs follow `debug_assertions`.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated `∂loss/∂v` for a parameter leaf, if any backward pass
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if self.check_finite && value.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { context: name });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        Ok(self.push_unchecked(value, op, tracked))
    }

    fn check(&self, v: Var) -> Result<&Tensor, TensorError> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownNode(v.0))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.check(a)?.matmul(self.check(b)?)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, TensorError> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds the `1 × n` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.check(x)?, self.check(bias)?);
        let (m, n) = tx.dims2()?;
        if tb.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (o, &bv) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let value = Tensor::from_parts(vec![m, n], data);
        self.push("add_row", value, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        self.unary("scale", a, Op::Scale(a, factor), move |v| v * factor)
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let t = self.check(a)?;
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        self.push(name, value, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("relu", a, Op::Relu(a), |v| v.max(0.0))
    }

    /// Joins matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::EmptyConcat)?;
        let (r0, c0) = self.check(first)?.dims2()?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.check(p)?;
            let (r, c) = t.dims2()?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                other => return Err(TensorError::Axis(other)),
            };
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            dims.push((r, c));
        }
        let value = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_parts(vec![rows, c0], data)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                }
            }
            Tensor::from_parts(vec![r0, cols], data)
        };
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push("concat", value, op, parts)
    }

    /// Rows `start..start + len` of a matrix.
    pub fn rows(&mut self, input: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.check(input)?;
        let (r, c) = t.dims2()?;
        if start + len > r {
            return Err(TensorError::OutOfRange {
                op: "rows",
                start,
                end: start + len,
                extent: r,
            });
        }
        let value = Tensor::from_parts(vec![len, c], t.data()[start * c..(start + len) * c].to_vec());
        self.push("rows", value, Op::Rows { input, start }, &[input])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn cols(&mut self, input: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.check(input)?;
        let (r, c) = t.dims2()?;
        if start + len > c {
            return Err(TensorError::OutOfRange {
                op: "cols",
                start,
                end: start + len,
                extent: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let value = Tensor::from_parts(vec![r, len], data);
        self.push("cols", value, Op::Cols { input, start }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let t = self.check(input)?;
        if shape.iter().product::<usize>() != t.numel() {
            return Err(TensorError::ValueCount {
                shape,
                len: t.numel(),
            });
        }
        let value = Tensor::from_parts(shape, t.data().to_vec());
        self.push("reshape", value, Op::Reshape(input), &[input])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let total = self.check(a)?.data().iter().sum();
        self.push("sum", Tensor::from_parts(vec![1, 1], vec![total]), Op::Sum(a), &[a])
    }

    /// Summed binary cross-entropy `−Σ [(1−y) ln(1−p) + y ln p]` with `p`
    /// clamped into `[eps, 1 − eps]`. The gradient is zero where the clamp
    /// is active.
    pub fn bce(&mut self, pred: Var, labels: &[f64], eps: f64) -> Result<Var, TensorError> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(TensorError::ClampEpsilon(eps));
        }
        let p = self.check(pred)?;
        if p.numel() != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                lhs: p.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let loss = bce_sum(p.data(), labels, eps);
        let op = Op::Bce {
            pred,
            labels: labels.into(),
            eps,
        };
        self.push("bce", Tensor::from_parts(vec![1, 1], vec![loss]), op, &[pred])
    }

    /// Reverse pass from a scalar node. Adjoints of parameter leaves are added
    /// to the accumulators read by [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let root = self.check(loss)?;
        if !root.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(d) = adj[i].take() else { continue };
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let target = &nodes[v.0];
                if target.tracked {
                    let slot = adj[v.0].get_or_insert_with(|| vec![0.0; target.value.numel()]);
                    f(slot);
                }
            };
            match &node.op {
                Op::Leaf => {
                    let slot = &mut self.grads[i];
                    match slot {
                        Some(g) => g.data_mut().iter_mut().zip(&d).for_each(|(g, x)| *g += x),
                        None => *slot = Some(Tensor::from_parts(node.value.shape().to_vec(), d)),
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = ta.dims2()?;
                    let n = tb.cols();
                    acc(*a, &mut |ga| {
                        for i in 0..m {
                            for p in 0..k {
                                let b_row = &tb.data()[p * n..(p + 1) * n];
                                let d_row = &d[i * n..(i + 1) * n];
                                ga[i * k + p] += d_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    acc(*b, &mut |gb| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = ta.data()[i * k + p];
                                for (g, x) in gb[p * n..(p + 1) * n].iter_mut().zip(&d[i * n..(i + 1) * n]) {
                                    *g += aip * x;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |g| add_into(g, &d));
                    acc(*b, &mut |g| add_into(g, &d));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |g| add_into(g, &d));
                    acc(*b, &mut |g| g.iter_mut().zip(&d).for_each(|(g, x)| *g -= x));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |g| {
                        for ((g, x), y) in g.iter_mut().zip(&d).zip(tb) {
                            *g += x * y;
                        }
                    });
                    acc(*b, &mut |g| {
                        for ((g, x), y) in g.iter_mut().zip(&d).zip(ta) {
                            *g += x * y;
                        }
                    });
                }
                Op::AddRow(x, bias) => {
                    acc(*x, &mut |g| add_into(g, &d));
                    acc(*bias, &mut |g| {
                        let n = g.len();
                        for chunk in d.chunks(n) {
                            add_into(g, chunk);
                        }
                    });
                }
                Op::Scale(a, factor) => {
                    acc(*a, &mut |g| g.iter_mut().zip(&d).for_each(|(g, x)| *g += factor * x));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    acc(*a, &mut |g| {
                        for ((g, x), y) in g.iter_mut().zip(&d).zip(y) {
                            *g += x * y * (1.0 - y);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    acc(*a, &mut |g| {
                        for ((g, x), y) in g.iter_mut().zip(&d).zip(y) {
                            *g += x * (1.0 - y * y);
                        }
                    });
                }
                Op::Relu(a) => {
                    let input = nodes[a.0].value.data();
                    acc(*a, &mut |g| {
                        for ((g, x), z) in g.iter_mut().zip(&d).zip(input) {
                            if *z > 0.0 {
                                *g += x;
                            }
                        }
                    });
                }
                Op::Concat { parts, axis } => {
                    let total_cols = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = nodes[p.0].value.dims2()?;
                        if *axis == 0 {
                            let span = &d[offset * total_cols..(offset + r) * total_cols];
                            acc(p, &mut |g| add_into(g, span));
                            offset += r;
                        } else {
                            acc(p, &mut |g| {
                                for i in 0..r {
                                    let src = &d[i * total_cols + offset..i * total_cols + offset + c];
                                    add_into(&mut g[i * c..(i + 1) * c], src);
                                }
                            });
                            offset += c;
                        }
                    }
                }
                Op::Rows { input, start } => {
                    let c = node.value.cols();
                    let start = *start;
                    acc(*input, &mut |g| add_into(&mut g[start * c..start * c + d.len()], &d));
                }
                Op::Cols { input, start } => {
                    let (r, len) = node.value.dims2()?;
                    let c = nodes[input.0].value.cols();
                    let start = *start;
                    acc(*input, &mut |g| {
                        for i in 0..r {
                            add_into(&mut g[i * c + start..i * c + start + len], &d[i * len..(i + 1) * len]);
                        }
                    });
                }
                Op::Reshape(a) => acc(*a, &mut |g| add_into(g, &d)),
                Op::Sum(a) => {
                    let upstream = d[0];
                    acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += upstream));
                }
                Op::Bce { pred, labels, eps } => {
                    let p = nodes[pred.0].value.data();
                    let upstream = d[0];
                    acc(*pred, &mut |g| {
                        for ((g, &pv), &y) in g.iter_mut().zip(p).zip(labels.iter()) {
                            if pv > *eps && pv < 1.0 - eps {
                                *g += upstream * ((1.0 - y) / (1.0 - pv) - y / pv);
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Summed clamped binary cross-entropy over paired entries.
pub(crate) fn bce_sum(pred: &[f64], labels: &[f64], eps: f64) -> f64 {
    pred.iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -((1.0 - y) * (1.0 - p).ln() + y * p.ln())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let p = tape.param(t(&[vec![0.3, -2.0, 5.0], vec![1.0, 1.0, 4.0]]));
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn sigmoid_slope_at_origin() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0).unwrap());
        let x = tape.constant(Tensor::scalar(1.0).unwrap());
        let wx = tape.matmul(w, x).unwrap();
        let y = tape.sigmoid(wx).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[0.25]);
    }

    #[test]
    fn tanh_of_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0).unwrap());
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
    }

    #[test]
    fn concat_columns_shape() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![4, 3]));
        let b = tape.constant(Tensor::zeros(vec![4, 3]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).shape(), &[4, 6]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::zeros(vec![2, 2]));
        assert!(matches!(tape.backward(p), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut tape = Tape::new();
        let p = tape.param(t(&[vec![1.0, 2.0]]));
        let q = tape.mul(p, p).unwrap();
        let s = tape.sum(q).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(tape.grad(p).is_none());
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[vec![1.0, 2.0]]));
        let p = tape.param(t(&[vec![3.0, 4.0]]));
        let m = tape.mul(c, p).unwrap();
        let s = tape.sum(m).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn finite_checks_catch_overflow() {
        let mut tape = Tape::with_finite_checks(true);
        let x = tape.constant(Tensor::scalar(1e300).unwrap());
        let y = tape.mul(x, x);
        assert!(matches!(y, Err(TensorError::NonFinite { context: "mul" })));
    }

    #[test]
    fn bce_value_and_clamp() {
        let mut tape = Tape::new();
        let p = tape.param(t(&[vec![0.5]]));
        let l = tape.bce(p, &[1.0], 1e-7).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(tape.bce(p, &[1.0], 0.5).is_err());
    }
}
