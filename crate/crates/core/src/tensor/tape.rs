use super::{axis_extents, matmul_into, transpose_data, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    L2Norm(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive operations. Nodes are appended in evaluation
/// order, so every node's inputs precede it and a single reverse sweep
/// visits each node once.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var` with zeros standing in for "no dependence".
    pub fn wrt(&self, tape: &Tape, var: Var) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(var).numel()])
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `rhs` may equal `lhs` in shape or match its trailing dims.
fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

/// Sums `grad` (shaped like the lhs) down onto a broadcast rhs of `n` values.
fn reduce_to(grad: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for chunk in grad.chunks(n) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = ta.matmul(tb)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != ta.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::new(shape.to_vec(), ta.data().to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta.shape(), tb.shape()) {
            return Err(mismatch(op_name, ta, tb));
        }
        let n = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % n]))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    /// Elementwise `a + b`; `b` may broadcast over leading dims of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push(out, op, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Natural log. Callers clamp probabilities before taking logs.
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        let rank = self.value(a).rank();
        if axis >= rank {
            return Err(Error::invalid(
                op,
                format!("axis {axis} out of range for rank {rank}"),
            ));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let ta = self.value(a);
        let (outer, len, inner) = axis_extents(ta.shape(), axis);
        let x = ta.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (x[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Softmax(a, axis), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.data().iter().sum::<f64>() / ta.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sum along `axis`, keeping it as a length-1 dimension.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", a, axis)?;
        let ta = self.value(a);
        let (outer, len, inner) = axis_extents(ta.shape(), axis);
        let x = ta.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * len + j) * inner + i];
                }
            }
        }
        let out = Tensor::new(keepdim(ta.shape(), axis), out)?;
        Ok(self.push(out, Op::SumAxis(a, axis), &[a]))
    }

    /// Euclidean norm along `axis`, keeping it as a length-1 dimension.
    pub fn l2_norm(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("l2_norm", a, axis)?;
        let ta = self.value(a);
        let (outer, len, inner) = axis_extents(ta.shape(), axis);
        let x = ta.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + j) * inner + i];
                    out[o * inner + i] += v * v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        let out = Tensor::new(keepdim(ta.shape(), axis), out)?;
        Ok(self.push(out, Op::L2Norm(a, axis), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        self.check_axis("concat", *first, axis)?;
        let base = self.value(*first).shape().to_vec();
        let mut total_len = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", self.value(*first), self.value(p)));
            }
            total_len += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total_len;
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", a, axis)?;
        let ta = self.value(a);
        let (outer, full, inner) = axis_extents(ta.shape(), axis);
        if start + len > full {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} exceeds axis length {full}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&ta.data()[from..from + len * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Slice { input: a, axis, start }, &[a]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, g: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, v)| *e += v),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].requires_grad {
                    // dA = dC · Bᵀ
                    let bt = transpose_data(tb.data(), k, n);
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, &bt, &mut da, m, n, k);
                    self.accumulate(grads, a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · dC
                    let at = transpose_data(ta.data(), m, k);
                    let mut db = vec![0.0; k * n];
                    matmul_into(&at, g, &mut db, k, m, n);
                    self.accumulate(grads, b, db);
                }
            }
            Op::Transpose(a) => {
                let s = self.value(a).shape();
                self.accumulate(grads, a, transpose_data(g, s[1], s[0]));
            }
            Op::Reshape(a) | Op::AddScalar(a) => self.accumulate(grads, a, g.to_vec()),
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                let n = self.value(b).numel();
                self.accumulate(grads, b, reduce_to(g, n));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                let n = self.value(b).numel();
                let db = reduce_to(g, n).into_iter().map(|v| -v).collect();
                self.accumulate(grads, b, db);
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(a).data(), self.value(b).data());
                let n = xb.len();
                let da = g.iter().enumerate().map(|(i, gi)| gi * xb[i % n]).collect();
                self.accumulate(grads, a, da);
                let prod: Vec<f64> = g.iter().zip(xa).map(|(gi, x)| gi * x).collect();
                self.accumulate(grads, b, reduce_to(&prod, n));
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.value(a).data(), self.value(b).data());
                let n = xb.len();
                let da = g.iter().enumerate().map(|(i, gi)| gi / xb[i % n]).collect();
                self.accumulate(grads, a, da);
                let prod: Vec<f64> = g
                    .iter()
                    .zip(xa)
                    .enumerate()
                    .map(|(i, (gi, x))| -gi * x / (xb[i % n] * xb[i % n]))
                    .collect();
                self.accumulate(grads, b, reduce_to(&prod, n));
            }
            Op::MulScalar(a, s) => self.accumulate(grads, a, g.iter().map(|v| v * s).collect()),
            Op::Sigmoid(a) => {
                let d = g.iter().zip(y).map(|(gi, s)| gi * s * (1.0 - s)).collect();
                self.accumulate(grads, a, d);
            }
            Op::Ln(a) => {
                let x = self.value(a).data();
                self.accumulate(grads, a, g.iter().zip(x).map(|(gi, xi)| gi / xi).collect());
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(gi, &xi)| if (lo..=hi).contains(&xi) { *gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, a, d);
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_extents(node.value.shape(), axis);
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            d[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::Sum(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0] / n as f64; n]);
            }
            Op::SumAxis(a, axis) => {
                let (outer, len, inner) = axis_extents(self.value(a).shape(), axis);
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            d[(o * len + j) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::L2Norm(a, axis) => {
                let x = self.value(a).data();
                let (outer, len, inner) = axis_extents(self.value(a).shape(), axis);
                let mut d = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let norm = y[o * inner + i];
                        if norm == 0.0 {
                            continue;
                        }
                        let scale = g[o * inner + i] / norm;
                        for j in 0..len {
                            let k = (o * len + j) * inner + i;
                            d[k] = scale * x[k];
                        }
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::Concat(ref parts, axis) => {
                let (outer, total, inner) = axis_extents(node.value.shape(), axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[axis];
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        d.extend_from_slice(&g[from..from + len * inner]);
                    }
                    offset += len;
                    self.accumulate(grads, p, d);
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, full, inner) = axis_extents(self.value(input).shape(), axis);
                let len = node.value.shape()[axis];
                let mut d = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    let from = o * len * inner;
                    d[to..to + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                self.accumulate(grads, input, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).item().unwrap(), 0.5);
    }

    #[test]
    fn softmax_of_uniform_row_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![2.5; 3]).unwrap());
        let s = tape.softmax(x, 1).unwrap();
        for &v in tape.value(s).data() {
            assert!(approx(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![1000.0, 0.0, -1000.0, 5.0]).unwrap());
        let s = tape.softmax(x, 0).unwrap();
        let v = tape.value(s).data();
        assert!(v.iter().all(|p| p.is_finite()));
        assert!(approx(v[0] + v[2], 1.0, 1e-12));
        assert!(approx(v[1] + v[3], 1.0, 1e-12));
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.5 - 2.0).collect()).unwrap();
        let i3 = tape.constant(Tensor::identity(3));
        let xv = tape.constant(x.clone());
        let y = tape.matmul(i3, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"));
        assert!(err.contains("[2, 3]"));
    }

    #[test]
    fn add_broadcasts_trailing_dims_only() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let bias = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let col = tape.constant(Tensor::zeros(&[2]));
        let y = tape.add(a, bias).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(tape.add(a, col).is_err());
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_squared_sigmoid_by_hand() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(w);
        let sq = tape.mul(s, s).unwrap();
        let g = tape.backward(sq).unwrap();
        assert!(approx(g.get(w).unwrap()[0], 0.25, 1e-15));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.mul_scalar(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::NotScalar(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = u·u + u with u = 3x, shared versus rebuilt.
        let x0 = 0.7;
        let mut shared = Tape::new();
        let x = shared.leaf(Tensor::scalar(x0));
        let u = shared.mul_scalar(x, 3.0);
        let uu = shared.mul(u, u).unwrap();
        let f = shared.add(uu, u).unwrap();
        let g_shared = shared.backward(f).unwrap().get(x).unwrap()[0];

        let mut unshared = Tape::new();
        let x2 = unshared.leaf(Tensor::scalar(x0));
        let u1 = unshared.mul_scalar(x2, 3.0);
        let u2 = unshared.mul_scalar(x2, 3.0);
        let u3 = unshared.mul_scalar(x2, 3.0);
        let uu = unshared.mul(u1, u2).unwrap();
        let f2 = unshared.add(uu, u3).unwrap();
        let g_unshared = unshared.backward(f2).unwrap().get(x2).unwrap()[0];

        assert!(approx(g_shared, 18.0 * x0 + 3.0, 1e-12));
        assert!(approx(g_shared, g_unshared, 1e-12));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::scalar(1.5));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[2.0]);
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.5, 2.0]));
        let c = tape.clamp(x, 0.0, 1.0);
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.slice(c, 1, 2, 1).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(b).data());
        let s = tape.sum(back);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.get(a).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn l2_norm_of_zero_row_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap());
        let n = tape.l2_norm(x, 1).unwrap();
        assert_eq!(tape.value(n).data(), &[0.0, 5.0]);
        let s = tape.sum(n);
        let g = tape.backward(s).unwrap();
        let gx = g.get(x).unwrap();
        assert_eq!(&gx[..2], &[0.0, 0.0]);
        assert!((gx[2] - 0.6).abs() < 1e-15 && (gx[3] - 0.8).abs() < 1e-15);
    }
}
