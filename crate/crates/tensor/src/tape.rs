//! Reverse-mode tape.
//!
//! Every forward op appends a node holding its value, its inputs and
//! whatever it saved for the backward rule. Node ids grow monotonically, so
//! the order of the node list is already a topological order and a single
//! reverse sweep visits every node once.

use std::sync::Arc;

use crate::error::{mismatch, Result, TensorError};
use crate::gemm::gemm;
use crate::tensor::Tensor;

/// Layer-norm epsilon, added to the variance inside the square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean attention mask of shape `rows × cols`, broadcast over leading axes.
/// `true` marks an allowed position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(mismatch(
                "mask",
                format!("{} entries for {rows}×{cols}", allowed.len()),
            ));
        }
        for r in 0..rows {
            if !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a) {
                return Err(TensorError::InvalidArgument(format!(
                    "mask row {r} allows no position"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            allowed,
        })
    }

    /// Lower-triangular mask: row `i` may see columns `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|idx| idx % n <= idx / n).collect();
        Self {
            rows: n,
            cols: n,
            allowed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

/// User-supplied differentiable op with its own forward and backward rule.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Returns one gradient buffer per input, each the length of that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Linear { x: Var, w: Var, bias: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast { x: Var, y: Var },
    Scale { x: Var, factor: f64 },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse { pred: Var, target: Var },
    Custom { inputs: Vec<Var>, op: Arc<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient buffer of `v`, or `None` when `v` does not require grad or
    /// does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros when it does not reach the loss.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input ids of every recorded node, in recording order.
    pub fn dependencies(&self) -> Vec<Vec<Var>> {
        self.nodes.iter().map(|n| Self::inputs_of(&n.op)).collect()
    }

    fn inputs_of(op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Linear { x, w, bias } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBroadcast { x, y } => vec![*x, *y],
            Op::Scale { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Softmax(x)
            | Op::SplitHeads { x, .. }
            | Op::MergeHeads { x, .. }
            | Op::Slice { x, .. }
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
            Op::Mse { pred, target } => vec![*pred, *target],
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = Self::inputs_of(&op)
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `a · b` with `a` of shape `[.., k]` (leading axes flattened into rows)
    /// and `b` of shape `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).rows();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }))
    }

    /// Batched product of `[B, m, k]` with `[B, k, n]`, or with `[B, n, k]`
    /// transposed when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0];
        let (bsz, m, k) = if ok { (sa[0], sa[1], sa[2]) } else { (0, 0, 0) };
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if !ok || kb != k {
            return Err(mismatch(
                "bmm",
                format!("{sa:?} · {sb:?} (transpose_b={transpose_b})"),
            ));
        }
        let mut out = vec![0.0; bsz * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bsz {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                transpose_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.push(
            Tensor::new([bsz, m, n], out)?,
            Op::BatchMatMul { a, b, transpose_b },
        ))
    }

    /// `x · w + bias` over the trailing axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(mismatch("linear", format!("x {sx:?}, w {sw:?}")));
        }
        let (k, n) = (sw[0], sw[1]);
        if let Some(b) = bias {
            if self.shape(b) != [n] {
                return Err(mismatch(
                    "linear",
                    format!("bias {:?} for output width {n}", self.shape(b)),
                ));
            }
        }
        let m = self.value(x).rows();
        let mut out = vec![0.0; m * n];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            bias.is_some(),
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, bias }))
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + y` where the shape of `y` is a suffix of the shape of `x`; `y` is
    /// repeated over the leading axes of `x`.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(x).to_vec(), self.shape(y).to_vec());
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != sy[..] {
            return Err(mismatch("add_broadcast", format!("{sx:?} + {sy:?}")));
        }
        let yv = self.value(y).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(yv.len()) {
            for (d, &v) in chunk.iter_mut().zip(yv) {
                *d += v;
            }
        }
        Ok(self.push(Tensor::new(sx, data)?, Op::AddBroadcast { x, y }))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("map keeps shape");
        self.push(t, op)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map(x, |e| e * factor, Op::Scale { x, factor })
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |e| if e > 0.0 { e } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(
            x,
            |e| {
                if e >= 0.0 {
                    1.0 / (1.0 + (-e).exp())
                } else {
                    let z = e.exp();
                    z / (1.0 + z)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    /// Softmax over the trailing axis with row-max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_masked(x, None)
    }

    /// Softmax over the trailing axis. Positions the mask disallows get
    /// probability exactly 0 (equivalent to a −∞ score).
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let cols = v.cols();
        let rows = v.rows();
        if let Some(m) = mask {
            let q = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
            if m.cols != cols || m.rows != q {
                return Err(mismatch(
                    "softmax",
                    format!("mask {}×{} for scores {shape:?}", m.rows, m.cols),
                ));
            }
        }
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let src = v.row(r);
            let dst = &mut out[r * cols..(r + 1) * cols];
            let allowed = |c: usize| mask.is_none_or(|m| m.allows(r % m.rows, c));
            let mut max = f64::NEG_INFINITY;
            for (c, &s) in src.iter().enumerate() {
                if allowed(c) && s > max {
                    max = s;
                }
            }
            let mut total = 0.0;
            for (c, &s) in src.iter().enumerate() {
                if allowed(c) {
                    let e = (s - max).exp();
                    dst[c] = e;
                    total += e;
                }
            }
            let inv = 1.0 / total;
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x)))
    }

    /// Layer normalization over the trailing axis followed by `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let v = self.value(x);
        let d = v.cols();
        if v.rank() == 0 || d < 2 {
            return Err(mismatch("layer_norm", format!("needs width ≥ 2, got {:?}", v.shape())));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} for width {d}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let rows = v.rows();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let src = v.row(r);
            let mean = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = inv;
            for c in 0..d {
                let h = (src[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let shape = v.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// `[B, T, H·dk] → [B·H, T, dk]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return Err(mismatch("split_heads", format!("{s:?} into {heads} heads")));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let dk = d / heads;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let from = (bi * t + ti) * d + h * dk;
                    let to = ((bi * heads + h) * t + ti) * dk;
                    out[to..to + dk].copy_from_slice(&src[from..from + dk]);
                }
            }
        }
        Ok(self.push(Tensor::new([b * heads, t, dk], out)?, Op::SplitHeads { x, heads }))
    }

    /// `[B·H, T, dk] → [B, T, H·dk]`, the inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || !s[0].is_multiple_of(heads) {
            return Err(mismatch("merge_heads", format!("{s:?} from {heads} heads")));
        }
        let (bh, t, dk) = (s[0], s[1], s[2]);
        let b = bh / heads;
        let d = heads * dk;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let from = ((bi * heads + h) * t + ti) * dk;
                    let to = (bi * t + ti) * d + h * dk;
                    out[to..to + dk].copy_from_slice(&src[from..from + dk]);
                }
            }
        }
        Ok(self.push(Tensor::new([b, t, d], out)?, Op::MergeHeads { x, heads }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base;
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(mismatch("slice", format!("[{start}, {start}+{len}) on axis {axis} of {s:?}")));
        }
        let (outer, extent, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean of squared differences over every element.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let s = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse { pred, target }))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&vals)?;
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// where a node feeds several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            if let Some(g) = grads[id].take() {
                self.backward_node(id, &g, &mut grads);
                grads[id] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr) => {
                slot(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.rows();
                if let Some(ga) = acc!(*a) {
                    gemm(m, n, k, g, false, bv.data(), true, ga, true);
                }
                if let Some(gb) = acc!(*b) {
                    gemm(k, m, n, av.data(), true, g, false, gb, true);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bsz, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                let (sa, sb, so) = (m * k, k * n, m * n);
                if let Some(ga) = acc!(*a) {
                    for i in 0..bsz {
                        // dA = dC · Bᵀ (or dC · B when B was stored transposed)
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * so..(i + 1) * so],
                            false,
                            &bv.data()[i * sb..(i + 1) * sb],
                            !transpose_b,
                            &mut ga[i * sa..(i + 1) * sa],
                            true,
                        );
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for i in 0..bsz {
                        let gi = &g[i * so..(i + 1) * so];
                        let ai = &av.data()[i * sa..(i + 1) * sa];
                        let dst = &mut gb[i * sb..(i + 1) * sb];
                        if *transpose_b {
                            // d(Bᵀ) stored n×k: dCᵀ · A
                            gemm(n, m, k, gi, true, ai, false, dst, true);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, dst, true);
                        }
                    }
                }
            }
            Op::Linear { x, w, bias } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let m = xv.rows();
                if let Some(gx) = acc!(*x) {
                    gemm(m, n, k, g, false, wv.data(), true, gx, true);
                }
                if let Some(gw) = acc!(*w) {
                    gemm(k, m, n, xv.data(), true, g, false, gw, true);
                }
                if let Some(b) = bias {
                    if let Some(gb) = acc!(*b) {
                        for row in g.chunks_exact(n) {
                            for (d, &e) in gb.iter_mut().zip(row) {
                                *d += e;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc!(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc!(*b) {
                    for (d, &e) in gb.iter_mut().zip(g) {
                        *d -= e;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = acc!(*a) {
                    for ((d, &e), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d += e * o;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for ((d, &e), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d += e * o;
                    }
                }
            }
            Op::AddBroadcast { x, y } => {
                if let Some(gx) = acc!(*x) {
                    add_into(gx, g);
                }
                if let Some(gy) = acc!(*y) {
                    let n = gy.len();
                    for chunk in g.chunks_exact(n) {
                        add_into(gy, chunk);
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(gx) = acc!(*x) {
                    for (d, &e) in gx.iter_mut().zip(g) {
                        *d += e * factor;
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, &e), &o) in gx.iter_mut().zip(g).zip(out.data()) {
                        if o > 0.0 {
                            *d += e;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, &e), &s) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d += e * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = acc!(*x) {
                    for ((d, &e), &t) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d += e * (1.0 - t * t);
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = acc!(*x) {
                    let cols = out.cols();
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            gx[r * cols + c] += y[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = out.cols();
                let gv = self.value(*gain).data();
                if let Some(gx) = acc!(*x) {
                    for (r, &inv) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[c];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            gx[r * d + c] += inv * (dh - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                }
                if let Some(gg) = acc!(*gain) {
                    for (row, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for c in 0..d {
                            gg[c] += row[c] * hr[c];
                        }
                    }
                }
                if let Some(gb) = acc!(*bias) {
                    for row in g.chunks_exact(d) {
                        add_into(gb, row);
                    }
                }
            }
            Op::SplitHeads { x, heads } => {
                if let Some(gx) = acc!(*x) {
                    let s = self.shape(*x);
                    let (b, t, d) = (s[0], s[1], s[2]);
                    let dk = d / heads;
                    for bi in 0..b {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let src = ((bi * heads + h) * t + ti) * dk;
                                let dst = (bi * t + ti) * d + h * dk;
                                add_into(&mut gx[dst..dst + dk], &g[src..src + dk]);
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { x, heads } => {
                if let Some(gx) = acc!(*x) {
                    let s = self.shape(*x);
                    let (bh, t, dk) = (s[0], s[1], s[2]);
                    let d = heads * dk;
                    for bi in 0..bh / heads {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let dst = ((bi * heads + h) * t + ti) * dk;
                                let src = (bi * t + ti) * d + h * dk;
                                add_into(&mut gx[dst..dst + dk], &g[src..src + dk]);
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let extent = self.shape(v)[*axis];
                    if let Some(gv) = acc!(v) {
                        let chunk = extent * inner;
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(&mut gv[o * chunk..(o + 1) * chunk], &g[src..src + chunk]);
                        }
                    }
                    offset += extent;
                }
            }
            Op::Slice { x, axis, start } => {
                if let Some(gx) = acc!(*x) {
                    let (outer, extent, inner) = axis_split(self.shape(*x), *axis);
                    let len = out.shape()[*axis];
                    for o in 0..outer {
                        let dst = (o * extent + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut gx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = acc!(*x) {
                    add_into(gx, g);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = acc!(*x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = acc!(*x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let s = 2.0 * g[0] / p.len() as f64;
                if let Some(gp) = acc!(*pred) {
                    for ((d, a), b) in gp.iter_mut().zip(p).zip(t) {
                        *d += s * (a - b);
                    }
                }
                if let Some(gt) = acc!(*target) {
                    for ((d, a), b) in gt.iter_mut().zip(p).zip(t) {
                        *d -= s * (a - b);
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let parts = op.backward(&vals, out, g);
                for (&v, part) in inputs.iter().zip(parts) {
                    if let Some(gv) = acc!(v) {
                        assert_eq!(gv.len(), part.len(), "custom op {} gradient length", op.name());
                        add_into(gv, &part);
                    }
                }
            }
        }
    }
}

/// Accumulation buffer for `v`, or `None` when `v` needs no gradient.
fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
