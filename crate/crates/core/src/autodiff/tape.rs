//! Reverse-mode tape over dense tensors.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower or upper limit of a clamp: a constant or a tensor of the same
/// shape as the clamped input.
#[derive(Clone, Copy, Debug)]
pub enum Bound {
    Const(f64),
    Var(Var),
}

impl From<f64> for Bound {
    fn from(v: f64) -> Self {
        Bound::Const(v)
    }
}

impl From<Var> for Bound {
    fn from(v: Var) -> Self {
        Bound::Var(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Softplus,
    LeakyRelu(f64),
    Abs,
    Exp,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x · w + b` with `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a · x + c`
    ScaleShift(Var, f64),
    Unary(Var, Unary),
    Clamp {
        x: Var,
        lo: Bound,
        hi: Bound,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded recording of one forward pass.
///
/// The tape also carries the train/eval phase: dropout is active only on a
/// tape built with [`Tape::training`], and its masks are drawn from the
/// tape's own seeded generator.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Evaluation-mode tape.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode tape; dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.values().iter().all(|v| !v.is_nan()),
            "NaN produced by {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a node, present once a backward sweep has
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Drops all accumulated gradients.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert!(sa == sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Var {
        self.same_shape(op, a, b);
        let va = self.value(a);
        let vb = self.value(b);
        let out: Vec<f64> = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), out).expect("zip shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(t, node, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale · x + shift`
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x);
        let out: Vec<f64> = v.values().iter().map(|e| scale * e + shift).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("scale_shift shape");
        let rg = self.rg(x);
        self.push(t, Op::ScaleShift(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.scale_shift(x, s, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.scale_shift(x, 1.0, c)
    }

    /// `1 − x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.scale_shift(x, -1.0, 1.0)
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let v = self.value(x);
        let out: Vec<f64> = v.values().iter().map(|&e| unary_value(kind, e)).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("unary shape");
        let rg = self.rg(x);
        self.push(t, Op::Unary(x, kind), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    fn bound_values(&self, b: Bound, n: usize, shape: &[usize]) -> Result<Vec<f64>, AutodiffError> {
        match b {
            Bound::Const(c) => Ok(vec![c; n]),
            Bound::Var(v) => {
                let t = self.value(v);
                if t.shape() != shape {
                    return Err(AutodiffError::Shape {
                        op: "clamp",
                        left: shape.to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
                Ok(t.values().to_vec())
            }
        }
    }

    /// `min(hi, max(lo, x))`. Inside `[lo, hi]` the gradient passes to `x`;
    /// outside it goes to the active bound.
    pub fn clamp(
        &mut self,
        x: Var,
        lo: impl Into<Bound>,
        hi: impl Into<Bound>,
    ) -> Result<Var, AutodiffError> {
        let (lo, hi) = (lo.into(), hi.into());
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let los = self.bound_values(lo, n, &shape)?;
        let his = self.bound_values(hi, n, &shape)?;
        if let Some(i) = (0..n).find(|&i| los[i] > his[i]) {
            return Err(AutodiffError::Bound {
                index: i,
                lo: los[i],
                hi: his[i],
            });
        }
        let out: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .zip(los.iter().zip(&his))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect();
        let bound_rg = |b: Bound| matches!(b, Bound::Var(v) if self.rg(v));
        let rg = self.rg(x) || bound_rg(lo) || bound_rg(hi);
        let t = Tensor::new(shape, out).expect("clamp shape");
        Ok(self.push(t, Op::Clamp { x, lo, hi }, rg))
    }

    /// Matrix product `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).values(),
            self.value(b).values(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg)
    }

    /// Fused `x · w + b` for a dense layer.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (m, k) = self.value(x).dims2();
        let (k2, n) = self.value(w).dims2();
        assert_eq!(k, k2, "affine: input width {k} vs weight rows {k2}");
        assert_eq!(self.value(b).len(), n, "affine: bias length");
        let bias = self.value(b).values();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        matmul_into(
            self.value(x).values(),
            self.value(w).values(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::matrix(m, n, out), Op::Affine { x, w, b }, rg)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = self.value(*p).dims2();
                assert_eq!(r, rows, "concat: row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).values()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            Tensor::matrix(rows, total, out),
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.value(x).dims2();
        assert!(start + len <= cols, "slice_cols: {start}+{len} > {cols}");
        let src = self.value(x).values();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(rows, len, out), Op::Slice { x, start }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).values().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Inverted dropout: identity on an evaluation tape, otherwise zeroes
    /// entries with probability `rate` and rescales survivors by `1/(1−rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.constant(Tensor::new(shape, mask).expect("mask shape"));
        self.mul(x, m)
    }

    /// Fingerprint of which side of every kink (LeakyReLU, abs, clamp) each
    /// element sits on. Two evaluations with equal fingerprints lie in the
    /// same smooth piece of the recorded function.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x100000001b3;
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Unary(x, Unary::LeakyRelu(_) | Unary::Abs) => {
                    for v in self.nodes[x.0].value.values() {
                        mix(u64::from(*v > 0.0) + 2 * u64::from(*v < 0.0));
                    }
                }
                Op::Clamp { x, .. } => {
                    for (v, o) in self.nodes[x.0]
                        .value
                        .values()
                        .iter()
                        .zip(node.value.values())
                    {
                        mix(u64::from(o > v) + 2 * u64::from(o < v));
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Back-propagates from a single-element `loss`, adding into the
    /// gradients left by earlier sweeps until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(up) = g[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &up, &mut g);
            // restore so the accumulated copy can be taken below
            g[i] = Some(up);
        }

        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        for (i, gi) in g.into_iter().enumerate() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            match (&mut self.grads[i], gi) {
                (Some(acc), Some(new)) => acc.iter_mut().zip(new).for_each(|(a, b)| *a += b),
                (slot @ None, Some(new)) => *slot = Some(new),
                (slot @ None, None) if matches!(self.nodes[i].op, Op::Leaf) => {
                    *slot = Some(vec![0.0; self.nodes[i].value.len()]);
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, up: &[f64], g: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.values();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = g[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(up).for_each(|(d, u)| *d += u));
                acc(*b, &mut |s| s.iter_mut().zip(up).for_each(|(d, u)| *d += u));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(up).for_each(|(d, u)| *d += u));
                acc(*b, &mut |s| s.iter_mut().zip(up).for_each(|(d, u)| *d -= u));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += up[j] * vb[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += up[j] * va[j];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += up[j] / vb[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] -= up[j] * va[j] / (vb[j] * vb[j]);
                    }
                });
            }
            Op::ScaleShift(x, a) => {
                acc(*x, &mut |s| {
                    s.iter_mut().zip(up).for_each(|(d, u)| *d += a * u)
                });
            }
            Op::Unary(x, kind) => {
                let (vx, vy) = (val(*x), node.value.values());
                acc(*x, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += up[j] * unary_grad(*kind, vx[j], vy[j]);
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let vx = val(*x);
                let n = vx.len();
                let bound = |b: &Bound| -> Vec<f64> {
                    match b {
                        Bound::Const(c) => vec![*c; n],
                        Bound::Var(v) => val(*v).to_vec(),
                    }
                };
                let (los, his) = (bound(lo), bound(hi));
                acc(*x, &mut |s| {
                    for j in 0..n {
                        if vx[j] >= los[j] && vx[j] <= his[j] {
                            s[j] += up[j];
                        }
                    }
                });
                if let Bound::Var(l) = lo {
                    acc(*l, &mut |s| {
                        for j in 0..n {
                            if vx[j] < los[j] {
                                s[j] += up[j];
                            }
                        }
                    });
                }
                if let Bound::Var(h) = hi {
                    acc(*h, &mut |s| {
                        for j in 0..n {
                            if vx[j] > his[j] {
                                s[j] += up[j];
                            }
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let n = self.nodes[b.0].value.dims2().1;
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| matmul_bt_acc(up, vb, s, m, n, k));
                acc(*b, &mut |s| matmul_at_acc(va, up, s, m, k, n));
            }
            Op::Affine { x, w, b } => {
                let (m, k) = self.nodes[x.0].value.dims2();
                let n = self.nodes[w.0].value.dims2().1;
                let (vx, vw) = (val(*x), val(*w));
                acc(*x, &mut |s| matmul_bt_acc(up, vw, s, m, n, k));
                acc(*w, &mut |s| matmul_at_acc(vx, up, s, m, k, n));
                acc(*b, &mut |s| {
                    for r in 0..m {
                        for (d, u) in s.iter_mut().zip(&up[r * n..(r + 1) * n]) {
                            *d += u;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let (rows, total) = node.value.dims2();
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.dims2().1;
                    acc(*p, &mut |s| {
                        for r in 0..rows {
                            for c in 0..w {
                                s[r * w + c] += up[r * total + off + c];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::Slice { x, start } => {
                let (rows, len) = node.value.dims2();
                let cols = self.nodes[x.0].value.dims2().1;
                acc(*x, &mut |s| {
                    for r in 0..rows {
                        for c in 0..len {
                            s[r * cols + start + c] += up[r * len + c];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let u = up[0];
                acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += u));
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow for large `x`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn unary_value(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Sigmoid => sigmoid(x),
        Unary::Tanh => x.tanh(),
        Unary::Softplus => softplus(x),
        Unary::LeakyRelu(a) => {
            if x > 0.0 {
                x
            } else {
                a * x
            }
        }
        Unary::Abs => x.abs(),
        Unary::Exp => x.exp(),
    }
}

fn unary_grad(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Tanh => 1.0 - y * y,
        Unary::Softplus => sigmoid(x),
        Unary::LeakyRelu(a) => {
            if x > 0.0 {
                1.0
            } else {
                a
            }
        }
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Exp => y,
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `da[m×k] += up[m×n] · bᵀ` where `b` is `[k×n]`.
fn matmul_bt_acc(up: &[f64], b: &[f64], da: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let urow = &up[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = urow.iter().zip(brow).map(|(u, v)| u * v).sum();
            da[i * k + p] += dot;
        }
    }
}

/// `db[k×n] += aᵀ · up` where `a` is `[m×k]` and `up` is `[m×n]`.
fn matmul_at_acc(a: &[f64], up: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let urow = &up[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let drow = &mut db[p * n..(p + 1) * n];
            for (d, u) in drow.iter_mut().zip(urow) {
                *d += aip * u;
            }
        }
    }
}
