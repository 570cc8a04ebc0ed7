//! Define-by-run reverse-mode tape.
//!
//! Every operation appends a node holding its forward value. Nodes are only
//! ever appended, so inputs always precede the nodes that consume them and a
//! single reverse sweep visits each node once.

use serde::{Deserialize, Serialize};

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Exp,
    Log,
    Square,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Hidden-layer nonlinearity for every MLP in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn unary(self) -> UnaryKind {
        match self {
            Activation::Relu => UnaryKind::Relu,
            Activation::Tanh => UnaryKind::Tanh,
        }
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Binary { kind: BinaryKind, a: Var, b: Var },
    Unary { kind: UnaryKind, a: Var },
    Scale { a: Var, factor: S },
    Offset { a: Var },
    MatMul { a: Var, b: Var },
    ReduceAll { kind: ReduceKind, a: Var },
    ReduceAxes { kind: ReduceKind, a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    SwapLastTwo { a: Var },
    NarrowLast { a: Var, start: usize },
    Segment { a: Var, offset: usize },
    Downsample { a: Var, filter: Vec<S> },
    Upsample { a: Var, filter: Vec<S> },
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    /// True when some gradient-requiring leaf is upstream of this node.
    tracked: bool,
}

/// Recorded operation graph plus accumulated leaf gradients.
#[derive(Debug, Clone, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
    requires_grad: Vec<bool>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            requires_grad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        self.requires_grad.push(false);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf, requires_grad);
        self.requires_grad[v.0] = requires_grad;
        v
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Accumulated gradient of a gradient-requiring leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    // ---- elementwise ---------------------------------------------------

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = if sa.ends_with(sb) {
            sa.to_vec()
        } else if sb.ends_with(sa) {
            sb.to_vec()
        } else {
            return Err(Error::Dimension(format!(
                "cannot broadcast shapes {sa:?} and {sb:?}"
            )));
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = numel(&out_shape);
        let f: fn(S, S) -> S = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
        };
        let data = (0..n)
            .map(|i| f(va[i % va.len()], vb[i % vb.len()]))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Binary { kind, a, b },
            tracked,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let x = self.value(a);
        if kind == UnaryKind::Log {
            if let Some(bad) = x.data().iter().find(|v| !(**v > S::zero())) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let out = match kind {
            UnaryKind::Exp => x.map(S::exp),
            UnaryKind::Log => x.map(S::ln),
            UnaryKind::Square => x.map(|v| v * v),
            UnaryKind::Relu => x.map(|v| if v > S::zero() { v } else { S::zero() }),
            UnaryKind::Tanh => x.map(S::tanh),
        };
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Unary { kind, a }, tracked))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a).expect("square is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a).expect("relu is total")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a).expect("tanh is total")
    }

    pub fn activation(&mut self, act: Activation, a: Var) -> Var {
        self.unary(act.unary(), a).expect("activations are total")
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let tracked = self.tracked(a);
        self.push(out, Op::Scale { a, factor }, tracked)
    }

    /// `a + shift` elementwise.
    pub fn offset(&mut self, a: Var, shift: S) -> Var {
        let out = self.value(a).map(|v| v + shift);
        let tracked = self.tracked(a);
        self.push(out, Op::Offset { a }, tracked)
    }

    // ---- linear algebra ------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul needs [m, k] x [k, n], got {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, tracked))
    }

    /// `x · w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    // ---- reductions ----------------------------------------------------

    /// Reduces every element to a rank-0 tensor.
    pub fn reduce_all(&mut self, kind: ReduceKind, a: Var) -> Var {
        let x = self.value(a);
        let total: S = x.data().iter().copied().sum();
        let v = match kind {
            ReduceKind::Sum => total,
            ReduceKind::Mean => total / S::from_usize(x.len().max(1)).unwrap(),
        };
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(v), Op::ReduceAll { kind, a }, tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce_all(ReduceKind::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce_all(ReduceKind::Mean, a)
    }

    /// Reduces over the listed axes, dropping them from the shape.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.is_empty() || axes.iter().any(|&ax| ax >= shape.len()) {
            return Err(Error::Dimension(format!(
                "invalid reduction axes {axes:?} for shape {shape:?}"
            )));
        }
        let (out_shape, map) = reduction_map(&shape, &axes);
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        let mut out = vec![S::zero(); numel(&out_shape)];
        for (v, &o) in self.value(a).data().iter().zip(&map) {
            out[o] += *v;
        }
        if kind == ReduceKind::Mean {
            let c = S::from_usize(count.max(1)).unwrap();
            out.iter_mut().for_each(|v| *v /= c);
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::ReduceAxes { kind, a, axes },
            tracked,
        ))
    }

    // ---- shape ---------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Reshape { a }, tracked))
    }

    /// Swaps the two innermost axes: `[.., x, y] -> [.., y, x]`.
    pub fn swap_last_two(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::Dimension(format!(
                "axis swap needs rank >= 2, got {shape:?}"
            )));
        }
        let r = shape.len();
        let (x, y) = (shape[r - 2], shape[r - 1]);
        let mut out_shape = shape.clone();
        out_shape.swap(r - 2, r - 1);
        let out = swap_raw(self.value(a).data(), x, y);
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::SwapLastTwo { a },
            tracked,
        ))
    }

    /// `len` entries of the innermost axis starting at `start`.
    pub fn narrow_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let inner = *shape
            .last()
            .ok_or_else(|| Error::Dimension("cannot narrow a rank-0 tensor".into()))?;
        if start + len > inner {
            return Err(Error::Dimension(format!(
                "narrow {start}..{} exceeds inner extent {inner}",
                start + len
            )));
        }
        let x = self.value(a).data();
        let data: Vec<S> = x
            .chunks(inner)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::NarrowLast { a, start },
            tracked,
        ))
    }

    /// Contiguous slice of a rank-1 node viewed with `shape`.
    pub fn segment(&mut self, a: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let len = numel(shape);
        if x.rank() != 1 || offset + len > x.len() {
            return Err(Error::Dimension(format!(
                "segment {offset}..{} of shape {shape:?} out of range for {:?}",
                offset + len,
                x.shape()
            )));
        }
        let out = Tensor::new(shape.to_vec(), x.data()[offset..offset + len].to_vec())?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Segment { a, offset }, tracked))
    }

    // ---- two-channel filter banks ---------------------------------------

    /// Filters axis 1 of a `[batch, len, channels]` tensor and keeps every
    /// second output: `out[k] = sum_j filter[j] * x[(2k + j) mod len]`.
    pub fn downsample(&mut self, a: Var, filter: &[S]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 {
            return Err(Error::Dimension(format!(
                "filter bank needs [batch, len, channels], got {shape:?}"
            )));
        }
        let (b, t, c) = (shape[0], shape[1], shape[2]);
        if t < 2 {
            return Err(Error::WindowTooShort(t));
        }
        if t % 2 != 0 {
            return Err(Error::Dimension(format!(
                "filter bank needs an even length along axis 1, got {t}"
            )));
        }
        let out = downsample_raw(self.value(a).data(), filter, b, t, c);
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::new(vec![b, t / 2, c], out)?,
            Op::Downsample {
                a,
                filter: filter.to_vec(),
            },
            tracked,
        ))
    }

    /// Adjoint of [`Tape::downsample`]: `[batch, k, c] -> [batch, 2k, c]`.
    pub fn upsample(&mut self, a: Var, filter: &[S]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 {
            return Err(Error::Dimension(format!(
                "filter bank needs [batch, len, channels], got {shape:?}"
            )));
        }
        let (b, k, c) = (shape[0], shape[1], shape[2]);
        let out = upsample_raw(self.value(a).data(), filter, b, k, c);
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::new(vec![b, 2 * k, c], out)?,
            Op::Upsample {
                a,
                filter: filter.to_vec(),
            },
            tracked,
        ))
    }

    // ---- reverse sweep -------------------------------------------------

    /// Accumulates `d loss / d leaf` into every gradient-requiring leaf
    /// reachable from `loss`. Repeated calls add to the stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if self.requires_grad[i] {
                        let shape = node.value.shape().to_vec();
                        match &mut self.grads[i] {
                            Some(acc) => acc
                                .data_mut()
                                .iter_mut()
                                .zip(&g)
                                .for_each(|(a, &d)| *a += d),
                            slot @ None => *slot = Some(Tensor::new(shape, g)?),
                        }
                    }
                }
                Op::Binary { kind, a, b } => {
                    let (a, b) = (*a, *b);
                    let (xa, xb) = (self.value(a).data(), self.value(b).data());
                    let (na, nb) = (xa.len(), xb.len());
                    if self.tracked(a) {
                        let mut da = vec![S::zero(); na];
                        for (j, &gj) in g.iter().enumerate() {
                            da[j % na] += match kind {
                                BinaryKind::Add | BinaryKind::Sub => gj,
                                BinaryKind::Mul => gj * xb[j % nb],
                            };
                        }
                        accumulate(&mut adj, a, da);
                    }
                    if self.tracked(b) {
                        let mut db = vec![S::zero(); nb];
                        for (j, &gj) in g.iter().enumerate() {
                            db[j % nb] += match kind {
                                BinaryKind::Add => gj,
                                BinaryKind::Sub => -gj,
                                BinaryKind::Mul => gj * xa[j % na],
                            };
                        }
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::Unary { kind, a } => {
                    let a = *a;
                    let x = self.value(a).data();
                    let y = node.value.data();
                    let two = S::lit(2.0);
                    let da: Vec<S> = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gj)| match kind {
                            UnaryKind::Exp => gj * y[j],
                            UnaryKind::Log => gj / x[j],
                            UnaryKind::Square => gj * two * x[j],
                            UnaryKind::Relu => {
                                if x[j] > S::zero() {
                                    gj
                                } else {
                                    S::zero()
                                }
                            }
                            UnaryKind::Tanh => gj * (S::one() - y[j] * y[j]),
                        })
                        .collect();
                    accumulate(&mut adj, a, da);
                }
                Op::Scale { a, factor } => {
                    let da = g.iter().map(|&gj| gj * *factor).collect();
                    accumulate(&mut adj, *a, da);
                }
                Op::Offset { a } | Op::Reshape { a } => accumulate(&mut adj, *a, g),
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (sa, sb) = (self.shape(a), self.shape(b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if self.tracked(a) {
                        // dA = G · Bᵀ
                        let bt = swap_raw(self.value(b).data(), k, n);
                        let da = matmul_raw(&g, &bt, m, n, k);
                        accumulate(&mut adj, a, da);
                    }
                    if self.tracked(b) {
                        // dB = Aᵀ · G
                        let at = swap_raw(self.value(a).data(), m, k);
                        let db = matmul_raw(&at, &g, k, m, n);
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::ReduceAll { kind, a } => {
                    let n = self.value(*a).len();
                    let d = match kind {
                        ReduceKind::Sum => g[0],
                        ReduceKind::Mean => g[0] / S::from_usize(n.max(1)).unwrap(),
                    };
                    accumulate(&mut adj, *a, vec![d; n]);
                }
                Op::ReduceAxes { kind, a, axes } => {
                    let shape = self.shape(*a);
                    let (_, map) = reduction_map(shape, axes);
                    let count: usize = axes.iter().map(|&ax| shape[ax]).product();
                    let scale = match kind {
                        ReduceKind::Sum => S::one(),
                        ReduceKind::Mean => S::one() / S::from_usize(count.max(1)).unwrap(),
                    };
                    let da = map.iter().map(|&o| g[o] * scale).collect();
                    accumulate(&mut adj, *a, da);
                }
                Op::SwapLastTwo { a } => {
                    let shape = self.shape(*a);
                    let r = shape.len();
                    // output is [.., y, x]; swapping back restores [.., x, y]
                    let da = swap_raw(&g, shape[r - 1], shape[r - 2]);
                    accumulate(&mut adj, *a, da);
                }
                Op::NarrowLast { a, start } => {
                    let inner = *self.shape(*a).last().unwrap();
                    let len = *node.value.shape().last().unwrap();
                    let mut da = vec![S::zero(); self.value(*a).len()];
                    for (row, grow) in da.chunks_mut(inner).zip(g.chunks(len.max(1))) {
                        row[*start..*start + len].copy_from_slice(grow);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Segment { a, offset } => {
                    let mut da = vec![S::zero(); self.value(*a).len()];
                    da[*offset..*offset + g.len()].copy_from_slice(&g);
                    accumulate(&mut adj, *a, da);
                }
                Op::Downsample { a, filter } => {
                    let s = self.shape(*a);
                    let da = upsample_raw(&g, filter, s[0], s[1] / 2, s[2]);
                    accumulate(&mut adj, *a, da);
                }
                Op::Upsample { a, filter } => {
                    let s = self.shape(*a);
                    let da = downsample_raw(&g, filter, s[0], 2 * s[1], s[2]);
                    accumulate(&mut adj, *a, da);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Vec<S>>], v: Var, d: Vec<S>) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, x)| *a += x),
        slot @ None => *slot = Some(d),
    }
}

fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Swaps the two innermost axes of a row-major buffer laid out as `[.., x, y]`.
fn swap_raw<S: Scalar>(data: &[S], x: usize, y: usize) -> Vec<S> {
    let block = x * y;
    let mut out = vec![S::zero(); data.len()];
    if block == 0 {
        return out;
    }
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..x {
            for j in 0..y {
                dst[j * x + i] = src[i * y + j];
            }
        }
    }
    out
}

fn downsample_raw<S: Scalar>(x: &[S], filter: &[S], b: usize, t: usize, c: usize) -> Vec<S> {
    let half = t / 2;
    let mut out = vec![S::zero(); b * half * c];
    for bi in 0..b {
        for k in 0..half {
            for (j, &f) in filter.iter().enumerate() {
                let src = (2 * k + j) % t;
                for ci in 0..c {
                    out[(bi * half + k) * c + ci] += f * x[(bi * t + src) * c + ci];
                }
            }
        }
    }
    out
}

fn upsample_raw<S: Scalar>(x: &[S], filter: &[S], b: usize, k: usize, c: usize) -> Vec<S> {
    let t = 2 * k;
    let mut out = vec![S::zero(); b * t * c];
    for bi in 0..b {
        for kk in 0..k {
            for (j, &f) in filter.iter().enumerate() {
                let dst = (2 * kk + j) % t;
                for ci in 0..c {
                    out[(bi * t + dst) * c + ci] += f * x[(bi * k + kk) * c + ci];
                }
            }
        }
    }
    out
}

/// Output shape and, for each input flat index, the output flat index it reduces into.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let n = numel(shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut o = 0;
        for (ax, (&i, &d)) in idx.iter().zip(shape).enumerate() {
            if !axes.contains(&ax) {
                o = o * d + i;
            }
        }
        map.push(o);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, map)
}
