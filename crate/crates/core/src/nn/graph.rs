//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape order is already a
//! topological order and `backward` walks it once in reverse.

use super::params::{Grads, ParamStore};
use super::tensor::{gemm, Tensor};
use super::NnError;
use std::borrow::Cow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Conv1d { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize, cols: Vec<f64> },
    GroupNorm { x: NodeId, gamma: NodeId, beta: NodeId, group: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Film { x: NodeId, cond: NodeId },
    Relu(NodeId),
    Mish(NodeId),
    Tanh(NodeId),
    Scale(NodeId, f64),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Upsample(NodeId),
    SinEmb { t: NodeId, freqs: Vec<f64> },
    Mse(NodeId, NodeId),
    Mean(NodeId),
    Sum(NodeId),
}

struct Node<'p> {
    op: Op,
    value: Cow<'p, Tensor>,
    requires_grad: bool,
    /// (store address, parameter index) for parameter leaves.
    param: Option<(usize, usize)>,
}

pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

fn store_key(store: &ParamStore) -> usize {
    store as *const ParamStore as usize
}

/// `tanh(softplus(x))` with a single exponential:
/// with `n = eˣ`, `tanh(ln(1 + n)) = n(n + 2) / (n(n + 2) + 2)`.
fn tanh_softplus(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let n = x.exp();
    let p = n * (n + 2.0);
    p / (p + 2.0)
}

fn mish(x: f64) -> f64 {
    x * tanh_softplus(x)
}

fn mish_grad(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let n = x.exp();
    let p = n * (n + 2.0);
    let tsp = p / (p + 2.0);
    let sig = n / (1.0 + n);
    tsp + x * (1.0 - tsp * tsp) * sig
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(128) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { op, value: Cow::Owned(value), requires_grad, param: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value: Cow::Owned(t), requires_grad: false, param: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Free leaf whose gradient can be read back with [`Gradients::grad`].
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value: Cow::Owned(t), requires_grad: true, param: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Borrowed parameter leaf.
    pub fn param(&mut self, store: &'p ParamStore, name: &str) -> Result<NodeId, NnError> {
        let idx = store.index_of(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Cow::Borrowed(store.tensor(idx)),
            requires_grad: true,
            param: Some((store_key(store), idx)),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// `x·wᵀ + b` over the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (rows, inp) = xv.rows_cols();
        if wv.shape().len() != 2 || wv.shape()[1] != inp {
            return Err(shape_err(format!("linear: input {:?} vs weight {:?}", xv.shape(), wv.shape())));
        }
        let out = wv.shape()[0];
        let mut y = vec![0.0; rows * out];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [out] {
                return Err(shape_err(format!("linear: bias {:?} for {out} outputs", bv.shape())));
            }
            for r in 0..rows {
                y[r * out..(r + 1) * out].copy_from_slice(bv.data());
            }
        }
        gemm(rows, inp, out, 1.0, xv.data(), inp, 1, wv.data(), 1, inp, if b.is_some() { 1.0 } else { 0.0 }, &mut y, out, 1);
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape.push(out);
        } else {
            *shape.last_mut().unwrap() = out;
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(Op::Linear { x, w, b }, Tensor::new(shape, y)?, &parents))
    }

    /// 1-D convolution over `x: [B, L, Cin]` with `w: [Cout, K, Cin]`, zero padding `pad`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 3 || ws.len() != 3 || ws[2] != xs[2] || stride == 0 {
            return Err(shape_err(format!("conv1d: input {xs:?} vs weight {ws:?}")));
        }
        let (bsz, len, cin) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[1]);
        if len + 2 * pad < k {
            return Err(shape_err(format!("conv1d: length {len} too short for kernel {k}")));
        }
        let lout = (len + 2 * pad - k) / stride + 1;
        let kc = k * cin;
        let mut cols = vec![0.0; bsz * lout * kc];
        let xd = xv.data();
        for bi in 0..bsz {
            for o in 0..lout {
                let row = &mut cols[(bi * lout + o) * kc..(bi * lout + o + 1) * kc];
                for kk in 0..k {
                    let pos = (o * stride + kk) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        let src = (bi * len + pos as usize) * cin;
                        row[kk * cin..(kk + 1) * cin].copy_from_slice(&xd[src..src + cin]);
                    }
                }
            }
        }
        let rows = bsz * lout;
        let mut y = vec![0.0; rows * cout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [cout] {
                return Err(shape_err(format!("conv1d: bias {:?} for {cout} channels", bv.shape())));
            }
            for r in 0..rows {
                y[r * cout..(r + 1) * cout].copy_from_slice(bv.data());
            }
        }
        gemm(rows, kc, cout, 1.0, &cols, kc, 1, wv.data(), 1, kc, if b.is_some() { 1.0 } else { 0.0 }, &mut y, cout, 1);
        let mut parents = vec![x, w];
        parents.extend(b);
        let value = Tensor::new(vec![bsz, lout, cout], y)?;
        Ok(self.push(Op::Conv1d { x, w, b, stride, pad, cols }, value, &parents))
    }

    /// Group normalization over `[B, L, C]` (or `[B, C]`) with `group`
    /// consecutive channels per group, followed by a per-channel affine map.
    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, group: usize, eps: f64) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let xs = xv.shape().to_vec();
        let (bsz, len, c) = match xs.len() {
            2 => (xs[0], 1, xs[1]),
            3 => (xs[0], xs[1], xs[2]),
            _ => return Err(shape_err(format!("group_norm: input {xs:?}"))),
        };
        if group == 0 || c % group != 0 {
            return Err(shape_err(format!("group_norm: {c} channels not divisible by group size {group}")));
        }
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(shape_err("group_norm: affine parameters must be [C]".into()));
        }
        let ng = c / group;
        let n = (len * group) as f64;
        let xd = xv.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; bsz * ng];
        for bi in 0..bsz {
            for g in 0..ng {
                let mut mean = 0.0;
                for l in 0..len {
                    let base = (bi * len + l) * c + g * group;
                    mean += xd[base..base + group].iter().sum::<f64>();
                }
                mean /= n;
                let mut var = 0.0;
                for l in 0..len {
                    let base = (bi * len + l) * c + g * group;
                    var += xd[base..base + group].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                var /= n;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[bi * ng + g] = is;
                for l in 0..len {
                    let base = (bi * len + l) * c + g * group;
                    for j in base..base + group {
                        xhat[j] = (xd[j] - mean) * is;
                    }
                }
            }
        }
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let y: Vec<f64> = xhat.iter().enumerate().map(|(i, h)| h * gd[i % c] + bd[i % c]).collect();
        let value = Tensor::new(xs, y)?;
        Ok(self.push(Op::GroupNorm { x, gamma, beta, group, xhat, inv_std }, value, &[x, gamma, beta]))
    }

    /// Feature-wise affine conditioning: `x·scale + shift` with
    /// `cond = [scale | shift]` of shape `[B, 2C]`, broadcast over `L`.
    pub fn film(&mut self, x: NodeId, cond: NodeId) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let cv = self.value(cond);
        let xs = xv.shape();
        if xs.len() != 3 || cv.shape() != [xs[0], 2 * xs[2]] {
            return Err(shape_err(format!("film: input {xs:?} vs conditioning {:?}", cv.shape())));
        }
        let (bsz, len, c) = (xs[0], xs[1], xs[2]);
        let mut y = vec![0.0; xv.len()];
        for bi in 0..bsz {
            let cb = &cv.data()[bi * 2 * c..(bi + 1) * 2 * c];
            for l in 0..len {
                let base = (bi * len + l) * c;
                for ch in 0..c {
                    y[base + ch] = xv.data()[base + ch] * cb[ch] + cb[c + ch];
                }
            }
        }
        let value = Tensor::new(xs.to_vec(), y)?;
        Ok(self.push(Op::Film { x, cond }, value, &[x, cond]))
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let xv = self.value(x);
        let y: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), y).expect("same shape");
        self.push(op, value, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn mish(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Mish(x), mish)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<NodeId, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("{name}: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let y: Vec<f64> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), y)?;
        Ok(self.push(op, value, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Concatenation along the last axis; all leading dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let first = self.value(*parts.first().ok_or_else(|| shape_err("concat: no inputs".into()))?);
        let lead = first.shape()[..first.shape().len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err(format!("concat: {s:?} vs leading {lead:?}")));
            }
            widths.push(s[lead.len()]);
        }
        let total: usize = widths.iter().sum();
        let mut y = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for r in 0..rows {
                y[r * total + off..r * total + off + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, y)?;
        Ok(self.push(Op::Concat(parts.to_vec()), value, parts))
    }

    /// Nearest-neighbour ×2 upsampling along the length axis of `[B, L, C]`.
    pub fn upsample(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 {
            return Err(shape_err(format!("upsample: input {s:?}")));
        }
        let (bsz, len, c) = (s[0], s[1], s[2]);
        let mut y = vec![0.0; bsz * 2 * len * c];
        for bi in 0..bsz {
            for l in 0..2 * len {
                let src = (bi * len + l / 2) * c;
                let dst = (bi * 2 * len + l) * c;
                y[dst..dst + c].copy_from_slice(&xv.data()[src..src + c]);
            }
        }
        let value = Tensor::new(vec![bsz, 2 * len, c], y)?;
        Ok(self.push(Op::Upsample(x), value, &[x]))
    }

    /// Sinusoidal embedding `[sin(t·f_i) | cos(t·f_i)]` of a `[B]` vector of timesteps.
    pub fn sin_emb(&mut self, t: NodeId, dim: usize) -> Result<NodeId, NnError> {
        if dim < 4 || dim % 2 != 0 {
            return Err(shape_err(format!("sin_emb: dim {dim} must be even and >= 4")));
        }
        let tv = self.value(t);
        if tv.shape().len() != 1 {
            return Err(shape_err(format!("sin_emb: timesteps {:?} must be [B]", tv.shape())));
        }
        let half = dim / 2;
        let step = (10000f64).ln() / (half - 1) as f64;
        let freqs: Vec<f64> = (0..half).map(|i| (-(i as f64) * step).exp()).collect();
        let bsz = tv.len();
        let mut y = vec![0.0; bsz * dim];
        for (bi, &tt) in tv.data().iter().enumerate() {
            for (i, f) in freqs.iter().enumerate() {
                y[bi * dim + i] = (tt * f).sin();
                y[bi * dim + half + i] = (tt * f).cos();
            }
        }
        let value = Tensor::new(vec![bsz, dim], y)?;
        Ok(self.push(Op::SinEmb { t, freqs }, value, &[t]))
    }

    /// Mean squared difference as a scalar.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("mse: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let n = av.len().max(1) as f64;
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(s / n), &[a, b]))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let m = xv.data().iter().sum::<f64>() / xv.len().max(1) as f64;
        self.push(Op::Mean(x), Tensor::scalar(m), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(Op::Sum(x), Tensor::scalar(s), &[x])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NnError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!("backward: loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .zip(grads.iter())
            .filter_map(|(n, g)| n.param.map(|p| (p, g.clone())))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop(&self, node: &Node<'p>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let acc = |id: NodeId, t: Tensor, grads: &mut [Option<Tensor>]| match &mut grads[id.0] {
            Some(e) => e.add_assign(&t),
            slot => *slot = Some(t),
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (rows, inp) = xv.rows_cols();
                let out = wv.shape()[0];
                if needs(*x) {
                    let mut dx = vec![0.0; rows * inp];
                    gemm(rows, out, inp, 1.0, gd, out, 1, wv.data(), inp, 1, 0.0, &mut dx, inp, 1);
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap(), grads);
                }
                if needs(*w) {
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, rows, inp, 1.0, gd, 1, out, xv.data(), inp, 1, 0.0, &mut dw, inp, 1);
                    acc(*w, Tensor::new(vec![out, inp], dw).unwrap(), grads);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![0.0; out];
                        for r in 0..rows {
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += gd[r * out + o];
                            }
                        }
                        acc(*b, Tensor::from_vec(db), grads);
                    }
                }
            }
            Op::Conv1d { x, w, b, stride, pad, cols } => {
                let xs = self.value(*x).shape().to_vec();
                let ws = self.value(*w).shape().to_vec();
                let (bsz, len, cin) = (xs[0], xs[1], xs[2]);
                let (cout, k) = (ws[0], ws[1]);
                let kc = k * cin;
                let lout = node.value.shape()[1];
                let rows = bsz * lout;
                if needs(*w) {
                    let mut dw = vec![0.0; cout * kc];
                    gemm(cout, rows, kc, 1.0, gd, 1, cout, cols, kc, 1, 0.0, &mut dw, kc, 1);
                    acc(*w, Tensor::new(ws.clone(), dw).unwrap(), grads);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![0.0; cout];
                        for r in 0..rows {
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += gd[r * cout + o];
                            }
                        }
                        acc(*b, Tensor::from_vec(db), grads);
                    }
                }
                if needs(*x) {
                    let mut dcols = vec![0.0; rows * kc];
                    gemm(rows, cout, kc, 1.0, gd, cout, 1, self.value(*w).data(), kc, 1, 0.0, &mut dcols, kc, 1);
                    let mut dx = vec![0.0; bsz * len * cin];
                    for bi in 0..bsz {
                        for o in 0..lout {
                            let row = &dcols[(bi * lout + o) * kc..(bi * lout + o + 1) * kc];
                            for kk in 0..k {
                                let pos = (o * stride + kk) as isize - *pad as isize;
                                if pos >= 0 && (pos as usize) < len {
                                    let dst = (bi * len + pos as usize) * cin;
                                    for c in 0..cin {
                                        dx[dst + c] += row[kk * cin + c];
                                    }
                                }
                            }
                        }
                    }
                    acc(*x, Tensor::new(xs, dx).unwrap(), grads);
                }
            }
            Op::GroupNorm { x, gamma, beta, group, xhat, inv_std } => {
                let xs = self.value(*x).shape().to_vec();
                let c = *xs.last().unwrap();
                let bsz = xs[0];
                let len = if xs.len() == 3 { xs[1] } else { 1 };
                let gam = self.value(*gamma).data();
                if needs(*gamma) || needs(*beta) {
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for (i, (&d, &h)) in gd.iter().zip(xhat).enumerate() {
                        dg[i % c] += d * h;
                        db[i % c] += d;
                    }
                    acc(*gamma, Tensor::from_vec(dg), grads);
                    acc(*beta, Tensor::from_vec(db), grads);
                }
                if needs(*x) {
                    let ng = c / group;
                    let n = (len * group) as f64;
                    let mut dx = vec![0.0; gd.len()];
                    for bi in 0..bsz {
                        for gi in 0..ng {
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for l in 0..len {
                                let base = (bi * len + l) * c + gi * group;
                                for j in base..base + group {
                                    let dh = gd[j] * gam[j % c];
                                    s1 += dh;
                                    s2 += dh * xhat[j];
                                }
                            }
                            let is = inv_std[bi * ng + gi];
                            for l in 0..len {
                                let base = (bi * len + l) * c + gi * group;
                                for j in base..base + group {
                                    let dh = gd[j] * gam[j % c];
                                    dx[j] = is / n * (n * dh - s1 - xhat[j] * s2);
                                }
                            }
                        }
                    }
                    acc(*x, Tensor::new(xs, dx).unwrap(), grads);
                }
            }
            Op::Film { x, cond } => {
                let xv = self.value(*x);
                let cv = self.value(*cond);
                let s = xv.shape();
                let (bsz, len, c) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; xv.len()];
                let mut dc = vec![0.0; cv.len()];
                for bi in 0..bsz {
                    for l in 0..len {
                        let base = (bi * len + l) * c;
                        for ch in 0..c {
                            let d = gd[base + ch];
                            dx[base + ch] = d * cv.data()[bi * 2 * c + ch];
                            dc[bi * 2 * c + ch] += d * xv.data()[base + ch];
                            dc[bi * 2 * c + c + ch] += d;
                        }
                    }
                }
                if needs(*x) {
                    acc(*x, Tensor::new(s.to_vec(), dx).unwrap(), grads);
                }
                if needs(*cond) {
                    acc(*cond, Tensor::new(cv.shape().to_vec(), dc).unwrap(), grads);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(gd).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                acc(*x, Tensor::new(xv.shape().to_vec(), d).unwrap(), grads);
            }
            Op::Mish(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| g * mish_grad(v))
                    .collect();
                acc(*x, Tensor::new(xv.shape().to_vec(), d).unwrap(), grads);
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let d = y.iter().zip(gd).map(|(&t, &g)| g * (1.0 - t * t)).collect();
                acc(*x, Tensor::new(node.value.shape().to_vec(), d).unwrap(), grads);
            }
            Op::Scale(x, s) => {
                let d = gd.iter().map(|g| g * s).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).unwrap(), grads);
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(*a, g.clone(), grads);
                }
                if needs(*b) {
                    acc(*b, g.clone(), grads);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let d = gd.iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    acc(*a, Tensor::new(g.shape().to_vec(), d).unwrap(), grads);
                }
                if needs(*b) {
                    let d = gd.iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    acc(*b, Tensor::new(g.shape().to_vec(), d).unwrap(), grads);
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = g.rows_cols();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = *pv.shape().last().unwrap();
                    if needs(p) {
                        let mut d = vec![0.0; rows * w];
                        for r in 0..rows {
                            d[r * w..(r + 1) * w].copy_from_slice(&gd[r * total + off..r * total + off + w]);
                        }
                        acc(p, Tensor::new(pv.shape().to_vec(), d).unwrap(), grads);
                    }
                    off += w;
                }
            }
            Op::Upsample(x) => {
                let xs = self.value(*x).shape().to_vec();
                let (bsz, len, c) = (xs[0], xs[1], xs[2]);
                let mut dx = vec![0.0; bsz * len * c];
                for bi in 0..bsz {
                    for l in 0..2 * len {
                        let dst = (bi * len + l / 2) * c;
                        let src = (bi * 2 * len + l) * c;
                        for ch in 0..c {
                            dx[dst + ch] += gd[src + ch];
                        }
                    }
                }
                acc(*x, Tensor::new(xs, dx).unwrap(), grads);
            }
            Op::SinEmb { t, freqs } => {
                let tv = self.value(*t);
                let half = freqs.len();
                let dim = 2 * half;
                let d = tv
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(bi, &tt)| {
                        freqs
                            .iter()
                            .enumerate()
                            .map(|(i, f)| f * (gd[bi * dim + i] * (tt * f).cos() - gd[bi * dim + half + i] * (tt * f).sin()))
                            .sum()
                    })
                    .collect();
                acc(*t, Tensor::new(tv.shape().to_vec(), d).unwrap(), grads);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * gd[0] / av.len().max(1) as f64;
                let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| k * (x - y)).collect();
                if needs(*b) {
                    let neg = diff.iter().map(|d| -d).collect();
                    acc(*b, Tensor::new(bv.shape().to_vec(), neg).unwrap(), grads);
                }
                if needs(*a) {
                    acc(*a, Tensor::new(av.shape().to_vec(), diff).unwrap(), grads);
                }
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(xv.shape(), gd[0] / xv.len().max(1) as f64), grads);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(xv.shape(), gd[0]), grads);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<((usize, usize), Option<Tensor>)>,
}

impl Gradients {
    /// Gradient of any node; zeros when the node did not influence the loss.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter of `store`, zero for parameters the
    /// loss did not touch. Repeated uses of a parameter are summed.
    pub fn param_grads(&self, store: &ParamStore) -> Grads {
        let key = store_key(store);
        let mut out: Vec<Tensor> = (0..store.len()).map(|i| Tensor::zeros(store.tensor(i).shape())).collect();
        for ((k, idx), g) in &self.params {
            if *k == key {
                if let Some(g) = g {
                    out[*idx].add_assign(g);
                }
            }
        }
        Grads::new(out)
    }
}
