//! Minimal reverse-mode differentiation over f64 vectors.
//!
//! A [`Tape`] records eagerly-evaluated vector operations against a flat
//! parameter store. Values live in one arena so a tape can be reused across
//! batches without reallocating. Gradients flow into a [`GradSink`] that keeps
//! the (small) network-parameter region dense and embedding-row gradients
//! sparse, so per-chunk accumulation stays cheap even with large embedding
//! tables.
//!
//! Parameters that never enter a forward pass receive no gradient at all,
//! which is what makes the exposure-specific branch-isolation checks exact.

#![allow(clippy::needless_range_loop)] // index loops mirror the tensor math

use std::collections::HashMap;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Id(usize);

#[derive(Debug, Clone, Copy)]
struct Node {
    start: usize,
    len: usize,
    op: Op,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Constant input; gradient stops here.
    Input,
    /// Leaf view of `params[offset .. offset+len]`.
    Param { offset: usize },
    /// y = W x + b with W row-major `rows x cols` at `w_off`, b at `b_off`.
    Affine { w_off: usize, rows: usize, cols: usize, b_off: usize, x: Id },
    Add { a: Id, b: Id },
    /// Concatenation of a list of nodes (list arena slice).
    ConcatN { list_start: usize, list_len: usize },
    /// Copy of x[from .. from+len].
    Slice { x: Id, from: usize },
    LeakyRelu { x: Id, slope: f64 },
    Sigmoid { x: Id },
    Softmax { x: Id },
    /// y = x + c where c was folded in at creation time.
    AddConst { x: Id },
    Scale { x: Id, k: f64 },
    /// Scalar inner product.
    Dot { a: Id, b: Id },
    /// y = sum_i weights[i] * item_i (items in the list arena).
    WeightedSum { weights: Id, list_start: usize, list_len: usize },
    /// Gather scalar nodes into one vector.
    StackScalars { list_start: usize, list_len: usize },
    /// Scalar sum of scalar nodes.
    SumScalars { list_start: usize, list_len: usize },
    /// Stable binary cross-entropy against a constant target, from a logit.
    BceWithLogits { logit: Id, target: f64 },
    /// (pred - target)^2.
    SquaredError { pred: Id, target: f64 },
    /// KL(softmax(logits) || uniform) for one categorical block.
    KlToUniform { logits: Id },
    /// Sum of squares of a parameter block (for the L2 regularizer).
    L2 { offset: usize, plen: usize },
}

/// Gradient accumulator: dense over `[0, net_len)` (network weights), sparse
/// per-block beyond (embedding rows).
#[derive(Debug, Clone)]
pub struct GradSink {
    pub net: Vec<f64>,
    pub emb: HashMap<usize, Vec<f64>>,
    net_len: usize,
}

impl GradSink {
    pub fn new(net_len: usize) -> Self {
        GradSink {
            net: vec![0.0; net_len],
            emb: HashMap::new(),
            net_len,
        }
    }

    #[inline]
    fn at(&mut self, offset: usize, len: usize) -> &mut [f64] {
        if offset < self.net_len {
            &mut self.net[offset..offset + len]
        } else {
            self.emb
                .entry(offset)
                .or_insert_with(|| vec![0.0; len])
                .as_mut_slice()
        }
    }

    /// Add `other` into `self`. Merging chunk sinks in a fixed order keeps
    /// accumulation bit-deterministic.
    pub fn merge(&mut self, other: &GradSink) {
        for (a, b) in self.net.iter_mut().zip(&other.net) {
            *a += b;
        }
        for (&off, block) in &other.emb {
            let dst = self
                .emb
                .entry(off)
                .or_insert_with(|| vec![0.0; block.len()]);
            for (a, b) in dst.iter_mut().zip(block) {
                *a += b;
            }
        }
    }

    /// Scatter into a full-length dense gradient vector.
    pub fn scatter_into(&self, dense: &mut [f64]) {
        dense[..self.net_len].iter_mut().zip(&self.net).for_each(|(d, g)| *d += g);
        for (&off, block) in &self.emb {
            for (j, g) in block.iter().enumerate() {
                dense[off + j] += g;
            }
        }
    }
}

/// Eager computation tape over a borrowed flat parameter vector.
pub struct Tape<'p> {
    params: &'p [f64],
    buf: Vec<f64>,
    nodes: Vec<Node>,
    lists: Vec<Id>,
    touched: Vec<(usize, usize)>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            buf: Vec::new(),
            nodes: Vec::new(),
            lists: Vec::new(),
            touched: Vec::new(),
        }
    }

    /// Reset for reuse, keeping allocations.
    pub fn clear(&mut self) {
        self.buf.clear();
        self.nodes.clear();
        self.lists.clear();
        self.touched.clear();
    }

    pub fn value(&self, id: Id) -> &[f64] {
        let n = self.nodes[id.0];
        &self.buf[n.start..n.start + n.len]
    }

    pub fn scalar(&self, id: Id) -> f64 {
        debug_assert_eq!(self.nodes[id.0].len, 1);
        self.buf[self.nodes[id.0].start]
    }

    /// Parameter views (offset, len) referenced so far, in emission order.
    pub fn touched_params(&self) -> &[(usize, usize)] {
        &self.touched
    }

    fn push(&mut self, len: usize, op: Op) -> Id {
        let start = self.buf.len();
        self.buf.resize(start + len, 0.0);
        self.nodes.push(Node { start, len, op });
        Id(self.nodes.len() - 1)
    }

    pub fn input(&mut self, v: &[f64]) -> Id {
        let id = self.push(v.len(), Op::Input);
        let n = self.nodes[id.0];
        self.buf[n.start..n.start + n.len].copy_from_slice(v);
        id
    }

    pub fn param(&mut self, offset: usize, len: usize) -> Id {
        self.touched.push((offset, len));
        let id = self.push(len, Op::Param { offset });
        let n = self.nodes[id.0];
        self.buf[n.start..n.start + n.len].copy_from_slice(&self.params[offset..offset + len]);
        id
    }

    pub fn affine(&mut self, w_off: usize, rows: usize, cols: usize, b_off: usize, x: Id) -> Id {
        debug_assert_eq!(self.nodes[x.0].len, cols);
        self.touched.push((w_off, rows * cols));
        self.touched.push((b_off, rows));
        let id = self.push(rows, Op::Affine { w_off, rows, cols, b_off, x });
        let xn = self.nodes[x.0];
        let on = self.nodes[id.0];
        for i in 0..rows {
            let wrow = &self.params[w_off + i * cols..w_off + (i + 1) * cols];
            let mut acc = self.params[b_off + i];
            for j in 0..cols {
                acc += wrow[j] * self.buf[xn.start + j];
            }
            self.buf[on.start + i] = acc;
        }
        id
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        let len = self.nodes[a.0].len;
        debug_assert_eq!(len, self.nodes[b.0].len);
        let id = self.push(len, Op::Add { a, b });
        let (an, bn, on) = (self.nodes[a.0], self.nodes[b.0], self.nodes[id.0]);
        for i in 0..len {
            self.buf[on.start + i] = self.buf[an.start + i] + self.buf[bn.start + i];
        }
        id
    }

    pub fn concat(&mut self, parts: &[Id]) -> Id {
        let list_start = self.lists.len();
        self.lists.extend_from_slice(parts);
        let len: usize = parts.iter().map(|p| self.nodes[p.0].len).sum();
        let id = self.push(len, Op::ConcatN { list_start, list_len: parts.len() });
        let on = self.nodes[id.0];
        let mut at = on.start;
        for &p in parts {
            let pn = self.nodes[p.0];
            self.buf.copy_within(pn.start..pn.start + pn.len, at);
            at += pn.len;
        }
        id
    }

    pub fn slice(&mut self, x: Id, from: usize, len: usize) -> Id {
        debug_assert!(from + len <= self.nodes[x.0].len);
        let id = self.push(len, Op::Slice { x, from });
        let (xn, on) = (self.nodes[x.0], self.nodes[id.0]);
        self.buf.copy_within(xn.start + from..xn.start + from + len, on.start);
        id
    }

    pub fn leaky_relu(&mut self, x: Id, slope: f64) -> Id {
        let len = self.nodes[x.0].len;
        let id = self.push(len, Op::LeakyRelu { x, slope });
        let (xn, on) = (self.nodes[x.0], self.nodes[id.0]);
        for i in 0..len {
            let v = self.buf[xn.start + i];
            self.buf[on.start + i] = if v > 0.0 { v } else { slope * v };
        }
        id
    }

    pub fn sigmoid(&mut self, x: Id) -> Id {
        let len = self.nodes[x.0].len;
        let id = self.push(len, Op::Sigmoid { x });
        let (xn, on) = (self.nodes[x.0], self.nodes[id.0]);
        for i in 0..len {
            self.buf[on.start + i] = sigmoid(self.buf[xn.start + i]);
        }
        id
    }

    pub fn softmax(&mut self, x: Id) -> Id {
        let len = self.nodes[x.0].len;
        let id = self.push(len, Op::Softmax { x });
        let (xn, on) = (self.nodes[x.0], self.nodes[id.0]);
        let max = (0..len)
            .map(|i| self.buf[xn.start + i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..len {
            let e = (self.buf[xn.start + i] - max).exp();
            self.buf[on.start + i] = e;
            sum += e;
        }
        for i in 0..len {
            self.buf[on.start + i] /= sum;
        }
        id
    }

    pub fn add_const(&mut self, x: Id, c: &[f64]) -> Id {
        let len = self.nodes[x.0].len;
        debug_assert_eq!(len, c.len());
        let id = self.push(len, Op::AddConst { x });
        let (xn, on) = (self.nodes[x.0], self.nodes[id.0]);
        for i in 0..len {
            self.buf[on.start + i] = self.buf[xn.start + i] + c[i];
        }
        id
    }

    pub fn scale(&mut self, x: Id, k: f64) -> Id {
        let len = self.nodes[x.0].len;
        let id = self.push(len, Op::Scale { x, k });
        let (xn, on) = (self.nodes[x.0], self.nodes[id.0]);
        for i in 0..len {
            self.buf[on.start + i] = k * self.buf[xn.start + i];
        }
        id
    }

    pub fn dot(&mut self, a: Id, b: Id) -> Id {
        let len = self.nodes[a.0].len;
        debug_assert_eq!(len, self.nodes[b.0].len);
        let id = self.push(1, Op::Dot { a, b });
        let (an, bn, on) = (self.nodes[a.0], self.nodes[b.0], self.nodes[id.0]);
        let mut acc = 0.0;
        for i in 0..len {
            acc += self.buf[an.start + i] * self.buf[bn.start + i];
        }
        self.buf[on.start] = acc;
        id
    }

    pub fn weighted_sum(&mut self, weights: Id, items: &[Id]) -> Id {
        debug_assert_eq!(self.nodes[weights.0].len, items.len());
        let dim = self.nodes[items[0].0].len;
        let list_start = self.lists.len();
        self.lists.extend_from_slice(items);
        let id = self.push(
            dim,
            Op::WeightedSum { weights, list_start, list_len: items.len() },
        );
        let (wn, on) = (self.nodes[weights.0], self.nodes[id.0]);
        for (i, &item) in items.iter().enumerate() {
            let w = self.buf[wn.start + i];
            let itn = self.nodes[item.0];
            for j in 0..dim {
                self.buf[on.start + j] += w * self.buf[itn.start + j];
            }
        }
        id
    }

    pub fn stack_scalars(&mut self, scalars: &[Id]) -> Id {
        let list_start = self.lists.len();
        self.lists.extend_from_slice(scalars);
        let id = self.push(
            scalars.len(),
            Op::StackScalars { list_start, list_len: scalars.len() },
        );
        let on = self.nodes[id.0];
        for (i, &s) in scalars.iter().enumerate() {
            debug_assert_eq!(self.nodes[s.0].len, 1);
            self.buf[on.start + i] = self.buf[self.nodes[s.0].start];
        }
        id
    }

    pub fn sum_scalars(&mut self, scalars: &[Id]) -> Id {
        let list_start = self.lists.len();
        self.lists.extend_from_slice(scalars);
        let id = self.push(1, Op::SumScalars { list_start, list_len: scalars.len() });
        let on = self.nodes[id.0];
        let mut acc = 0.0;
        for &s in scalars {
            acc += self.buf[self.nodes[s.0].start];
        }
        self.buf[on.start] = acc;
        id
    }

    pub fn bce_with_logits(&mut self, logit: Id, target: f64) -> Id {
        debug_assert_eq!(self.nodes[logit.0].len, 1);
        let id = self.push(1, Op::BceWithLogits { logit, target });
        let z = self.buf[self.nodes[logit.0].start];
        // max(z,0) - t*z + ln(1 + exp(-|z|))
        let loss = z.max(0.0) - target * z + (-z.abs()).exp().ln_1p();
        self.buf[self.nodes[id.0].start] = loss;
        id
    }

    pub fn squared_error(&mut self, pred: Id, target: f64) -> Id {
        debug_assert_eq!(self.nodes[pred.0].len, 1);
        let id = self.push(1, Op::SquaredError { pred, target });
        let p = self.buf[self.nodes[pred.0].start];
        self.buf[self.nodes[id.0].start] = (p - target) * (p - target);
        id
    }

    pub fn kl_to_uniform(&mut self, logits: Id) -> Id {
        let c = self.nodes[logits.0].len;
        let id = self.push(1, Op::KlToUniform { logits });
        let q = softmax_of(&self.buf[self.nodes[logits.0].start..][..c]);
        let kl: f64 = q.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>()
            + (c as f64).ln();
        self.buf[self.nodes[id.0].start] = kl.max(0.0);
        id
    }

    pub fn l2(&mut self, offset: usize, plen: usize) -> Id {
        self.touched.push((offset, plen));
        let id = self.push(1, Op::L2 { offset, plen });
        let s: f64 = self.params[offset..offset + plen].iter().map(|w| w * w).sum();
        self.buf[self.nodes[id.0].start] = s;
        id
    }

    /// Reverse pass from a scalar root with seed `d(root_total)/d(root) = seed`.
    /// Parameter gradients accumulate into `sink`; the tape can keep recording
    /// afterwards, but nodes created later are unaffected.
    pub fn backward(&self, root: Id, seed: f64, sink: &mut GradSink) {
        debug_assert_eq!(self.nodes[root.0].len, 1);
        let mut grad = vec![0.0; self.buf.len()];
        grad[self.nodes[root.0].start] = seed;
        let mut tmp: Vec<f64> = Vec::new();
        for idx in (0..=root.0).rev() {
            let node = self.nodes[idx];
            let gslice = &grad[node.start..node.start + node.len];
            if gslice.iter().all(|&g| g == 0.0) {
                continue;
            }
            tmp.clear();
            tmp.extend_from_slice(gslice);
            match node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    let dst = sink.at(offset, node.len);
                    for (d, g) in dst.iter_mut().zip(&tmp) {
                        *d += g;
                    }
                }
                Op::Affine { w_off, rows, cols, b_off, x } => {
                    let xn = self.nodes[x.0];
                    {
                        let db = sink.at(b_off, rows);
                        for i in 0..rows {
                            db[i] += tmp[i];
                        }
                    }
                    {
                        let dw = sink.at(w_off, rows * cols);
                        for i in 0..rows {
                            let gi = tmp[i];
                            if gi == 0.0 {
                                continue;
                            }
                            for j in 0..cols {
                                dw[i * cols + j] += gi * self.buf[xn.start + j];
                            }
                        }
                    }
                    for j in 0..cols {
                        let mut acc = 0.0;
                        for i in 0..rows {
                            acc += tmp[i] * self.params[w_off + i * cols + j];
                        }
                        grad[xn.start + j] += acc;
                    }
                }
                Op::Add { a, b } => {
                    let (an, bn) = (self.nodes[a.0], self.nodes[b.0]);
                    for i in 0..node.len {
                        grad[an.start + i] += tmp[i];
                        grad[bn.start + i] += tmp[i];
                    }
                }
                Op::ConcatN { list_start, list_len } => {
                    let mut at = 0usize;
                    for k in 0..list_len {
                        let p = self.lists[list_start + k];
                        let pn = self.nodes[p.0];
                        for i in 0..pn.len {
                            grad[pn.start + i] += tmp[at + i];
                        }
                        at += pn.len;
                    }
                }
                Op::Slice { x, from } => {
                    let xn = self.nodes[x.0];
                    for i in 0..node.len {
                        grad[xn.start + from + i] += tmp[i];
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xn = self.nodes[x.0];
                    for i in 0..node.len {
                        let d = if self.buf[xn.start + i] > 0.0 { 1.0 } else { slope };
                        grad[xn.start + i] += tmp[i] * d;
                    }
                }
                Op::Sigmoid { x } => {
                    let xn = self.nodes[x.0];
                    for i in 0..node.len {
                        let s = self.buf[node.start + i];
                        grad[xn.start + i] += tmp[i] * s * (1.0 - s);
                    }
                }
                Op::Softmax { x } => {
                    let xn = self.nodes[x.0];
                    let q = &self.buf[node.start..node.start + node.len];
                    let inner: f64 = (0..node.len).map(|i| tmp[i] * q[i]).sum();
                    for i in 0..node.len {
                        grad[xn.start + i] += q[i] * (tmp[i] - inner);
                    }
                }
                Op::AddConst { x } | Op::Scale { x, .. } => {
                    let k = if let Op::Scale { k, .. } = node.op { k } else { 1.0 };
                    let xn = self.nodes[x.0];
                    for i in 0..node.len {
                        grad[xn.start + i] += tmp[i] * k;
                    }
                }
                Op::Dot { a, b } => {
                    let (an, bn) = (self.nodes[a.0], self.nodes[b.0]);
                    let g = tmp[0];
                    for i in 0..an.len {
                        grad[an.start + i] += g * self.buf[bn.start + i];
                        grad[bn.start + i] += g * self.buf[an.start + i];
                    }
                }
                Op::WeightedSum { weights, list_start, list_len } => {
                    let wn = self.nodes[weights.0];
                    for k in 0..list_len {
                        let item = self.lists[list_start + k];
                        let itn = self.nodes[item.0];
                        let w = self.buf[wn.start + k];
                        let mut dw = 0.0;
                        for j in 0..node.len {
                            dw += tmp[j] * self.buf[itn.start + j];
                            grad[itn.start + j] += tmp[j] * w;
                        }
                        grad[wn.start + k] += dw;
                    }
                }
                Op::StackScalars { list_start, list_len } => {
                    for k in 0..list_len {
                        let s = self.lists[list_start + k];
                        grad[self.nodes[s.0].start] += tmp[k];
                    }
                }
                Op::SumScalars { list_start, list_len } => {
                    for k in 0..list_len {
                        let s = self.lists[list_start + k];
                        grad[self.nodes[s.0].start] += tmp[0];
                    }
                }
                Op::BceWithLogits { logit, target } => {
                    let z = self.buf[self.nodes[logit.0].start];
                    grad[self.nodes[logit.0].start] += tmp[0] * (sigmoid(z) - target);
                }
                Op::SquaredError { pred, target } => {
                    let p = self.buf[self.nodes[pred.0].start];
                    grad[self.nodes[pred.0].start] += tmp[0] * 2.0 * (p - target);
                }
                Op::KlToUniform { logits } => {
                    let ln = self.nodes[logits.0];
                    let q = softmax_of(&self.buf[ln.start..ln.start + ln.len]);
                    let ent: f64 = q
                        .iter()
                        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                        .sum();
                    for i in 0..ln.len {
                        let lnq = if q[i] > 0.0 { q[i].ln() } else { 0.0 };
                        grad[ln.start + i] += tmp[0] * q[i] * (lnq + ent);
                    }
                }
                Op::L2 { offset, plen } => {
                    let dst = sink.at(offset, plen);
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d += tmp[0] * 2.0 * self.params[offset + j];
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_of(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = q.iter().sum();
    for v in &mut q {
        *v /= sum;
    }
    q
}
