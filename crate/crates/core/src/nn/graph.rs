//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records one forward pass. Parameter stores are bound into the
//! graph as leaves; [`Graph::backward`] returns gradients for every node that
//! needs one. Frozen bindings produce no parameter gradients but still pass
//! gradients through to their inputs.

use super::kernels::{conv2d_backward, conv2d_forward, gemm, ConvGeom};
use super::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Graph leaves for every tensor of a [`ParamStore`], index-aligned.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, cout: usize },
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Leaky(Var, f32),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    MaxPool { x: Var, idx: Vec<u32> },
    Upsample(Var),
    Concat(Var, Var),
    Axpby { x: Var, a: f32, y: Var, b: f32 },
    Scale(Var, f32),
    SteClip { x: Var, lo: f32, hi: f32 },
    Reshape(Var),
    Pad { x: Var, p: usize },
    Crop { x: Var, top: usize, left: usize },
    Margin { logits: Var, targets: Vec<usize>, floor: f32 },
    L2Dist { a: Var, b: Var },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    BceLogits { logits: Var, targets: Vec<f32> },
    Mean(Var),
    WeightedSum { x: Var, w: Vec<f32> },
    LatentVar(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const L2_EPS: f64 = 1e-12;

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    match t.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => panic!("expected a 4-d tensor, got {s:?}"),
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [n, f] => (*n, *f),
        s => panic!("expected a 2-d tensor, got {s:?}"),
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn t(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape, data).expect("internal shape bookkeeping")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input, no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input leaf whose gradient is wanted (e.g. an attack perturbation).
    pub fn input_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn bind(&mut self, store: &ParamStore, trainable: bool) -> Bound {
        let vars = store.tensors().iter().map(|t| self.push(t.clone(), Op::Leaf, trainable)).collect();
        Bound { vars }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = dims4(self.value(x));
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be [cout,cin,k,k]");
        assert_eq!(ws[1], cin, "conv input channels: weight {ws:?}, input has {cin}");
        let geom = ConvGeom { cin, h, w: wd, k: ws[2], stride, pad };
        let cout = ws[0];
        let (oh, ow) = geom.out_hw();
        let out = conv2d_forward(self.value(x).data(), n, &geom, self.value(w).data(), self.value(b).data(), cout);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(t(&[n, cout, oh, ow], out), Op::Conv { x, w, b, geom, cout }, ng)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, f) = dims2(self.value(x));
        let (o, f2) = dims2(self.value(w));
        assert_eq!(f, f2, "linear: input features {f} vs weight {f2}");
        let mut out = vec![0.0f32; n * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(n, f, o, self.value(x).data(), false, self.value(w).data(), true, 1.0, &mut out);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(t(&[n, o], out), Op::Linear { x, w, b }, ng)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let v = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(v, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        self.unary(x, move |v| if v > 0.0 { v } else { slope * v }, Op::Leaky(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn scale(&mut self, x: Var, a: f32) -> Var {
        self.unary(x, move |v| a * v, Op::Scale(x, a))
    }

    /// Clip to `[lo, hi]` with a straight-through gradient inside the range
    /// and zero gradient where the clip is active.
    pub fn ste_clip(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        self.unary(x, move |v| v.clamp(lo, hi), Op::SteClip { x, lo, hi })
    }

    /// `a·x + b·y`.
    pub fn axpby(&mut self, x: Var, a: f32, y: Var, b: f32) -> Var {
        let v = self
            .value(x)
            .zip_map(self.value(y), |p, q| a * p + b * q)
            .expect("axpby operands must share a shape");
        let ng = self.ng(x) || self.ng(y);
        self.push(v, Op::Axpby { x, a, y, b }, ng)
    }

    pub fn add(&mut self, x: Var, y: Var) -> Var {
        self.axpby(x, 1.0, y, 1.0)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape).expect("reshape size");
        let ng = self.ng(x);
        self.push(v, Op::Reshape(x), ng)
    }

    /// Flattens `[n, ...]` to `[n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let s = self.value(x).shape();
        let n = s[0];
        let f = s[1..].iter().product();
        self.reshape(x, &[n, f])
    }

    /// 2x2 max pooling, stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        let mut idx = vec![0u32; out.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[j] > src[best] {
                            best = j;
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = src[best];
                    idx[o] = best as u32;
                }
            }
        }
        let ng = self.ng(x);
        self.push(t(&[n, c, oh, ow], out), Op::MaxPool { x, idx }, ng)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[(p * oh + oy) * ow + ox] = src[(p * h + oy / 2) * w + ox / 2];
                }
            }
        }
        let ng = self.ng(x);
        self.push(t(&[n, c, oh, ow], out), Op::Upsample(x), ng)
    }

    /// Channel-wise concatenation of `[n,ca,h,w]` and `[n,cb,h,w]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = dims4(self.value(a));
        let (n2, cb, h2, w2) = dims4(self.value(b));
        assert_eq!((n, h, w), (n2, h2, w2), "concat: batch/spatial mismatch");
        let plane = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&da[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&db[i * cb * plane..(i + 1) * cb * plane]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(t(&[n, ca + cb, h, w], out), Op::Concat(a, b), ng)
    }

    /// Zero padding of `p` pixels on every spatial border.
    pub fn pad2d(&mut self, x: Var, p: usize) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let (oh, ow) = (h + 2 * p, w + 2 * p);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for q in 0..n * c {
            for y in 0..h {
                let d = (q * oh + y + p) * ow + p;
                out[d..d + w].copy_from_slice(&src[(q * h + y) * w..(q * h + y + 1) * w]);
            }
        }
        let ng = self.ng(x);
        self.push(t(&[n, c, oh, ow], out), Op::Pad { x, p }, ng)
    }

    pub fn crop2d(&mut self, x: Var, top: usize, left: usize, oh: usize, ow: usize) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        assert!(top + oh <= h && left + ow <= w, "crop out of bounds");
        let src = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for q in 0..n * c {
            for y in 0..oh {
                let s = (q * h + y + top) * w + left;
                out[(q * oh + y) * ow..(q * oh + y + 1) * ow].copy_from_slice(&src[s..s + ow]);
            }
        }
        let ng = self.ng(x);
        self.push(t(&[n, c, oh, ow], out), Op::Crop { x, top, left }, ng)
    }

    /// Per-sample margin loss `max(max_{i!=t} z_i - z_t, -floor)`, shape `[n]`.
    pub fn margin_loss(&mut self, logits: Var, targets: &[usize], floor: f32) -> Var {
        let (n, k) = dims2(self.value(logits));
        assert_eq!(targets.len(), n);
        let z = self.value(logits).data();
        let out = (0..n).map(|i| crate::attack::margin_of(&z[i * k..(i + 1) * k], targets[i]).0.max(-floor)).collect();
        let ng = self.ng(logits);
        self.push(t(&[n], out), Op::Margin { logits, targets: targets.to_vec(), floor }, ng)
    }

    /// Per-sample Euclidean distance `||a_i - b_i||_2`, shape `[n]`.
    pub fn l2_dist(&mut self, a: Var, b: Var) -> Var {
        let sa = self.value(a).shape().to_vec();
        assert_eq!(sa, self.value(b).shape(), "l2_dist shapes");
        let n = sa[0];
        let per = self.value(a).len() / n;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = (0..n)
            .map(|i| {
                let s: f64 = (i * per..(i + 1) * per).map(|j| ((da[j] - db[j]) as f64).powi(2)).sum();
                (s + L2_EPS).sqrt() as f32
            })
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(t(&[n], out), Op::L2Dist { a, b }, ng)
    }

    /// Per-sample softmax cross entropy, shape `[n]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (n, k) = dims2(self.value(logits));
        let z = self.value(logits).data();
        let out = (0..n)
            .map(|i| {
                let row = &z[i * k..(i + 1) * k];
                let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f32>().ln();
                lse - row[targets[i]]
            })
            .collect();
        let ng = self.ng(logits);
        self.push(t(&[n], out), Op::CrossEntropy { logits, targets: targets.to_vec() }, ng)
    }

    /// Per-sample binary cross entropy on logits `[n]` or `[n,1]`.
    pub fn bce_logits(&mut self, logits: Var, targets: &[f32]) -> Var {
        let z = self.value(logits).data();
        assert_eq!(z.len(), targets.len());
        let out = z.iter().zip(targets).map(|(&z, &y)| softplus(z) - y * z).collect();
        let ng = self.ng(logits);
        self.push(t(&[targets.len()], out), Op::BceLogits { logits, targets: targets.to_vec() }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).mean() as f32;
        let ng = self.ng(x);
        self.push(Tensor::scalar(v), Op::Mean(x), ng)
    }

    /// `Σ x_i·w_i` against a constant weight vector.
    pub fn weighted_sum(&mut self, x: Var, w: &[f32]) -> Var {
        assert_eq!(self.value(x).len(), w.len(), "weighted_sum length");
        let v: f64 = self.value(x).data().iter().zip(w).map(|(&a, &b)| a as f64 * b as f64).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(v as f32), Op::WeightedSum { x, w: w.to_vec() }, ng)
    }

    /// Average over coordinates of the unbiased per-coordinate variance of `[n,d]`.
    pub fn latent_variance(&mut self, x: Var) -> Var {
        let v = latent_variance_value(self.value(x));
        let ng = self.ng(x);
        self.push(Tensor::scalar(v as f32), Op::LatentVar(x), ng)
    }

    /// Gradients of the scalar `loss` w.r.t. every node that needs one.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Grads(grads)
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Vec<f32>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(&g) {
                    *e += x;
                }
            }
            slot => *slot = Some(t(self.value(v).shape(), g)),
        }
    }

    fn backprop(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let go = gout.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, cout } => {
                let n = self.value(*x).shape()[0];
                let mut dw = self.ng(*w).then(|| vec![0.0f32; self.value(*w).len()]);
                let mut db = self.ng(*b).then(|| vec![0.0f32; *cout]);
                let dx = conv2d_backward(
                    self.value(*x).data(),
                    n,
                    geom,
                    self.value(*w).data(),
                    *cout,
                    go,
                    self.ng(*x),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.accum(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accum(grads, *w, dw);
                }
                if let Some(db) = db {
                    self.accum(grads, *b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, f) = dims2(self.value(*x));
                let o = self.value(*w).shape()[0];
                if self.ng(*x) {
                    let mut dx = vec![0.0f32; n * f];
                    gemm(n, o, f, go, false, self.value(*w).data(), false, 0.0, &mut dx);
                    self.accum(grads, *x, dx);
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0f32; o * f];
                    gemm(o, n, f, go, true, self.value(*x).data(), false, 0.0, &mut dw);
                    self.accum(grads, *w, dw);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0f32; o];
                    for row in go.chunks(o) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.accum(grads, *b, db);
                }
            }
            Op::Relu(x) => {
                let g = self.value(*x).data().iter().zip(go).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                self.accum(grads, *x, g);
            }
            Op::Leaky(x, s) => {
                let g = self.value(*x).data().iter().zip(go).map(|(&v, &g)| if v > 0.0 { g } else { s * g }).collect();
                self.accum(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = node.value.data().iter().zip(go).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                self.accum(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = node.value.data().iter().zip(go).map(|(&y, &g)| g * (1.0 - y * y)).collect();
                self.accum(grads, *x, g);
            }
            Op::Softplus(x) => {
                let g = self.value(*x).data().iter().zip(go).map(|(&v, &g)| g * sigmoid(v)).collect();
                self.accum(grads, *x, g);
            }
            Op::Scale(x, a) => {
                let g = go.iter().map(|&g| a * g).collect();
                self.accum(grads, *x, g);
            }
            Op::SteClip { x, lo, hi } => {
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&v, &g)| if v >= *lo && v <= *hi { g } else { 0.0 })
                    .collect();
                self.accum(grads, *x, g);
            }
            Op::Axpby { x, a, y, b } => {
                if self.ng(*x) {
                    self.accum(grads, *x, go.iter().map(|&g| a * g).collect());
                }
                if self.ng(*y) {
                    self.accum(grads, *y, go.iter().map(|&g| b * g).collect());
                }
            }
            Op::Reshape(x) => self.accum(grads, *x, go.to_vec()),
            Op::MaxPool { x, idx } => {
                let mut g = vec![0.0f32; self.value(*x).len()];
                for (o, &j) in idx.iter().enumerate() {
                    g[j as usize] += go[o];
                }
                self.accum(grads, *x, g);
            }
            Op::Upsample(x) => {
                let (n, c, h, w) = dims4(self.value(*x));
                let (oh, ow) = (2 * h, 2 * w);
                let mut g = vec![0.0f32; n * c * h * w];
                for p in 0..n * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            g[(p * h + oy / 2) * w + ox / 2] += go[(p * oh + oy) * ow + ox];
                        }
                    }
                }
                self.accum(grads, *x, g);
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = dims4(self.value(*a));
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for i in 0..n {
                    let base = i * (ca + cb) * plane;
                    ga.extend_from_slice(&go[base..base + ca * plane]);
                    gb.extend_from_slice(&go[base + ca * plane..base + (ca + cb) * plane]);
                }
                self.accum(grads, *a, ga);
                self.accum(grads, *b, gb);
            }
            Op::Pad { x, p } => {
                let (n, c, h, w) = dims4(self.value(*x));
                let (oh, ow) = (h + 2 * p, w + 2 * p);
                let mut g = vec![0.0f32; n * c * h * w];
                for q in 0..n * c {
                    for y in 0..h {
                        let s = (q * oh + y + p) * ow + p;
                        g[(q * h + y) * w..(q * h + y + 1) * w].copy_from_slice(&go[s..s + w]);
                    }
                }
                self.accum(grads, *x, g);
            }
            Op::Crop { x, top, left } => {
                let (n, c, h, w) = dims4(self.value(*x));
                let (_, _, oh, ow) = dims4(&node.value);
                let mut g = vec![0.0f32; n * c * h * w];
                for q in 0..n * c {
                    for y in 0..oh {
                        let d = (q * h + y + top) * w + left;
                        g[d..d + ow].copy_from_slice(&go[(q * oh + y) * ow..(q * oh + y + 1) * ow]);
                    }
                }
                self.accum(grads, *x, g);
            }
            Op::Margin { logits, targets, floor } => {
                let (n, k) = dims2(self.value(*logits));
                let z = self.value(*logits).data();
                let mut g = vec![0.0f32; n * k];
                for i in 0..n {
                    let row = &z[i * k..(i + 1) * k];
                    let (m, j) = crate::attack::margin_of(row, targets[i]);
                    if m > -*floor {
                        g[i * k + j] += go[i];
                        g[i * k + targets[i]] -= go[i];
                    }
                }
                self.accum(grads, *logits, g);
            }
            Op::L2Dist { a, b } => {
                let n = node.value.len();
                let per = self.value(*a).len() / n;
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0f32; da.len()];
                for i in 0..n {
                    let d = node.value.data()[i];
                    let s = go[i] / d;
                    for j in i * per..(i + 1) * per {
                        ga[j] = s * (da[j] - db[j]);
                    }
                }
                if self.ng(*b) {
                    self.accum(grads, *b, ga.iter().map(|v| -v).collect());
                }
                self.accum(grads, *a, ga);
            }
            Op::CrossEntropy { logits, targets } => {
                let (n, k) = dims2(self.value(*logits));
                let z = self.value(*logits).data();
                let mut g = vec![0.0f32; n * k];
                for i in 0..n {
                    let row = &z[i * k..(i + 1) * k];
                    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let e: Vec<f32> = row.iter().map(|&v| (v - m).exp()).collect();
                    let s: f32 = e.iter().sum();
                    for j in 0..k {
                        g[i * k + j] = go[i] * (e[j] / s - if j == targets[i] { 1.0 } else { 0.0 });
                    }
                }
                self.accum(grads, *logits, g);
            }
            Op::BceLogits { logits, targets } => {
                let z = self.value(*logits).data();
                let g = z.iter().zip(targets).zip(go).map(|((&z, &y), &g)| g * (sigmoid(z) - y)).collect();
                self.accum(grads, *logits, g);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                self.accum(grads, *x, vec![go[0] / len as f32; len]);
            }
            Op::WeightedSum { x, w } => {
                self.accum(grads, *x, w.iter().map(|&c| c * go[0]).collect());
            }
            Op::LatentVar(x) => {
                let (n, d) = dims2(self.value(*x));
                let w = self.value(*x).data();
                let mut g = vec![0.0f32; n * d];
                for j in 0..d {
                    let mean = (0..n).map(|i| w[i * d + j] as f64).sum::<f64>() / n as f64;
                    for i in 0..n {
                        g[i * d + j] =
                            (go[0] as f64 * 2.0 * (w[i * d + j] as f64 - mean) / ((n - 1) as f64 * d as f64)) as f32;
                    }
                }
                self.accum(grads, *x, g);
            }
        }
    }
}

/// `(1/d)·Σ_j var_j` with the `n-1` denominator, for a `[n,d]` tensor.
pub fn latent_variance_value(x: &Tensor) -> f64 {
    let (n, d) = dims2(x);
    let w = x.data();
    let mut total = 0.0f64;
    for j in 0..d {
        let mean = (0..n).map(|i| w[i * d + j] as f64).sum::<f64>() / n as f64;
        total += (0..n).map(|i| (w[i * d + j] as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    total / d as f64
}

pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    /// Gradients for a bound store, zero-filled where a tensor got no gradient.
    pub fn for_params(&self, bound: &Bound, store: &ParamStore) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(store.tensors())
            .map(|(v, t)| self.of(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}
