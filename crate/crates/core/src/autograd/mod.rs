//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass as a node. Calling
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients
//! for everything that requires them. Model parameters enter the tape via
//! [`Tape::param`] and their gradients are read back per [`ParamStore`].
//!
//! Fused operations that need a hand-written adjoint (rate likelihoods,
//! attention terms) implement [`CustomOp`].

pub mod conv;
mod params;

use std::collections::HashMap;

pub use conv::ConvGeom;
pub use params::{ParamId, ParamStore, Parameter};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation with a hand-written adjoint.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;
    /// Gradients w.r.t. each input, given the upstream gradient of the output.
    /// Return `None` for inputs that receive no gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

#[derive(Clone, Copy, Debug)]
pub enum Unary<T> {
    Neg,
    Square,
    Sqrt,
    Log,
    Exp,
    Abs,
    Relu,
    LeakyRelu(T),
    Sigmoid,
    Tanh,
    Softplus,
    AddScalar(T),
    MulScalar(T),
    /// `max(x, bound)`; the gradient still flows below the bound when it
    /// would push `x` upward.
    LowerBound(T),
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Unary<T> {
    fn apply(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Log => x.ln(),
            Unary::Exp => x.exp(),
            Unary::Abs => x.abs(),
            Unary::Relu => x.max(T::zero()),
            Unary::LeakyRelu(s) => {
                if x >= T::zero() {
                    x
                } else {
                    s * x
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::AddScalar(c) => x + c,
            Unary::MulScalar(c) => x * c,
            Unary::LowerBound(b) => x.max(b),
        }
    }

    /// Local derivative times upstream gradient `g`, given input `x` and output `y`.
    fn adjoint(self, x: T, y: T, g: T) -> T {
        let two = T::one() + T::one();
        match self {
            Unary::Neg => -g,
            Unary::Square => two * x * g,
            Unary::Sqrt => g / (two * y),
            Unary::Log => g / x,
            Unary::Exp => g * y,
            Unary::Abs => g * x.signum() * if x == T::zero() { T::zero() } else { T::one() },
            Unary::Relu => {
                if x > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(s) => {
                if x >= T::zero() {
                    g
                } else {
                    s * g
                }
            }
            Unary::Sigmoid => g * y * (T::one() - y),
            Unary::Tanh => g * (T::one() - y * y),
            Unary::Softplus => g * sigmoid(x),
            Unary::AddScalar(_) => g,
            Unary::MulScalar(c) => g * c,
            Unary::LowerBound(b) => {
                if x >= b || g < T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T: Scalar> {
    Leaf,
    Param,
    Unary(Var, Unary<T>),
    /// rhs broadcasts to the lhs shape (same rank, unit dims expand).
    Binary(Var, Var, Binary),
    Sum(Var),
    Mean(Var),
    SumChannels(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    SwapLeading(Var),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    Crop(Var),
    PixelShuffle(Var, usize),
    BatchMatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Custom(Box<dyn CustomOp<T>>, Vec<Var>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`]; retained for leaves and parameters.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients belonging to `store`.
    pub fn for_store<'a>(&'a self, store: &'a ParamStore<T>) -> impl Iterator<Item = (ParamId, &'a Tensor<T>)> + 'a {
        self.params
            .iter()
            .filter(move |(id, _)| id.store_id() == store.id())
            .filter_map(move |(id, v)| self.wrt(*v).map(|g| (*id, g)))
    }
}

/// Index map for broadcasting `small` onto `big` (same rank).
fn broadcast_index(big: &[usize], small: &[usize]) -> Vec<usize> {
    assert_eq!(big.len(), small.len(), "broadcast rank mismatch {big:?} vs {small:?}");
    let rank = big.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        assert!(small[d] == big[d] || small[d] == 1, "cannot broadcast {small:?} to {big:?}");
        strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let total: usize = big.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(offset);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < big[d] {
                break;
            }
            offset -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records gradients.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true, params: HashMap::new() }
    }

    /// A tape for inference: nothing requires gradients.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false, params: HashMap::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad: requires_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input that collects a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bring a parameter onto the tape; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let frozen = store.is_frozen(id);
        let v = self.push(store.get(id).clone(), Op::Param, !frozen);
        self.params.insert(id, v);
        v
    }

    pub fn unary(&mut self, x: Var, op: Unary<T>) -> Var {
        let value = self.value(x).map(|v| op.apply(v));
        let rg = self.rg(&[x]);
        self.push(value, Op::Unary(x, op), rg)
    }

    pub fn binary(&mut self, a: Var, b: Var, op: Binary) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: T, y: T| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, f)
        } else {
            let map = broadcast_index(va.shape(), vb.shape());
            let db = vb.data();
            let data = va.data().iter().zip(&map).map(|(&x, &j)| f(x, db[j])).collect();
            Tensor::from_vec(va.shape(), data).expect("broadcast keeps lhs shape")
        };
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Binary(a, b, op), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Div)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(T::of(slope)))
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

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::AddScalar(T::of(c)))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::MulScalar(T::of(c)))
    }

    pub fn lower_bound(&mut self, x: Var, bound: f64) -> Var {
        self.unary(x, Unary::LowerBound(T::of(bound)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / T::of(v.len() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// `[n, c, h, w] → [n, 1, h, w]`.
    pub fn sum_channels(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, 1, h, w]);
        for s in 0..n {
            let dst = &mut out.data_mut()[s * plane..(s + 1) * plane];
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for (d, &v) in dst.iter_mut().zip(&src[base..base + plane]) {
                    *d += v;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::SumChannels(x), rg)
    }

    /// `[n, c, h, w] → [n, c, 1, 1]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let plane = h * w;
        let inv = T::of(1.0 / plane as f64);
        let src = self.value(x).data();
        let data = (0..n * c).map(|i| src[i * plane..(i + 1) * plane].iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], data).expect("pool shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::GlobalAvgPool(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape).expect("reshape element count");
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    /// Swap the two leading axes: `[a, b, rest..] → [b, a, rest..]`.
    pub fn swap_leading(&mut self, x: Var) -> Var {
        let out = swap_leading(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::SwapLeading(x), rg)
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let (n, _, h, w) = self.value(xs[0]).dims4();
        let plane = h * w;
        let total_c: usize = xs.iter().map(|&v| self.value(v).dims4().1).sum();
        let mut out = Tensor::zeros(&[n, total_c, h, w]);
        let mut c0 = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4();
            assert_eq!((vn, vh, vw), (n, h, w), "concat: mismatched dims");
            for s in 0..n {
                let src = &self.value(v).data()[s * vc * plane..(s + 1) * vc * plane];
                let dst_base = (s * total_c + c0) * plane;
                out.data_mut()[dst_base..dst_base + vc * plane].copy_from_slice(src);
            }
            c0 += vc;
        }
        let rg = self.rg(xs);
        self.push(out, Op::Concat(xs.to_vec()), rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(start + len <= c, "slice_channels out of range");
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * plane);
        for s in 0..n {
            let base = (s * c + start) * plane;
            data.extend_from_slice(&src[base..base + len * plane]);
        }
        let out = Tensor::from_vec(&[n, len, h, w], data).expect("slice shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::SliceChannels { x, start }, rg)
    }

    /// Keep the top-left `h × w` window.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Var {
        let out = crop(self.value(x), h, w);
        let rg = self.rg(&[x]);
        self.push(out, Op::Crop(x), rg)
    }

    /// `[n, c·r², h, w] → [n, c, h·r, w·r]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        let (n, cr, h, w) = self.value(x).dims4();
        assert_eq!(cr % (r * r), 0, "pixel_shuffle channel count");
        let c = cr / (r * r);
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[n, c, h * r, w * r]);
        let dst = out.data_mut();
        for s in 0..n {
            for ch in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        let ic = ch * r * r + i * r + j;
                        for y in 0..h {
                            for xx in 0..w {
                                dst[((s * c + ch) * h * r + y * r + i) * w * r + xx * r + j] =
                                    src[((s * cr + ic) * h + y) * w + xx];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::PixelShuffle(x, r), rg)
    }

    /// `w: [b, o, i]`, `x: [b, i, l]` → `[b, o, l]`.
    pub fn batch_matmul(&mut self, w: Var, x: Var) -> Var {
        let (ws, xs) = (self.value(w).shape(), self.value(x).shape());
        assert_eq!(ws.len(), 3);
        assert_eq!(xs.len(), 3);
        let (b, o, i) = (ws[0], ws[1], ws[2]);
        assert_eq!((xs[0], xs[1]), (b, i), "batch_matmul shape mismatch");
        let l = xs[2];
        let mut out = Tensor::zeros(&[b, o, l]);
        for k in 0..b {
            T::gemm(
                o,
                i,
                l,
                &self.value(w).data()[k * o * i..],
                (i as isize, 1),
                &self.value(x).data()[k * i * l..],
                (l as isize, 1),
                T::zero(),
                &mut out.data_mut()[k * o * l..(k + 1) * o * l],
                (l as isize, 1),
            );
        }
        let rg = self.rg(&[w, x]);
        self.push(out, Op::BatchMatMul(w, x), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(out, Op::Conv2d { x, w, b, geom }, rg)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom, output_padding: usize) -> Var {
        let out = conv::conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom, output_padding);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(out, Op::ConvTranspose2d { x, w, b, geom }, rg)
    }

    /// Record a fused operation whose output was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var], output: Tensor<T>) -> Var {
        let rg = self.rg(inputs);
        self.push(output, Op::Custom(op, inputs.to_vec()), rg)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward expects a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.shape(root)));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let keep = matches!(node.op, Op::Leaf | Op::Param);
            let g = if keep { grads[i].clone() } else { grads[i].take() };
            let Some(g) = g else { continue };
            let need = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Unary(x, u) => {
                    if need(*x) {
                        let xv = self.value(*x);
                        let data = xv
                            .data()
                            .iter()
                            .zip(node.value.data())
                            .zip(g.data())
                            .map(|((&xi, &yi), &gi)| u.adjoint(xi, yi, gi))
                            .collect();
                        acc(&mut grads, *x, Tensor::from_vec(xv.shape(), data).unwrap());
                    }
                }
                Op::Binary(a, b, op) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let same = va.shape() == vb.shape();
                    let map = if same { None } else { Some(broadcast_index(va.shape(), vb.shape())) };
                    let bidx = |k: usize| map.as_ref().map_or(k, |m| m[k]);
                    if need(*a) {
                        let data = (0..va.len())
                            .map(|k| {
                                let gk = g.data()[k];
                                match op {
                                    Binary::Add | Binary::Sub => gk,
                                    Binary::Mul => gk * vb.data()[bidx(k)],
                                    Binary::Div => gk / vb.data()[bidx(k)],
                                }
                            })
                            .collect();
                        acc(&mut grads, *a, Tensor::from_vec(va.shape(), data).unwrap());
                    }
                    if need(*b) {
                        let mut gb = Tensor::zeros(vb.shape());
                        for k in 0..va.len() {
                            let gk = g.data()[k];
                            let j = bidx(k);
                            let yb = vb.data()[j];
                            gb.data_mut()[j] += match op {
                                Binary::Add => gk,
                                Binary::Sub => -gk,
                                Binary::Mul => gk * va.data()[k],
                                Binary::Div => -gk * va.data()[k] / (yb * yb),
                            };
                        }
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Sum(x) => {
                    if need(*x) {
                        acc(&mut grads, *x, Tensor::full(self.shape(*x), g.item()));
                    }
                }
                Op::Mean(x) => {
                    if need(*x) {
                        let n = self.value(*x).len();
                        acc(&mut grads, *x, Tensor::full(self.shape(*x), g.item() / T::of(n as f64)));
                    }
                }
                Op::SumChannels(x) => {
                    if need(*x) {
                        let (n, c, h, w) = self.value(*x).dims4();
                        let plane = h * w;
                        let mut gx = Tensor::zeros(&[n, c, h, w]);
                        for s in 0..n {
                            let src = &g.data()[s * plane..(s + 1) * plane];
                            for ch in 0..c {
                                let base = (s * c + ch) * plane;
                                gx.data_mut()[base..base + plane].copy_from_slice(src);
                            }
                        }
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    if need(*x) {
                        let (n, c, h, w) = self.value(*x).dims4();
                        let plane = h * w;
                        let inv = T::of(1.0 / plane as f64);
                        let mut gx = Tensor::zeros(&[n, c, h, w]);
                        for k in 0..n * c {
                            gx.data_mut()[k * plane..(k + 1) * plane].fill(g.data()[k] * inv);
                        }
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::Reshape(x) => {
                    if need(*x) {
                        acc(&mut grads, *x, g.reshape(self.shape(*x)).unwrap());
                    }
                }
                Op::SwapLeading(x) => {
                    if need(*x) {
                        acc(&mut grads, *x, swap_leading(&g));
                    }
                }
                Op::Concat(xs) => {
                    let (n, total_c, h, w) = g.dims4();
                    let plane = h * w;
                    let mut c0 = 0;
                    for &v in xs {
                        let vc = self.value(v).dims4().1;
                        if need(v) {
                            let mut data = Vec::with_capacity(n * vc * plane);
                            for s in 0..n {
                                let base = (s * total_c + c0) * plane;
                                data.extend_from_slice(&g.data()[base..base + vc * plane]);
                            }
                            acc(&mut grads, v, Tensor::from_vec(&[n, vc, h, w], data).unwrap());
                        }
                        c0 += vc;
                    }
                }
                Op::SliceChannels { x, start } => {
                    if need(*x) {
                        let (n, c, h, w) = self.value(*x).dims4();
                        let len = g.dims4().1;
                        let plane = h * w;
                        let mut gx = Tensor::zeros(&[n, c, h, w]);
                        for s in 0..n {
                            let base = (s * c + start) * plane;
                            gx.data_mut()[base..base + len * plane]
                                .copy_from_slice(&g.data()[s * len * plane..(s + 1) * len * plane]);
                        }
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::Crop(x) => {
                    if need(*x) {
                        let (n, c, h, w) = self.value(*x).dims4();
                        let (_, _, ch, cw) = g.dims4();
                        let mut gx = Tensor::zeros(&[n, c, h, w]);
                        for p in 0..n * c {
                            for y in 0..ch {
                                let src = &g.data()[(p * ch + y) * cw..(p * ch + y + 1) * cw];
                                gx.data_mut()[(p * h + y) * w..(p * h + y) * w + cw].copy_from_slice(src);
                            }
                        }
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::PixelShuffle(x, r) => {
                    if need(*x) {
                        let r = *r;
                        let (n, cr, h, w) = self.value(*x).dims4();
                        let c = cr / (r * r);
                        let mut gx = Tensor::zeros(&[n, cr, h, w]);
                        for s in 0..n {
                            for ch in 0..c {
                                for i in 0..r {
                                    for j in 0..r {
                                        let ic = ch * r * r + i * r + j;
                                        for y in 0..h {
                                            for xx in 0..w {
                                                gx.data_mut()[((s * cr + ic) * h + y) * w + xx] =
                                                    g.data()[((s * c + ch) * h * r + y * r + i) * w * r + xx * r + j];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::BatchMatMul(wv, xv) => {
                    let (wt, xt) = (self.value(*wv), self.value(*xv));
                    let (b, o, i_) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
                    let l = xt.shape()[2];
                    if need(*wv) {
                        let mut gw = Tensor::zeros(wt.shape());
                        for k in 0..b {
                            // gw = g · xᵀ
                            T::gemm(
                                o,
                                l,
                                i_,
                                &g.data()[k * o * l..],
                                (l as isize, 1),
                                &xt.data()[k * i_ * l..],
                                (1, l as isize),
                                T::zero(),
                                &mut gw.data_mut()[k * o * i_..(k + 1) * o * i_],
                                (i_ as isize, 1),
                            );
                        }
                        acc(&mut grads, *wv, gw);
                    }
                    if need(*xv) {
                        let mut gx = Tensor::zeros(xt.shape());
                        for k in 0..b {
                            // gx = wᵀ · g
                            T::gemm(
                                i_,
                                o,
                                l,
                                &wt.data()[k * o * i_..],
                                (1, i_ as isize),
                                &g.data()[k * o * l..],
                                (l as isize, 1),
                                T::zero(),
                                &mut gx.data_mut()[k * i_ * l..(k + 1) * i_ * l],
                                (l as isize, 1),
                            );
                        }
                        acc(&mut grads, *xv, gx);
                    }
                }
                Op::Conv2d { x, w, b, geom } => {
                    let nb = b.map_or(false, need);
                    let cg = conv::conv2d_backward(self.value(*x), self.value(*w), &g, *geom, (need(*x), need(*w), nb));
                    if let Some(gx) = cg.x {
                        acc(&mut grads, *x, gx);
                    }
                    if let Some(gw) = cg.weight {
                        acc(&mut grads, *w, gw);
                    }
                    if let (Some(b), Some(gb)) = (b, cg.bias) {
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    let nb = b.map_or(false, need);
                    let cg =
                        conv::conv_transpose2d_backward(self.value(*x), self.value(*w), &g, *geom, (need(*x), need(*w), nb));
                    if let Some(gx) = cg.x {
                        acc(&mut grads, *x, gx);
                    }
                    if let Some(gw) = cg.weight {
                        acc(&mut grads, *w, gw);
                    }
                    if let (Some(b), Some(gb)) = (b, cg.bias) {
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Custom(op, inputs) => {
                    let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                    let gs = op.backward(&vals, &node.value, &g);
                    for (&v, gv) in inputs.iter().zip(gs) {
                        if let (true, Some(gv)) = (need(v), gv) {
                            acc(&mut grads, v, gv);
                        }
                    }
                }
            }
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_by_key(|(id, _)| (id.store_id(), id.index()));
        Gradients { grads, params }
    }
}

fn swap_leading<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (a, b) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let mut shape = s.to_vec();
    shape.swap(0, 1);
    let mut out = Tensor::zeros(&shape);
    for i in 0..a {
        for j in 0..b {
            let src = &t.data()[(i * b + j) * inner..(i * b + j + 1) * inner];
            out.data_mut()[(j * a + i) * inner..(j * a + i + 1) * inner].copy_from_slice(src);
        }
    }
    out
}

/// Top-left `h × w` window of an NCHW tensor.
pub fn crop<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c, th, tw) = t.dims4();
    assert!(h <= th && w <= tw, "crop larger than source");
    let mut data = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        for y in 0..h {
            let base = (p * th + y) * tw;
            data.extend_from_slice(&t.data()[base..base + w]);
        }
    }
    Tensor::from_vec(&[n, c, h, w], data).unwrap()
}

pub mod gradcheck {
    //! Central finite differences against the tape's adjoints.

    use super::*;

    /// Max relative error between analytic and numeric gradients of `f`
    /// w.r.t. each input tensor. Magnitudes below 1e-3 are compared on an
    /// absolute scale so round-off in tiny components does not dominate.
    pub fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        let eval = |ins: &[Tensor<f64>]| {
            let mut tp = Tape::inference();
            let vs: Vec<Var> = ins.iter().map(|t| tp.constant(t.clone())).collect();
            let o = f(&mut tp, &vs);
            tp.value(o).item()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for i in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let denom = a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        worst
    }

    /// Like [`check`], additionally perturbing every parameter in `ps`.
    pub fn check_with_params(
        ps: &ParamStore<f64>,
        inputs: &[Tensor<f64>],
        f: impl Fn(&mut Tape<f64>, &ParamStore<f64>, &[Var]) -> Var,
    ) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, ps, &vars);
        let grads = tape.backward(out);
        let eval = |store: &ParamStore<f64>, ins: &[Tensor<f64>]| {
            let mut tp = Tape::inference();
            let vs: Vec<Var> = ins.iter().map(|t| tp.constant(t.clone())).collect();
            let o = f(&mut tp, store, &vs);
            tp.value(o).item()
        };
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for i in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(ps, &plus) - eval(ps, &minus)) / (2.0 * h);
                worst = worst.max(rel(analytic.data()[i], numeric));
            }
        }
        let pgrads: HashMap<ParamId, Tensor<f64>> = grads.for_store(ps).map(|(id, g)| (id, g.clone())).collect();
        for id in ps.ids() {
            let n = ps.get(id).len();
            for i in 0..n {
                let mut plus = ps.clone();
                plus.get_mut(id).data_mut()[i] += h;
                let mut minus = ps.clone();
                minus.get_mut(id).data_mut()[i] -= h;
                let numeric = (eval(&plus, inputs) - eval(&minus, inputs)) / (2.0 * h);
                let a = pgrads.get(&id).map_or(0.0, |g| g.data()[i]);
                worst = worst.max(rel(a, numeric));
            }
        }
        worst
    }
}
