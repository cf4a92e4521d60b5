//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] is a single reverse sweep. Gradients reaching a node
//! through several consumers are summed.

mod conv;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use conv::ConvSpec;
use conv::ConvGeometry;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an operand element is located from a flat output index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Full,
    Scalar,
    /// `[N, C]` operand against an `[N, C, H, W]` output; `plane = H * W`.
    Channel { plane: usize },
}

impl Bcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Full => i,
            Bcast::Scalar => 0,
            Bcast::Channel { plane } => i / plane,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    GlobalAvgPool(Var),
    UpsampleNearest2x(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    LogSigmoid(Var),
    Log(Var),
    Binary {
        kind: BinaryKind,
        lhs: Var,
        rhs: Var,
        lmap: Bcast,
        rmap: Bcast,
    },
    Scale(Var, T),
    Mean(Var),
    AbsMean(Var),
    SquareMean(Var),
    DiffX(Var),
    DiffY(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
#[inline]
pub(crate) fn log_sigmoid<T: Real>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn spatial(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        0 | 1 => Err(Error::shape(
            op,
            format!("needs at least two trailing spatial dims, got shape {shape:?}"),
        )),
        r => {
            let (h, w) = (shape[r - 2], shape[r - 1]);
            Ok((numel(&shape[..r - 2]), h, w))
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value as a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
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

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        spec.validate()?;
        let [n, c, h, w] = self.value(input).dims4("conv2d")?;
        if c != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input channel dim is {c}, spec expects in_channels = {}", spec.in_channels),
            ));
        }
        let ws = self.shape(weight);
        if ws != spec.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                format!("weight shape is {ws:?}, spec expects {:?}", spec.weight_shape()),
            ));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [spec.out_channels] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape is {bs:?}, expected [{}]", spec.out_channels),
                ));
            }
        }
        let (ho, wo) = match (spec.output_len(h), spec.output_len(w)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("spatial dims {h}x{w} are smaller than the dilated kernel"),
                ))
            }
        };
        let geom = ConvGeometry { n, h, w, ho, wo, spec };
        let mut out = vec![T::zero(); n * spec.out_channels * ho * wo];
        conv::forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::new([n, spec.out_channels, ho, wo], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            &inputs,
        ))
    }

    /// `[N, in] x [out, in]^T + [out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, din) = match self.shape(input) {
            &[n, d] => (n, d),
            s => {
                return Err(Error::shape(
                    "linear",
                    format!("input must be [N, in], got {s:?}"),
                ))
            }
        };
        let dout = match self.shape(weight) {
            &[o, i] if i == din => o,
            s => {
                return Err(Error::shape(
                    "linear",
                    format!("weight shape {s:?} does not match input width {din} (expected [out, {din}])"),
                ))
            }
        };
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [dout] {
                return Err(Error::shape("linear", format!("bias shape is {bs:?}, expected [{dout}]")));
            }
        }
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let bv = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * dout];
        for r in 0..n {
            let xr = &x[r * din..][..din];
            for o in 0..dout {
                let wr = &wt[o * din..][..din];
                let mut acc = bv.map_or(T::zero(), |b| b[o]);
                for (&a, &b) in xr.iter().zip(wr) {
                    acc += a * b;
                }
                out[r * dout + o] = acc;
            }
        }
        let value = Tensor::new([n, dout], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias }, &inputs))
    }

    /// `[N, C, H, W] -> [N, C]`, mean of each feature map.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("global_avg_pool")?;
        if h == 0 || w == 0 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("empty spatial dims {h}x{w}"),
            ));
        }
        let plane = h * w;
        let inv = T::one() / T::of(plane as f64);
        let x = self.value(input).data();
        let out = (0..n * c)
            .map(|i| x[i * plane..][..plane].iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new([n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(input), &[input]))
    }

    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("upsample_nearest2x")?;
        let x = self.value(input).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let src = &x[p * h * w..][..h * w];
            let dst = &mut out[p * h2 * w2..][..h2 * w2];
            for y in 0..h2 {
                let srow = &src[(y / 2) * w..][..w];
                for (xx, d) in dst[y * w2..][..w2].iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
        let value = Tensor::new([n, c, h2, w2], out)?;
        Ok(self.push(value, Op::UpsampleNearest2x(input), &[input]))
    }

    fn unary(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(input).map(f);
        self.push(value, op, &[input])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(x, Op::LeakyRelu(x, s), move |v| if v > T::zero() { v } else { s * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// Numerically stable `ln(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::LogSigmoid(x), log_sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let c = T::of(factor);
        self.unary(x, Op::Scale(x, c), move |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, Bcast, Bcast)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (numel(sa), numel(sb));
        if sa == sb {
            return Ok((sa.to_vec(), Bcast::Full, Bcast::Full));
        }
        if nb == 1 {
            return Ok((sa.to_vec(), Bcast::Full, Bcast::Scalar));
        }
        if na == 1 {
            return Ok((sb.to_vec(), Bcast::Scalar, Bcast::Full));
        }
        if sa.len() == 4 && sb == &sa[..2] {
            return Ok((sa.to_vec(), Bcast::Full, Bcast::Channel { plane: sa[2] * sa[3] }));
        }
        if sb.len() == 4 && sa == &sb[..2] {
            return Ok((sb.to_vec(), Bcast::Channel { plane: sb[2] * sb[3] }, Bcast::Full));
        }
        Err(Error::shape(
            op,
            format!("cannot broadcast {sa:?} with {sb:?} (equal, scalar, or [N, C] vs [N, C, H, W])"),
        ))
    }

    fn binary(&mut self, kind: BinaryKind, op: &'static str, lhs: Var, rhs: Var) -> Result<Var> {
        let (shape, lmap, rmap) = self.broadcast(op, lhs, rhs)?;
        let (a, b) = (self.value(lhs).data(), self.value(rhs).data());
        let out = (0..numel(&shape))
            .map(|i| {
                let (x, y) = (a[lmap.index(i)], b[rmap.index(i)]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Binary {
                kind,
                lhs,
                rhs,
                lmap,
                rmap,
            },
            &[lhs, rhs],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    fn reduce(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::shape("mean", "cannot reduce an empty tensor"));
        }
        let sum: T = self.value(x).data().iter().map(|&v| f(v)).sum();
        let value = Tensor::scalar(sum / T::of(n as f64));
        Ok(self.push(value, op, &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Op::Mean(x), |v| v)
    }

    pub fn abs_mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Op::AbsMean(x), |v| v.abs())
    }

    pub fn square_mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Op::SquareMean(x), |v| v * v)
    }

    /// Horizontal forward difference `x[.., j + 1] - x[.., j]` over the last axis.
    pub fn diff_x(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (planes, h, w) = spatial("diff_x", &shape)?;
        if w < 2 {
            return Err(Error::shape("diff_x", format!("width {w} < 2")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * h * (w - 1));
        for row in src.chunks_exact(w) {
            out.extend(row.windows(2).map(|p| p[1] - p[0]));
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = w - 1;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(value, Op::DiffX(x), &[x]))
    }

    /// Vertical forward difference over the second-to-last axis.
    pub fn diff_y(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (planes, h, w) = spatial("diff_y", &shape)?;
        if h < 2 {
            return Err(Error::shape("diff_y", format!("height {h} < 2")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * (h - 1) * w);
        for plane in src.chunks_exact(h * w) {
            for y in 0..h - 1 {
                let (r0, r1) = (&plane[y * w..][..w], &plane[(y + 1) * w..][..w]);
                out.extend(r1.iter().zip(r0).map(|(&b, &a)| b - a));
            }
        }
        let r = shape.len();
        let mut oshape = shape;
        oshape[r - 2] = h - 1;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(value, Op::DiffY(x), &[x]))
    }

    /// Populate gradients of `loss` for every reachable node that requires
    /// one. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(Error::NonScalarLoss { numel: n });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            self.propagate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            if !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(e, v)| *e += v),
                slot @ None => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        fn slot<'a, T: Real>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> &'a mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()])
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let [n, _, h, w] = nodes[input.0].value.dims4("conv2d").expect("checked in forward");
                let [_, _, ho, wo] = out.dims4("conv2d").expect("checked in forward");
                let geom = ConvGeometry {
                    n,
                    h,
                    w,
                    ho,
                    wo,
                    spec: *spec,
                };
                // Each buffer is moved out of `grads` so the three can be borrowed together.
                let mut gi = wants(*input).then(|| slot(nodes, grads, *input).split_off(0));
                let mut gw = wants(*weight).then(|| slot(nodes, grads, *weight).split_off(0));
                let mut gb = bias
                    .filter(|b| wants(*b))
                    .map(|b| slot(nodes, grads, b).split_off(0));
                conv::backward(
                    &geom,
                    nodes[input.0].value.data(),
                    nodes[weight.0].value.data(),
                    gout,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(g) = gi {
                    grads[input.0] = Some(g);
                }
                if let Some(g) = gw {
                    grads[weight.0] = Some(g);
                }
                if let (Some(b), Some(g)) = (bias, gb) {
                    grads[b.0] = Some(g);
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = nodes[input.0].value.data();
                let wt = nodes[weight.0].value.data();
                let (n, din) = (nodes[input.0].value.shape()[0], nodes[input.0].value.shape()[1]);
                let dout = nodes[weight.0].value.shape()[0];
                if wants(*input) {
                    let gi = slot(nodes, grads, *input);
                    for r in 0..n {
                        for o in 0..dout {
                            let d = gout[r * dout + o];
                            for (g, &wv) in gi[r * din..][..din].iter_mut().zip(&wt[o * din..][..din]) {
                                *g += d * wv;
                            }
                        }
                    }
                }
                if wants(*weight) {
                    let gw = slot(nodes, grads, *weight);
                    for r in 0..n {
                        for o in 0..dout {
                            let d = gout[r * dout + o];
                            for (g, &xv) in gw[o * din..][..din].iter_mut().zip(&x[r * din..][..din]) {
                                *g += d * xv;
                            }
                        }
                    }
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    let gb = slot(nodes, grads, b);
                    for r in 0..n {
                        for o in 0..dout {
                            gb[o] += gout[r * dout + o];
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                if wants(*x) {
                    let [_, _, h, w] = nodes[x.0].value.dims4("global_avg_pool").expect("checked");
                    let plane = h * w;
                    let inv = T::one() / T::of(plane as f64);
                    let gx = slot(nodes, grads, *x);
                    for (p, &d) in gout.iter().enumerate() {
                        gx[p * plane..][..plane].iter_mut().for_each(|g| *g += d * inv);
                    }
                }
            }
            Op::UpsampleNearest2x(x) => {
                if wants(*x) {
                    let [n, c, h, w] = nodes[x.0].value.dims4("upsample").expect("checked");
                    let (h2, w2) = (2 * h, 2 * w);
                    let gx = slot(nodes, grads, *x);
                    for p in 0..n * c {
                        let src = &gout[p * h2 * w2..][..h2 * w2];
                        let dst = &mut gx[p * h * w..][..h * w];
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
                            }
                        }
                    }
                }
            }
            Op::Relu(x) | Op::LeakyRelu(x, _) | Op::Log(x) | Op::LogSigmoid(x) | Op::Scale(x, _) => {
                if wants(*x) {
                    let xv = nodes[x.0].value.data();
                    let gx = slot(nodes, grads, *x);
                    let dfdx = |v: T| -> T {
                        match &nodes[i].op {
                            Op::Relu(_) => {
                                if v > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Op::LeakyRelu(_, s) => {
                                if v > T::zero() {
                                    T::one()
                                } else {
                                    *s
                                }
                            }
                            Op::Log(_) => T::one() / v,
                            Op::LogSigmoid(_) => sigmoid(-v),
                            Op::Scale(_, c) => *c,
                            _ => unreachable!(),
                        }
                    };
                    for ((g, &d), &v) in gx.iter_mut().zip(gout).zip(xv) {
                        *g += d * dfdx(v);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let y = out.data();
                    let gx = slot(nodes, grads, *x);
                    for ((g, &d), &s) in gx.iter_mut().zip(gout).zip(y) {
                        *g += d * s * (T::one() - s);
                    }
                }
            }
            Op::Binary {
                kind,
                lhs,
                rhs,
                lmap,
                rmap,
            } => {
                let a = nodes[lhs.0].value.data();
                let b = nodes[rhs.0].value.data();
                if wants(*lhs) {
                    let gl = slot(nodes, grads, *lhs);
                    for (k, &d) in gout.iter().enumerate() {
                        gl[lmap.index(k)] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => d,
                            BinaryKind::Mul => d * b[rmap.index(k)],
                        };
                    }
                }
                if wants(*rhs) {
                    let gr = slot(nodes, grads, *rhs);
                    for (k, &d) in gout.iter().enumerate() {
                        gr[rmap.index(k)] += match kind {
                            BinaryKind::Add => d,
                            BinaryKind::Sub => -d,
                            BinaryKind::Mul => d * a[lmap.index(k)],
                        };
                    }
                }
            }
            Op::Mean(x) | Op::AbsMean(x) | Op::SquareMean(x) => {
                if wants(*x) {
                    let xv = nodes[x.0].value.data();
                    let scale = gout[0] / T::of(xv.len() as f64);
                    let two = T::of(2.0);
                    let gx = slot(nodes, grads, *x);
                    for (g, &v) in gx.iter_mut().zip(xv) {
                        *g += scale
                            * match &nodes[i].op {
                                Op::Mean(_) => T::one(),
                                Op::AbsMean(_) => sign(v),
                                _ => two * v,
                            };
                    }
                }
            }
            Op::DiffX(x) => {
                if wants(*x) {
                    let w = *nodes[x.0].value.shape().last().unwrap();
                    let gx = slot(nodes, grads, *x);
                    for (row_g, row_d) in gx.chunks_exact_mut(w).zip(gout.chunks_exact(w - 1)) {
                        for (j, &d) in row_d.iter().enumerate() {
                            row_g[j + 1] += d;
                            row_g[j] -= d;
                        }
                    }
                }
            }
            Op::DiffY(x) => {
                if wants(*x) {
                    let shape = nodes[x.0].value.shape();
                    let (_, h, w) = spatial("diff_y", shape).expect("checked");
                    let gx = slot(nodes, grads, *x);
                    for (pg, pd) in gx.chunks_exact_mut(h * w).zip(gout.chunks_exact((h - 1) * w)) {
                        for y in 0..h - 1 {
                            for j in 0..w {
                                let d = pd[y * w + j];
                                pg[(y + 1) * w + j] += d;
                                pg[y * w + j] -= d;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([1, 1, 5, 5], |i| i as f32 * 0.1));
        let mut k = [0.0f32; 9];
        k[4] = 1.0;
        let w = g.constant(t(&[1, 1, 3, 3], &k));
        let y = g.conv2d(x, w, None, ConvSpec::same(1, 1, 3, 1)).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv_rejects_channel_mismatch_by_name() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 2, 5, 5]));
        let w = g.constant(Tensor::zeros([1, 3, 3, 3]));
        let err = g.conv2d(x, w, None, ConvSpec::same(3, 1, 3, 1)).unwrap_err();
        assert!(alloc::format!("{err}").contains("input channel dim is 2"), "{err}");
        let w2 = g.constant(Tensor::zeros([1, 2, 5, 5]));
        let err = g.conv2d(x, w2, None, ConvSpec::same(2, 1, 3, 1)).unwrap_err();
        assert!(alloc::format!("{err}").contains("weight shape"), "{err}");
    }

    #[test]
    fn global_avg_pool_values_and_grad() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 0.3, 0.3, 0.3, 0.3]));
        let z = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(z).data(), &[2.5, 0.3]);
        let l = g.mean(z).unwrap();
        g.backward(l).unwrap();
        // d mean(z) / dx = 1/2 * 1/(H*W)
        assert!(g.grad(x).unwrap().data().iter().all(|&v| (v - 0.125).abs() < 1e-7));
    }

    #[test]
    fn global_avg_pool_rejects_empty_plane() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 1, 0, 3]));
        assert!(g.global_avg_pool(x).is_err());
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0.0, -1.5]));
        let s = g.sigmoid(x);
        let r = g.relu(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert_eq!(g.value(r).data()[1], 0.0);
    }

    #[test]
    fn per_channel_scale_halves() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 3, 2, 2], |i| i as f32));
        let s = g.constant(Tensor::full([2, 3], 0.5));
        let y = g.mul(x, s).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert_eq!(*a, 0.5 * b);
        }
        let bad = g.constant(Tensor::full([3, 2], 0.5));
        assert!(g.mul(x, bad).is_err());
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[0.25, 0.25]));
        let w = g.constant(t(&[1, 2], &[1.0, 1.0]));
        let b = g.constant(t(&[1], &[0.5]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0]);

        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zero_b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, eye, Some(zero_b)).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let zw = g.constant(Tensor::zeros([3, 2]));
        let zb = g.constant(Tensor::zeros([3]));
        let y = g.linear(x, zw, Some(zb)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let bad = g.constant(Tensor::zeros([3, 4]));
        assert!(g.linear(x, bad, None).is_err());
    }

    #[test]
    fn mean_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, -1.0]));
        let l = g.square_mean(x).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let p = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let d = g.detach(p);
        let a = g.mul(p, c).unwrap();
        let b = g.mul(a, d).unwrap();
        let l = g.mean(b).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert!(g.grad(d).is_none());
        // d/dp mean(p * c * detach(p)) treats the detached copy as constant.
        assert_eq!(g.grad(p).unwrap().data(), &[1.5, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let p = g.param(t(&[2], &[1.0, 2.0]));
        assert_eq!(g.backward(p), Err(Error::NonScalarLoss { numel: 2 }));
    }

    #[test]
    fn diff_ops_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 3, 4, 5]));
        let dx = g.diff_x(x).unwrap();
        let dy = g.diff_y(x).unwrap();
        assert_eq!(g.shape(dx), &[1, 3, 4, 4]);
        assert_eq!(g.shape(dy), &[1, 3, 3, 5]);
        let thin = g.constant(Tensor::zeros([1, 1, 4, 1]));
        assert!(g.diff_x(thin).is_err());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        let hi = log_sigmoid(100.0f32);
        assert!(hi <= 0.0 && hi > -1e-40);
        assert!((log_sigmoid(-100.0f32) + 100.0).abs() < 1e-4);
        assert!((log_sigmoid(0.0f64) + core::f64::consts::LN_2).abs() < 1e-15);
    }
}
