//! Differentiable operations. Each forward method records an [`Op`] whose
//! `backward` arm holds the matching local-gradient rule.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;

use super::broadcast::{aligned_strides, broadcast_shape, for_each_pair, reduce_to_shape};
use super::gemm::gemm;
use super::graph::{accumulate, Graph, Node, Var};
use super::kernels::{col2im, im2col, patchify_gather, patchify_scatter, Window};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Pointwise operations selectable through [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Gelu,
    Sigmoid,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Gradient flows to the first maximal element in row-major order.
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Relu,
    Gelu,
    Sigmoid,
    Exp,
    Log,
}

/// Per-channel statistics of a batch-normalization pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide-by-count) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Unary(Var, Unary),
    MatMul(Var, Var),
    Reduce {
        input: Var,
        kind: Reduction,
        axes: Vec<usize>,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax(Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        win: Window,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool2d {
        x: Var,
        win: Window,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout(Var, Vec<f64>),
    Bce(Var, Tensor),
    BceLogits(Var, Tensor),
    Patchify(Var, usize),
}

impl Op {
    pub fn inputs(&self) -> impl Iterator<Item = Var> + '_ {
        let (fixed, extra): ([Option<Var>; 3], Option<Var>) = match self {
            Op::Leaf => ([None, None, None], None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                ([Some(*a), Some(*b), None], None)
            }
            Op::Scale(a, _)
            | Op::Unary(a, _)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Softmax(a)
            | Op::Dropout(a, _)
            | Op::Bce(a, _)
            | Op::BceLogits(a, _)
            | Op::Patchify(a, _) => ([Some(*a), None, None], None),
            Op::Reduce { input, .. } => ([Some(*input), None, None], None),
            Op::Conv2d { x, weight, bias, .. } => ([Some(*x), Some(*weight), None], *bias),
            Op::MaxPool2d { x, .. } | Op::AvgPool2d { x, .. } => ([Some(*x), None, None], None),
            Op::LayerNorm { x, gain, shift, .. } | Op::BatchNorm { x, gain, shift, .. } => {
                ([Some(*x), Some(*gain), Some(*shift)], None)
            }
        };
        fixed.into_iter().chain(std::iter::once(extra)).flatten()
    }

    /// Applies this node's local-gradient rule to upstream gradient `g`,
    /// accumulating into the pending gradients of its inputs.
    pub fn backward(&self, nodes: &[Node], out: &Tensor, g: &Tensor, pending: &mut [Option<Tensor>]) {
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(nodes, pending, *a, reduce_to_shape(g, val(*a).shape()));
                }
                if wants(*b) {
                    accumulate(nodes, pending, *b, reduce_to_shape(g, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(nodes, pending, *a, reduce_to_shape(g, val(*a).shape()));
                }
                if wants(*b) {
                    let neg = g.map(|v| -v);
                    accumulate(nodes, pending, *b, reduce_to_shape(&neg, val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if wants(target) {
                        let prod = binary_values(g, val(other), |x, y| x * y)
                            .expect("shapes validated in forward");
                        accumulate(nodes, pending, target, reduce_to_shape(&prod, val(target).shape()));
                    }
                }
            }
            Op::Scale(a, c) => accumulate(nodes, pending, *a, g.map(|v| v * c)),
            Op::Unary(a, kind) => {
                let x = val(*a).data();
                let y = out.data();
                let gd = g.data();
                let data: Vec<f64> = match kind {
                    Unary::Relu => (0..x.len()).map(|i| if x[i] > 0.0 { gd[i] } else { 0.0 }).collect(),
                    Unary::Gelu => (0..x.len()).map(|i| gd[i] * gelu_grad(x[i])).collect(),
                    Unary::Sigmoid => (0..x.len()).map(|i| gd[i] * y[i] * (1.0 - y[i])).collect(),
                    Unary::Exp => (0..x.len()).map(|i| gd[i] * y[i]).collect(),
                    Unary::Log => (0..x.len()).map(|i| gd[i] / x[i]).collect(),
                };
                accumulate(nodes, pending, *a, Tensor::from_parts(x_shape(val(*a)), data));
            }
            Op::MatMul(a, b) => matmul_backward(nodes, pending, *a, *b, g),
            Op::Reduce {
                input,
                kind,
                axes,
                argmax,
            } => {
                let shape = val(*input).shape();
                let mut dx = vec![0.0; numel(shape)];
                let gd = g.data();
                match kind {
                    Reduction::Max => {
                        for (o, &i) in argmax.iter().enumerate() {
                            dx[i] += gd[o];
                        }
                    }
                    Reduction::Sum | Reduction::Mean => {
                        let scale = if *kind == Reduction::Mean {
                            1.0 / axes.iter().map(|&a| shape[a]).product::<usize>() as f64
                        } else {
                            1.0
                        };
                        let to_out = reduced_strides(shape, axes);
                        let zeros = vec![0; shape.len()];
                        for_each_pair(shape, &to_out, &zeros, |i, o, _| dx[i] = gd[o] * scale);
                    }
                }
                accumulate(nodes, pending, *input, Tensor::from_parts(shape.to_vec(), dx));
            }
            Op::Reshape(a) => {
                let t = Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec());
                accumulate(nodes, pending, *a, t);
            }
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                accumulate(nodes, pending, *a, permute_values(g, &inverse));
            }
            Op::Softmax(a) => {
                let d = *out.shape().last().unwrap_or(&1);
                let y = out.data();
                let gd = g.data();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / d {
                    let row = r * d..(r + 1) * d;
                    let dot: f64 = y[row.clone()].iter().zip(&gd[row.clone()]).map(|(a, b)| a * b).sum();
                    for i in row {
                        dx[i] = y[i] * (gd[i] - dot);
                    }
                }
                accumulate(nodes, pending, *a, Tensor::from_parts(x_shape(val(*a)), dx));
            }
            Op::Conv2d { x, weight, bias, win } => {
                conv2d_backward(nodes, pending, (*x, *weight, *bias), *win, g)
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![0.0; val(*x).len()];
                for (o, &i) in argmax.iter().enumerate() {
                    dx[i] += g.data()[o];
                }
                accumulate(nodes, pending, *x, Tensor::from_parts(x_shape(val(*x)), dx));
            }
            Op::AvgPool2d { x, win } => {
                let dx = avgpool_backward(val(*x).shape(), *win, g);
                accumulate(nodes, pending, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let d = *val(*x).shape().last().expect("rank checked in forward");
                let gamma = val(*gain).data();
                let gd = g.data();
                let rows = gd.len() / d;
                if wants(*x) {
                    let mut dx = vec![0.0; gd.len()];
                    for r in 0..rows {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            let dxh = gd[r * d + j] * gamma[j];
                            s1 += dxh;
                            s2 += dxh * xhat[r * d + j];
                        }
                        let k = inv_std[r] / d as f64;
                        for j in 0..d {
                            let i = r * d + j;
                            dx[i] = k * (d as f64 * gd[i] * gamma[j] - s1 - xhat[i] * s2);
                        }
                    }
                    accumulate(nodes, pending, *x, Tensor::from_parts(x_shape(val(*x)), dx));
                }
                let (mut dgain, mut dshift) = (vec![0.0; d], vec![0.0; d]);
                for i in 0..gd.len() {
                    dgain[i % d] += gd[i] * xhat[i];
                    dshift[i % d] += gd[i];
                }
                accumulate(nodes, pending, *gain, Tensor::from_parts(vec![d], dgain));
                accumulate(nodes, pending, *shift, Tensor::from_parts(vec![d], dshift));
            }
            Op::BatchNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = val(*x).shape();
                let (n, c) = (shape[0], shape[1]);
                let spatial = numel(&shape[2..]);
                let count = (n * spatial) as f64;
                let gamma = val(*gain).data();
                let gd = g.data();
                let channel = |i: usize| (i / spatial) % c;
                let (mut dgain, mut dshift) = (vec![0.0; c], vec![0.0; c]);
                for i in 0..gd.len() {
                    dgain[channel(i)] += gd[i] * xhat[i];
                    dshift[channel(i)] += gd[i];
                }
                if wants(*x) {
                    let mut dx = vec![0.0; gd.len()];
                    for i in 0..gd.len() {
                        let ch = channel(i);
                        dx[i] = if *batch_stats {
                            gamma[ch] * inv_std[ch] / count
                                * (count * gd[i] - dshift[ch] - xhat[i] * dgain[ch])
                        } else {
                            gd[i] * gamma[ch] * inv_std[ch]
                        };
                    }
                    accumulate(nodes, pending, *x, Tensor::from_parts(shape.to_vec(), dx));
                }
                accumulate(nodes, pending, *gain, Tensor::from_parts(vec![c], dgain));
                accumulate(nodes, pending, *shift, Tensor::from_parts(vec![c], dshift));
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(nodes, pending, *a, Tensor::from_parts(x_shape(val(*a)), data));
            }
            Op::Bce(p, targets) => {
                let upstream = g.data()[0];
                let m = targets.len() as f64;
                let data = val(*p)
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&p, &y)| {
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            -upstream * (y / p - (1.0 - y) / (1.0 - p)) / m
                        }
                    })
                    .collect();
                accumulate(nodes, pending, *p, Tensor::from_parts(x_shape(val(*p)), data));
            }
            Op::BceLogits(z, targets) => {
                let upstream = g.data()[0];
                let m = targets.len() as f64;
                let data = val(*z)
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&z, &y)| upstream * (sigmoid(z) - y) / m)
                    .collect();
                accumulate(nodes, pending, *z, Tensor::from_parts(x_shape(val(*z)), data));
            }
            Op::Patchify(x, p) => {
                let s = val(*x).shape();
                let dx = patchify_scatter(g, (s[0], s[1], s[2], s[3]), *p);
                accumulate(nodes, pending, *x, dx);
            }
        }
    }
}

fn x_shape(t: &Tensor) -> Vec<usize> {
    t.shape().to_vec()
}

/// Clamp applied to probabilities before taking logarithms in [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-12;

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

fn binary_values(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(a.shape(), b.shape())?;
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let mut data = vec![0.0; numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(&out, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    Ok(Tensor::from_parts(out, data))
}

/// Strides mapping an input index to its reduced output index (zero on
/// reduced axes).
fn reduced_strides(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let kept: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
    let out_shape: Vec<usize> = kept.iter().map(|&a| shape[a]).collect();
    let out_strides = super::strides_of(&out_shape);
    let mut strides = vec![0; shape.len()];
    for (k, &a) in kept.iter().enumerate() {
        strides[a] = out_strides[k];
    }
    strides
}

fn permute_values(t: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = t.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = t.strides();
    // Stride in the input for each output axis.
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zeros = vec![0; perm.len()];
    let mut data = vec![0.0; t.len()];
    let src = t.data();
    for_each_pair(&out_shape, &gather, &zeros, |o, i, _| data[o] = src[i]);
    Tensor::from_parts(out_shape, data)
}

/// Splits a matmul into (batch, m, k, n, rhs_is_shared).
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    let mismatch = || Error::Shape {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    if b.len() == 2 {
        return Ok((numel(&a[..a.len() - 2]), m, k, n, true));
    }
    if a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(mismatch());
    }
    Ok((numel(&a[..a.len() - 2]), m, k, n, false))
}

fn matmul_backward(nodes: &[Node], pending: &mut [Option<Tensor>], a: Var, b: Var, g: &Tensor) {
    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
    let (batch, m, k, n, shared) = matmul_dims(av.shape(), bv.shape()).expect("validated in forward");
    let gd = g.data();
    if nodes[a.0].requires_grad {
        let mut da = vec![0.0; av.len()];
        if shared {
            gemm(batch * m, n, k, gd, false, bv.data(), true, &mut da, false);
        } else {
            for t in 0..batch {
                gemm(
                    m,
                    n,
                    k,
                    &gd[t * m * n..],
                    false,
                    &bv.data()[t * k * n..],
                    true,
                    &mut da[t * m * k..(t + 1) * m * k],
                    false,
                );
            }
        }
        accumulate(nodes, pending, a, Tensor::from_parts(av.shape().to_vec(), da));
    }
    if nodes[b.0].requires_grad {
        let mut db = vec![0.0; bv.len()];
        if shared {
            gemm(k, batch * m, n, av.data(), true, gd, false, &mut db, false);
        } else {
            for t in 0..batch {
                gemm(
                    k,
                    m,
                    n,
                    &av.data()[t * m * k..],
                    true,
                    &gd[t * m * n..],
                    false,
                    &mut db[t * k * n..(t + 1) * k * n],
                    false,
                );
            }
        }
        accumulate(nodes, pending, b, Tensor::from_parts(bv.shape().to_vec(), db));
    }
}

fn conv2d_backward(
    nodes: &[Node],
    pending: &mut [Option<Tensor>],
    (x, weight, bias): (Var, Var, Option<Var>),
    win: Window,
    g: &Tensor,
) {
    let xv = &nodes[x.0].value;
    let wv = &nodes[weight.0].value;
    let (n, c, h, w) = {
        let s = xv.shape();
        (s[0], s[1], s[2], s[3])
    };
    let o = wv.shape()[0];
    let (ho, wo) = win.output(h, w).expect("validated in forward");
    let plane = ho * wo;
    let ck = c * win.kh * win.kw;
    let gd = g.data();
    let want_x = nodes[x.0].requires_grad;
    let want_w = nodes[weight.0].requires_grad;
    let mut cols = vec![0.0; ck * plane];
    let mut dcols = vec![0.0; ck * plane];
    let mut dx = if want_x { vec![0.0; xv.len()] } else { Vec::new() };
    let mut dw = if want_w { vec![0.0; wv.len()] } else { Vec::new() };
    for b in 0..n {
        let gb = &gd[b * o * plane..(b + 1) * o * plane];
        if want_w {
            im2col(&xv.data()[b * c * h * w..], c, h, w, win, &mut cols);
            gemm(o, plane, ck, gb, false, &cols, true, &mut dw, true);
        }
        if want_x {
            gemm(ck, o, plane, wv.data(), true, gb, false, &mut dcols, false);
            col2im(&dcols, c, h, w, win, &mut dx[b * c * h * w..(b + 1) * c * h * w]);
        }
    }
    if want_x {
        accumulate(nodes, pending, x, Tensor::from_parts(xv.shape().to_vec(), dx));
    }
    if want_w {
        accumulate(nodes, pending, weight, Tensor::from_parts(wv.shape().to_vec(), dw));
    }
    if let Some(bias) = bias {
        let mut db = vec![0.0; o];
        for (i, v) in gd.iter().enumerate() {
            db[(i / plane) % o] += v;
        }
        accumulate(nodes, pending, bias, Tensor::from_parts(vec![o], db));
    }
}

fn avgpool_backward(shape: &[usize], win: Window, g: &Tensor) -> Tensor {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = win.output(h, w).expect("validated in forward");
    let scale = 1.0 / (win.kh * win.kw) as f64;
    let mut dx = vec![0.0; n * c * h * w];
    let gd = g.data();
    for plane in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let v = gd[(plane * ho + oy) * wo + ox] * scale;
                for ki in 0..win.kh {
                    let row = (plane * h + oy * win.stride + ki) * w + ox * win.stride;
                    for d in &mut dx[row..row + win.kw] {
                        *d += v;
                    }
                }
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), dx)
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Graph {
    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{op:?} takes {arity} operand(s), got {}",
                args.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Relu => Ok(self.relu(args[0])),
            Elementwise::Gelu => Ok(self.gelu(args[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(args[0])),
            Elementwise::Exp => self.exp(args[0]),
            Elementwise::Log => self.log(args[0]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_values(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_values(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_values(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |v| v.max(0.0),
            Unary::Gelu => gelu,
            Unary::Sigmoid => sigmoid,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
        };
        let out = self.value(a).map(f);
        self.push(out, Op::Unary(a, kind))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.unary(a, Unary::Exp);
        check_finite(self.value(v), "exp")?;
        Ok(v)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.unary(a, Unary::Log);
        check_finite(self.value(v), "log")?;
        Ok(v)
    }

    /// Matrix product over the last two axes. `b` is either `[k,n]`, shared
    /// across every leading batch index of `a`, or carries the same batch
    /// extents as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (batch, m, k, n, shared) = matmul_dims(av.shape(), bv.shape())?;
        let mut out = vec![0.0; batch * m * n];
        if shared {
            gemm(batch * m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        } else {
            for t in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av.data()[t * m * k..],
                    false,
                    &bv.data()[t * k * n..],
                    false,
                    &mut out[t * m * n..(t + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = av.shape()[..av.rank() - 2].to_vec();
        shape.extend([m, n]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b)))
    }

    /// Reduces over `axes`, removing them from the shape.
    pub fn reduce(&mut self, kind: Reduction, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axes.is_empty() {
            return Err(Error::InvalidArgument("reduction needs at least one axis".into()));
        }
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return Err(Error::InvalidArgument(format!(
                "axis {bad} out of range for shape {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = (0..shape.len())
            .filter(|ax| !axes.contains(ax))
            .map(|ax| shape[ax])
            .collect();
        let to_out = reduced_strides(&shape, &axes);
        let zeros = vec![0; shape.len()];
        let src = self.value(a).data();
        let mut argmax = Vec::new();
        let data = match kind {
            Reduction::Sum | Reduction::Mean => {
                let mut acc = vec![0.0; numel(&out_shape)];
                for_each_pair(&shape, &to_out, &zeros, |i, o, _| acc[o] += src[i]);
                if kind == Reduction::Mean {
                    let count = axes.iter().map(|&ax| shape[ax]).product::<usize>() as f64;
                    acc.iter_mut().for_each(|v| *v /= count);
                }
                acc
            }
            Reduction::Max => {
                let mut best = vec![f64::NEG_INFINITY; numel(&out_shape)];
                argmax = vec![usize::MAX; best.len()];
                for_each_pair(&shape, &to_out, &zeros, |i, o, _| {
                    if src[i] > best[o] || argmax[o] == usize::MAX {
                        best[o] = src[i];
                        argmax[o] = i;
                    }
                });
                best
            }
        };
        let op = Op::Reduce {
            input: a,
            kind,
            axes,
            argmax,
        };
        Ok(self.push(Tensor::from_parts(out_shape, data), op))
    }

    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(Reduction::Sum, a, axes)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(Reduction::Mean, a, axes)
    }

    pub fn max(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(Reduction::Max, a, axes)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let rank = self.value(a).rank();
        if rank == 0 {
            return a;
        }
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce(Reduction::Sum, a, &axes).expect("all axes are valid")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.value(a).rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of {rank} axes"
            )));
        }
        let t = permute_values(self.value(a), perm);
        Ok(self.push(t, Op::Permute(a, perm.to_vec())))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::InvalidArgument("softmax of a scalar".into()))?;
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let t = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.push(t, Op::Softmax(a)))
    }

    /// Cross-correlation of `x: [N,C,H,W]` with `weight: [O,C,kh,kw]`,
    /// symmetric zero padding `pad` on both spatial axes.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let mismatch = || Error::Shape {
            op: "conv2d",
            lhs: xs.clone(),
            rhs: ws.clone(),
        };
        let (&[n, c, h, w], &[o, ci, kh, kw]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(mismatch());
        };
        if c != ci {
            return Err(mismatch());
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return Err(Error::Shape {
                    op: "conv2d bias",
                    lhs: self.value(b).shape().to_vec(),
                    rhs: vec![o],
                });
            }
        }
        let win = Window { kh, kw, stride, pad };
        let (ho, wo) = win.output(h, w).ok_or_else(|| {
            Error::InvalidShape(format!(
                "{kh}x{kw} kernel (stride {stride}, pad {pad}) does not fit a {h}x{w} input"
            ))
        })?;
        let plane = ho * wo;
        let ck = c * kh * kw;
        let mut out = vec![0.0; n * o * plane];
        let mut cols = vec![0.0; ck * plane];
        let (xd, wd) = (self.value(x).data(), self.value(weight).data());
        for b in 0..n {
            im2col(&xd[b * c * h * w..], c, h, w, win, &mut cols);
            gemm(o, ck, plane, wd, false, &cols, false, &mut out[b * o * plane..(b + 1) * o * plane], false);
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for (i, v) in out.iter_mut().enumerate() {
                *v += bd[(i / plane) % o];
            }
        }
        let t = Tensor::from_parts(vec![n, o, ho, wo], out);
        Ok(self.push(t, Op::Conv2d { x, weight, bias, win }))
    }

    /// Max over `window×window` tiles; padding cells never win.
    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let &[n, c, h, w] = xs.as_slice() else {
            return Err(Error::InvalidShape(format!("maxpool2d expects [N,C,H,W], got {xs:?}")));
        };
        let win = Window {
            kh: window,
            kw: window,
            stride,
            pad,
        };
        if pad >= window {
            return Err(Error::InvalidArgument(format!(
                "pool padding {pad} must be smaller than the window {window}"
            )));
        }
        let (ho, wo) = win.output(h, w).ok_or_else(|| {
            Error::InvalidShape(format!("{window}x{window} pool leaves no output for a {h}x{w} input"))
        })?;
        let src = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = (plane * ho + oy) * wo + ox;
                    let mut found = false;
                    for ki in 0..window {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..window {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = (plane * h + iy as usize) * w + ix as usize;
                            if !found || src[i] > out[o] {
                                out[o] = src[i];
                                argmax[o] = i;
                                found = true;
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(self.push(t, Op::MaxPool2d { x, argmax }))
    }

    /// Mean over non-overlapping-or-strided `window×window` tiles, no padding.
    pub fn avgpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let &[n, c, h, w] = xs.as_slice() else {
            return Err(Error::InvalidShape(format!("avgpool2d expects [N,C,H,W], got {xs:?}")));
        };
        let win = Window {
            kh: window,
            kw: window,
            stride,
            pad: 0,
        };
        let (ho, wo) = win.output(h, w).ok_or_else(|| {
            Error::InvalidShape(format!("{window}x{window} pool leaves no output for a {h}x{w} input"))
        })?;
        let src = self.value(x).data();
        let scale = 1.0 / (window * window) as f64;
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ki in 0..window {
                        let row = (plane * h + oy * stride + ki) * w + ox * stride;
                        acc += src[row..row + window].iter().sum::<f64>();
                    }
                    out[(plane * ho + oy) * wo + ox] = acc * scale;
                }
            }
        }
        let t = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(self.push(t, Op::AvgPool2d { x, win }))
    }

    /// Normalizes over the last axis, then applies per-feature `gain`/`shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&0);
        for p in [gain, shift] {
            if self.value(p).shape() != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let (gd, sd) = (self.value(gain).data(), self.value(shift).data());
        let mut xhat = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(xhat.len() / d);
        let mut out = vec![0.0; xhat.len()];
        for (row, out_row) in xhat.chunks_mut(d).zip(out.chunks_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv;
                out_row[j] = gd[j] * *v + sd[j];
            }
            inv_std.push(inv);
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
        ))
    }

    /// Per-channel normalization of `[N,C,...]` input along axis 1.
    ///
    /// With `running = None` the batch's own statistics are used (and
    /// returned); otherwise the supplied mean and variance are treated as
    /// constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::InvalidShape(format!("batch_norm expects [N,C,...], got {shape:?}")));
        }
        let c = shape[1];
        for p in [gain, shift] {
            if self.value(p).shape() != [c] {
                return Err(Error::Shape {
                    op: "batch_norm",
                    lhs: shape.clone(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let spatial = numel(&shape[2..]);
        let count = shape[0] * spatial;
        let channel = |i: usize| (i / spatial) % c;
        let data = xv.data();
        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mut mean = vec![0.0; c];
                for (i, v) in data.iter().enumerate() {
                    mean[channel(i)] += v;
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for (i, v) in data.iter().enumerate() {
                    let d = v - mean[channel(i)];
                    var[channel(i)] += d * d;
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, sd) = (self.value(gain).data(), self.value(shift).data());
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for i in 0..data.len() {
            let ch = channel(i);
            xhat[i] = (data[i] - mean[ch]) * inv_std[ch];
            out[i] = gd[ch] * xhat[i] + sd[ch];
        }
        let batch_stats = stats.is_some();
        let v = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        Ok((v, stats))
    }

    /// Inverted dropout. Identity in eval mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(t, Op::Dropout(x, mask)))
    }

    /// Mean binary cross entropy of probabilities against 0/1 targets.
    /// Probabilities are clamped to `[BCE_EPS, 1 − BCE_EPS]`.
    pub fn bce(&mut self, probs: Var, targets: &Tensor) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != targets.shape() {
            return Err(Error::Shape {
                op: "bce",
                lhs: p.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                y * p.ln() + (1.0 - y) * (1.0 - p).ln()
            })
            .sum();
        let loss = -total / p.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::Bce(probs, targets.clone())))
    }

    /// Mean binary cross entropy on pre-sigmoid logits, in the overflow-free
    /// form `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: z.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / z.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits(logits, targets.clone())))
    }

    /// Splits `[N,C,H,W]` into `[N, T, P·P·C]` non-overlapping patch tokens.
    pub fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let t = patchify_gather(self.value(x), patch)?;
        Ok(self.push(t, Op::Patchify(x, patch)))
    }
}
