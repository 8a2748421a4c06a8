//! Finite-difference gradient checks shared by the gradient and acceptance
//! suites.
//!
//! Every check contracts the output with a fixed random projection `R`, so
//! the scalar `L = Σ out·R` exercises every output element, then compares
//! the analytic gradient of `L` against central differences.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng as _;
use xrf::layers::{
    Conv2dLayer, ConvOptions, Ctx, Dense, Dropout, Init, MultiHeadAttention, NormLayer, Padding, ParamKind,
    ParamStore, PatchEmbedding, TransformerBlock,
};
use xrf::models::BasicBlock;
use xrf::rng::{substream, Rng};
use xrf::tensor::{Graph, Tensor, Var};
use xrf::Result;

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const TOLERANCE: f64 = 1e-4;
/// Random instances per op or layer.
pub const INSTANCES: u64 = 10;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the plain difference norm when both
/// gradients vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values at least 0.01 apart in random order, so max-style ops keep their
/// winner under a finite-difference nudge.
pub fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01).collect();
    values.shuffle(rng);
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Values bounded away from zero by 0.05, for ops with a kink there.
pub fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn numeric_gradient(value: &mut Tensor, mut eval: impl FnMut(&Tensor) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(value.len());
    for k in 0..value.len() {
        let orig = value.data()[k];
        value.data_mut()[k] = orig + STEP;
        let up = eval(value)?;
        value.data_mut()[k] = orig - STEP;
        let down = eval(value)?;
        value.data_mut()[k] = orig;
        out.push((up - down) / (2.0 * STEP));
    }
    Ok(out)
}

/// Worst relative error over all inputs of a graph-level op.
pub fn op_error(
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    rng: &mut Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let projection = uniform(g.shape(out), -1.0, 1.0, rng);
    let p = g.constant(projection.clone());
    let prod = g.mul(out, p)?;
    let loss = g.sum_all(prod);
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(*v))))
        .collect();

    let mut worst = 0.0f64;
    let mut current = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut value = current[i].clone();
        let numeric = numeric_gradient(&mut value, |v| {
            current[i] = v.clone();
            let mut g = Graph::new();
            let vars: Vec<Var> = current.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            Ok(dot(g.value(out), &projection))
        })?;
        current[i] = inputs[i].clone();
        worst = worst.max(relative_error(analytic[i].data(), &numeric));
    }
    Ok(worst)
}

/// Worst relative error over the input and every trainable parameter of a
/// layer. Training-mode passes draw dropout masks from the same stream on
/// every evaluation.
pub fn layer_error(
    store: &mut ParamStore,
    x: &Tensor,
    training: bool,
    mut f: impl FnMut(&mut Ctx<'_>, Var) -> Result<Var>,
    rng: &mut Rng,
) -> Result<f64> {
    let mask_stream = || substream(99, "fd-mask");
    store.zero_grad();
    let (analytic_x, projection) = {
        let mut mask = mask_stream();
        let mut cx = Ctx::new(store, training, Some(&mut mask));
        let xv = cx.graph.variable(x.clone());
        let out = f(&mut cx, xv)?;
        let projection = uniform(cx.graph.shape(out), -1.0, 1.0, rng);
        let p = cx.graph.constant(projection.clone());
        let prod = cx.graph.mul(out, p)?;
        let loss = cx.graph.sum_all(prod);
        cx.backward(loss)?;
        (cx.graph.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())), projection)
    };
    let mut eval = |store: &mut ParamStore, x: &Tensor| -> Result<f64> {
        let mut mask = mask_stream();
        let mut cx = Ctx::new(store, training, Some(&mut mask));
        let xv = cx.input(x.clone());
        let out = f(&mut cx, xv)?;
        Ok(dot(cx.graph.value(out), &projection))
    };

    let mut x_value = x.clone();
    let numeric = numeric_gradient(&mut x_value, |v| eval(store, v))?;
    let mut worst = relative_error(analytic_x.data(), &numeric);

    let ids: Vec<_> = store.trainable().map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape()));
        let mut numeric = Vec::new();
        for k in 0..analytic.len() {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + STEP;
            let up = eval(store, x)?;
            store.get_mut(id).value.data_mut()[k] = orig - STEP;
            let down = eval(store, x)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

/// One op or layer under test; `run` checks a single random instance and
/// returns its worst relative error.
pub struct GradCase {
    pub name: &'static str,
    pub run: fn(&mut Rng) -> Result<f64>,
}

/// Worst error of `case` over [`INSTANCES`] seeded instances.
pub fn run_case(case: &GradCase) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = substream(i, case.name);
        worst = worst.max((case.run)(&mut rng)?);
    }
    Ok(worst)
}

fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn binary(rng: &mut Rng, f: fn(&mut Graph, Var, Var) -> Result<Var>) -> Result<f64> {
    let (a, b) = (pick(rng, 1, 3), pick(rng, 2, 4));
    // Second operand broadcasts along the leading axis.
    let x = uniform(&[a, b], -1.0, 1.0, rng);
    let y = uniform(&[b], -1.0, 1.0, rng);
    op_error(&[x, y], |g, v| f(g, v[0], v[1]), rng)
}

fn unary(rng: &mut Rng, x: Tensor, f: fn(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
    op_error(&[x], |g, v| f(g, v[0]), rng)
}

fn small_shape(rng: &mut Rng) -> Vec<usize> {
    vec![pick(rng, 1, 3), pick(rng, 2, 5)]
}

pub fn op_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "add",
            run: |rng| binary(rng, |g, a, b| g.add(a, b)),
        },
        GradCase {
            name: "sub",
            run: |rng| binary(rng, |g, a, b| g.sub(a, b)),
        },
        GradCase {
            name: "mul",
            run: |rng| binary(rng, |g, a, b| g.mul(a, b)),
        },
        GradCase {
            name: "scale",
            run: |rng| {
                let x = uniform(&small_shape(rng), -1.0, 1.0, rng);
                unary(rng, x, |g, a| Ok(g.scale(a, -2.5)))
            },
        },
        GradCase {
            name: "relu",
            run: |rng| {
                let x = away_from_zero(&small_shape(rng), rng);
                unary(rng, x, |g, a| Ok(g.relu(a)))
            },
        },
        GradCase {
            name: "gelu",
            run: |rng| {
                let x = uniform(&small_shape(rng), -3.0, 3.0, rng);
                unary(rng, x, |g, a| Ok(g.gelu(a)))
            },
        },
        GradCase {
            name: "sigmoid",
            run: |rng| {
                let x = uniform(&small_shape(rng), -4.0, 4.0, rng);
                unary(rng, x, |g, a| Ok(g.sigmoid(a)))
            },
        },
        GradCase {
            name: "exp",
            run: |rng| {
                let x = uniform(&small_shape(rng), -2.0, 2.0, rng);
                unary(rng, x, |g, a| g.exp(a))
            },
        },
        GradCase {
            name: "log",
            run: |rng| {
                let x = uniform(&small_shape(rng), 0.3, 3.0, rng);
                unary(rng, x, |g, a| g.log(a))
            },
        },
        GradCase {
            name: "matmul",
            run: |rng| {
                let (m, k, n) = (pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4));
                let a = uniform(&[m, k], -1.0, 1.0, rng);
                let b = uniform(&[k, n], -1.0, 1.0, rng);
                op_error(&[a, b], |g, v| g.matmul(v[0], v[1]), rng)
            },
        },
        GradCase {
            name: "matmul_shared_rhs",
            run: |rng| {
                let (t, m, k, n) = (pick(rng, 2, 3), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3));
                let a = uniform(&[t, m, k], -1.0, 1.0, rng);
                let b = uniform(&[k, n], -1.0, 1.0, rng);
                op_error(&[a, b], |g, v| g.matmul(v[0], v[1]), rng)
            },
        },
        GradCase {
            name: "matmul_batched",
            run: |rng| {
                let (t, m, k, n) = (pick(rng, 2, 3), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3));
                let a = uniform(&[2, t, m, k], -1.0, 1.0, rng);
                let b = uniform(&[2, t, k, n], -1.0, 1.0, rng);
                op_error(&[a, b], |g, v| g.matmul(v[0], v[1]), rng)
            },
        },
        GradCase {
            name: "sum",
            run: |rng| {
                let x = uniform(&[pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)], -1.0, 1.0, rng);
                op_error(&[x], |g, v| g.sum(v[0], &[0, 2]), rng)
            },
        },
        GradCase {
            name: "mean",
            run: |rng| {
                let x = uniform(&[pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)], -1.0, 1.0, rng);
                op_error(&[x], |g, v| g.mean(v[0], &[1]), rng)
            },
        },
        GradCase {
            name: "max",
            run: |rng| {
                let x = distinct(&[pick(rng, 1, 3), pick(rng, 2, 4)], rng);
                op_error(&[x], |g, v| g.max(v[0], &[1]), rng)
            },
        },
        GradCase {
            name: "sum_all",
            run: |rng| {
                let x = uniform(&small_shape(rng), -1.0, 1.0, rng);
                op_error(&[x], |g, v| Ok(g.sum_all(v[0])), rng)
            },
        },
        GradCase {
            name: "reshape",
            run: |rng| {
                let (a, b) = (pick(rng, 1, 3), pick(rng, 1, 3));
                let x = uniform(&[a, b, 2], -1.0, 1.0, rng);
                op_error(&[x], move |g, v| g.reshape(v[0], &[2 * b, a]), rng)
            },
        },
        GradCase {
            name: "permute",
            run: |rng| {
                let x = uniform(&[pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)], -1.0, 1.0, rng);
                op_error(&[x], |g, v| g.permute(v[0], &[2, 0, 1]), rng)
            },
        },
        GradCase {
            name: "softmax",
            run: |rng| {
                let x = uniform(&small_shape(rng), -3.0, 3.0, rng);
                op_error(&[x], |g, v| g.softmax(v[0]), rng)
            },
        },
        GradCase {
            name: "conv2d",
            run: |rng| {
                let (stride, pad, k) = (pick(rng, 1, 2), pick(rng, 0, 1), pick(rng, 1, 3));
                let (c, o, h, w) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 3, 6), pick(rng, 3, 6));
                let x = uniform(&[2, c, h, w], -1.0, 1.0, rng);
                let wt = uniform(&[o, c, k, k], -1.0, 1.0, rng);
                let b = uniform(&[o], -1.0, 1.0, rng);
                op_error(&[x, wt, b], move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad), rng)
            },
        },
        GradCase {
            name: "maxpool2d",
            run: |rng| {
                let (window, stride, pad) = (pick(rng, 2, 3), pick(rng, 1, 2), pick(rng, 0, 1));
                let x = distinct(&[pick(rng, 1, 2), 2, pick(rng, 4, 6), pick(rng, 4, 6)], rng);
                op_error(&[x], move |g, v| g.maxpool2d(v[0], window, stride, pad), rng)
            },
        },
        GradCase {
            name: "avgpool2d",
            run: |rng| {
                let (window, stride) = (pick(rng, 1, 3), pick(rng, 1, 3));
                let x = uniform(&[pick(rng, 1, 2), 2, pick(rng, 3, 6), pick(rng, 3, 6)], -1.0, 1.0, rng);
                op_error(&[x], move |g, v| g.avgpool2d(v[0], window, stride), rng)
            },
        },
        GradCase {
            name: "layer_norm",
            run: |rng| {
                let d = pick(rng, 3, 6);
                let x = uniform(&[pick(rng, 1, 3), d], -2.0, 2.0, rng);
                let gain = uniform(&[d], 0.5, 1.5, rng);
                let shift = uniform(&[d], -0.5, 0.5, rng);
                op_error(&[x, gain, shift], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), rng)
            },
        },
        GradCase {
            name: "batch_norm_batch_stats",
            run: |rng| {
                let c = pick(rng, 1, 3);
                let x = uniform(&[pick(rng, 2, 3), c, pick(rng, 1, 3), 2], -2.0, 2.0, rng);
                let gain = uniform(&[c], 0.5, 1.5, rng);
                let shift = uniform(&[c], -0.5, 0.5, rng);
                op_error(&[x, gain, shift], |g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5, None)?.0), rng)
            },
        },
        GradCase {
            name: "batch_norm_running_stats",
            run: |rng| {
                let c = pick(rng, 1, 3);
                let x = uniform(&[pick(rng, 1, 3), c, 2, 2], -2.0, 2.0, rng);
                let gain = uniform(&[c], 0.5, 1.5, rng);
                let shift = uniform(&[c], -0.5, 0.5, rng);
                let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
                let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
                op_error(
                    &[x, gain, shift],
                    move |g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5, Some((&mean, &var)))?.0),
                    rng,
                )
            },
        },
        GradCase {
            name: "dropout",
            run: |rng| {
                let x = uniform(&small_shape(rng), -1.0, 1.0, rng);
                op_error(&[x], |g, v| g.dropout(v[0], 0.3, true, &mut substream(5, "fd-dropout")), rng)
            },
        },
        GradCase {
            name: "bce",
            run: |rng| {
                let shape = small_shape(rng);
                let p = uniform(&shape, 0.05, 0.95, rng);
                let y = Tensor::from_fn(&shape, |_| f64::from(rng.random::<bool>()));
                op_error(&[p], move |g, v| g.bce(v[0], &y), rng)
            },
        },
        GradCase {
            name: "bce_with_logits",
            run: |rng| {
                let shape = small_shape(rng);
                let z = uniform(&shape, -6.0, 6.0, rng);
                let y = Tensor::from_fn(&shape, |_| f64::from(rng.random::<bool>()));
                op_error(&[z], move |g, v| g.bce_with_logits(v[0], &y), rng)
            },
        },
        GradCase {
            name: "patchify",
            run: |rng| {
                let p = pick(rng, 1, 3);
                let x = uniform(&[pick(rng, 1, 2), pick(rng, 1, 3), 2 * p, 3 * p], -1.0, 1.0, rng);
                op_error(&[x], move |g, v| g.patchify(v[0], p), rng)
            },
        },
    ]
}

pub fn layer_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "dense",
            run: |rng| {
                let (i, o) = (pick(rng, 1, 5), pick(rng, 1, 5));
                let mut store = ParamStore::new();
                let layer = Dense::new(&mut store, "dense", i, o, Init::XavierUniform, rng);
                perturb_all(&mut store, rng);
                let x = uniform(&[pick(rng, 1, 3), pick(rng, 1, 3), i], -1.0, 1.0, rng);
                layer_error(&mut store, &x, false, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "conv2d_layer",
            run: |rng| {
                let (c, o, k) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3));
                let padding = if rng.random::<bool>() { Padding::Same } else { Padding::Valid };
                let opts = ConvOptions {
                    stride: pick(rng, 1, 2),
                    padding,
                    bias: true,
                };
                let mut store = ParamStore::new();
                let layer = Conv2dLayer::new(&mut store, "conv", (c, o, k), opts, rng);
                perturb_all(&mut store, rng);
                let x = uniform(&[2, c, pick(rng, 3, 5), pick(rng, 3, 5)], -1.0, 1.0, rng);
                layer_error(&mut store, &x, false, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "layer_norm_layer",
            run: |rng| {
                // Two features normalize to ±1 regardless of input, which
                // leaves no input gradient to compare.
                let d = pick(rng, 3, 6);
                let mut store = ParamStore::new();
                let layer = NormLayer::layer(&mut store, "ln", d);
                perturb_all(&mut store, rng);
                let x = uniform(&[pick(rng, 1, 3), 3, d], -2.0, 2.0, rng);
                layer_error(&mut store, &x, false, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "batch_norm_layer_train",
            run: |rng| {
                let c = pick(rng, 1, 3);
                let mut store = ParamStore::new();
                let layer = NormLayer::batch(&mut store, "bn", c);
                perturb_all(&mut store, rng);
                let x = uniform(&[pick(rng, 2, 3), c, 2, 2], -2.0, 2.0, rng);
                layer_error(&mut store, &x, true, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "batch_norm_layer_eval",
            run: |rng| {
                let c = pick(rng, 1, 3);
                let mut store = ParamStore::new();
                let layer = NormLayer::batch(&mut store, "bn", c);
                perturb_all(&mut store, rng);
                let x = uniform(&[pick(rng, 1, 3), c, 2, 2], -2.0, 2.0, rng);
                layer_error(&mut store, &x, false, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "dropout_layer",
            run: |rng| {
                let mut store = ParamStore::new();
                let layer = Dropout::new(0.25)?;
                let x = uniform(&small_shape(rng), -1.0, 1.0, rng);
                layer_error(&mut store, &x, true, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "multi_head_attention",
            run: |rng| {
                let heads = pick(rng, 1, 2);
                let dim = heads * pick(rng, 2, 3);
                let mut store = ParamStore::new();
                let mut layer = MultiHeadAttention::new(&mut store, "mha", dim, heads, rng)?;
                perturb_all(&mut store, rng);
                let x = uniform(&[pick(rng, 1, 2), pick(rng, 2, 4), dim], -1.0, 1.0, rng);
                layer_error(&mut store, &x, false, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "transformer_block",
            run: |rng| {
                let heads = pick(rng, 1, 2);
                let dim = heads * 3;
                let mut store = ParamStore::new();
                let mut layer = TransformerBlock::new(&mut store, "block", dim, heads, 2, rng)?;
                perturb_all(&mut store, rng);
                let x = uniform(&[pick(rng, 1, 2), pick(rng, 2, 3), dim], -1.0, 1.0, rng);
                layer_error(&mut store, &x, false, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "patch_embedding",
            run: |rng| {
                let (p, c) = (pick(rng, 1, 2), pick(rng, 1, 2));
                let (h, w) = (p * pick(rng, 1, 2), p * pick(rng, 1, 3));
                let mut store = ParamStore::new();
                let layer = PatchEmbedding::new(&mut store, "embed", (c, h, w), p, 3, rng)?;
                let x = uniform(&[pick(rng, 1, 2), c, h, w], -1.0, 1.0, rng);
                layer_error(&mut store, &x, false, |cx, v| layer.forward(cx, v), rng)
            },
        },
        GradCase {
            name: "residual_basic_block",
            run: |rng| {
                let (c, o, stride) = (pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2));
                let mut store = ParamStore::new();
                let layer = BasicBlock::new(&mut store, "block", c, o, stride, rng);
                perturb_all(&mut store, rng);
                let x = uniform(&[2, c, 4, 4], -1.0, 1.0, rng);
                layer_error(&mut store, &x, true, |cx, v| layer.forward(cx, v), rng)
            },
        },
    ]
}

/// Moves every trainable value off its initializer (zero biases, unit
/// gains) so no gradient term is trivially zero.
fn perturb_all(store: &mut ParamStore, rng: &mut Rng) {
    for (_, p) in store.iter_mut() {
        if p.kind == ParamKind::Trainable {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
}
