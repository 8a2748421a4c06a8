use super::context::Ctx;
use super::init::{initialize, Init};
use super::params::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

/// Multi-head scaled dot-product self-attention without projection biases.
///
/// Each forward caches the softmax weights, shaped `[N, heads, T, T]`, in
/// `last_attention`; row `i` of head `h` holds the weights query `i` places
/// on every key.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub last_attention: Option<Tensor>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "model dimension {dim} is not divisible by {heads} heads"
            )));
        }
        let mut proj = |suffix: &str| {
            let w = initialize(Init::XavierUniform, &[dim, dim], dim, dim, rng);
            store.add(format!("{name}.{suffix}"), ParamKind::Trainable, w)
        };
        let (wq, wk, wv, wo) = (proj("wq"), proj("wk"), proj("wv"), proj("wo"));
        Ok(Self {
            heads,
            dim,
            wq,
            wk,
            wv,
            wo,
            last_attention: None,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(&mut self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let shape = cx.graph.shape(x).to_vec();
        let &[n, t, d] = shape.as_slice() else {
            return Err(Error::InvalidShape(format!("attention expects [N,T,d], got {shape:?}")));
        };
        if d != self.dim {
            return Err(Error::Shape {
                op: "attention",
                lhs: shape,
                rhs: vec![self.dim],
            });
        }
        let (h, dh) = (self.heads, self.head_dim());
        let split = |cx: &mut Ctx<'_>, w: ParamId, perm: &[usize]| -> Result<Var> {
            let w = cx.param(w);
            let p = cx.graph.matmul(x, w)?;
            let p = cx.graph.reshape(p, &[n, t, h, dh])?;
            cx.graph.permute(p, perm)
        };
        let q = split(cx, self.wq, &[0, 2, 1, 3])?; // [N,h,T,dh]
        let k = split(cx, self.wk, &[0, 2, 3, 1])?; // [N,h,dh,T]
        let v = split(cx, self.wv, &[0, 2, 1, 3])?; // [N,h,T,dh]
        let scores = cx.graph.matmul(q, k)?;
        let scores = cx.graph.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = cx.graph.softmax(scores)?;
        self.last_attention = Some(cx.graph.value(weights).clone());
        let mixed = cx.graph.matmul(weights, v)?;
        let mixed = cx.graph.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = cx.graph.reshape(mixed, &[n, t, d])?;
        let wo = cx.param(self.wo);
        cx.graph.matmul(mixed, wo)
    }
}
