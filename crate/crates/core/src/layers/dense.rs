use super::context::Ctx;
use super::init::{initialize, Init};
use super::params::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Var;

/// Affine map over the last axis: `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, init: Init, rng: &mut Rng) -> Self {
        let w = initialize(init, &[in_features, out_features], in_features, out_features, rng);
        let weight = store.add(format!("{name}.weight"), ParamKind::Trainable, w);
        let bias = store.add(
            format!("{name}.bias"),
            ParamKind::Trainable,
            initialize(Init::Zeros, &[out_features], in_features, out_features, rng),
        );
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let last = cx.graph.shape(x).last().copied();
        if last != Some(self.in_features) {
            return Err(Error::Shape {
                op: "dense",
                lhs: cx.graph.shape(x).to_vec(),
                rhs: vec![self.in_features, self.out_features],
            });
        }
        let (w, b) = (cx.param(self.weight), cx.param(self.bias));
        let y = cx.graph.matmul(x, w)?;
        cx.graph.add(y, b)
    }
}
