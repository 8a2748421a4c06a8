use super::context::Ctx;
use super::init::{initialize, Init};
use super::params::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{conv_output_extent, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// `(k − 1)/2` zeros per side, which preserves extent at stride 1.
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => (kernel - 1) / 2,
            Padding::Explicit(p) => p,
        }
    }
}

/// 2-D cross-correlation layer, weights `[out_ch, in_ch, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

pub struct ConvOptions {
    pub stride: usize,
    pub padding: Padding,
    pub bias: bool,
}

impl Conv2dLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (in_channels, out_channels, kernel): (usize, usize, usize),
        opts: ConvOptions,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let w = initialize(Init::HeNormal, &[out_channels, in_channels, kernel, kernel], fan_in, fan_out, rng);
        let weight = store.add(format!("{name}.weight"), ParamKind::Trainable, w);
        let bias = opts.bias.then(|| {
            store.add(
                format!("{name}.bias"),
                ParamKind::Trainable,
                initialize(Init::Zeros, &[out_channels], fan_in, fan_out, rng),
            )
        });
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride: opts.stride,
            padding: opts.padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let pad = self.padding.amount(self.kernel);
        Some((
            conv_output_extent(h, self.kernel, self.stride, pad)?,
            conv_output_extent(w, self.kernel, self.stride, pad)?,
        ))
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let shape = cx.graph.shape(x);
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::Shape {
                op: "conv2d layer",
                lhs: shape.to_vec(),
                rhs: vec![self.out_channels, self.in_channels, self.kernel, self.kernel],
            });
        }
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        cx.graph
            .conv2d(x, w, b, self.stride, self.padding.amount(self.kernel))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPool2d {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_extent(h, self.window, self.stride, self.padding)?,
            conv_output_extent(w, self.window, self.stride, self.padding)?,
        ))
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        cx.graph.maxpool2d(x, self.window, self.stride, self.padding)
    }
}
