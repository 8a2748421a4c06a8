use super::spec::ModelSpec;
use crate::error::Result;
use crate::layers::{Conv2dLayer, ConvOptions, Ctx, Dense, Init, MaxPool2d, Padding, ParamStore};
use crate::rng::Rng;
use crate::tensor::Var;

/// conv(3×3)+ReLU → pool 2×2 → conv(3×3)+ReLU → pool 2×2 → flatten →
/// dense+ReLU → dense.
#[derive(Clone, Debug)]
pub struct CnnNet {
    pub conv1: Conv2dLayer,
    pub pool1: MaxPool2d,
    pub conv2: Conv2dLayer,
    pub pool2: MaxPool2d,
    pub fc: Dense,
    pub head: Dense,
}

pub(crate) const POOL: MaxPool2d = MaxPool2d {
    window: 2,
    stride: 2,
    padding: 0,
};

fn valid(bias: bool) -> ConvOptions {
    ConvOptions {
        stride: 1,
        padding: Padding::Valid,
        bias,
    }
}

/// Spatial extent after the two conv/pool stages, if the input survives them.
pub(crate) fn feature_hw(h: usize, w: usize) -> Option<(usize, usize)> {
    let step = |x: usize| x.checked_sub(2).map(|v| v / 2).filter(|v| *v > 0);
    Some((step(step(h)?)?, step(step(w)?)?))
}

impl CnnNet {
    pub fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let d = &spec.cnn;
        let (fh, fw) = feature_hw(spec.height, spec.width).ok_or_else(|| {
            crate::Error::Config(format!(
                "input {}x{} is too small for two 3x3 conv + 2x2 pool stages",
                spec.height, spec.width
            ))
        })?;
        let conv1 = Conv2dLayer::new(store, "conv1", (spec.channels, d.conv1, 3), valid(true), rng);
        let conv2 = Conv2dLayer::new(store, "conv2", (d.conv1, d.conv2, 3), valid(true), rng);
        let fc = Dense::new(store, "dense", d.conv2 * fh * fw, d.dense, Init::HeNormal, rng);
        let head = Dense::new(store, "head", d.dense, spec.num_classes, Init::XavierUniform, rng);
        Ok(Self {
            conv1,
            pool1: POOL,
            conv2,
            pool2: POOL,
            fc,
            head,
        })
    }

    /// Returns head logits.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(cx, x)?;
        let h = cx.graph.relu(h);
        cx.record("conv1", h);
        let h = self.pool1.forward(cx, h)?;
        cx.record("pool1", h);
        let h = self.conv2.forward(cx, h)?;
        let h = cx.graph.relu(h);
        cx.record("conv2", h);
        let h = self.pool2.forward(cx, h)?;
        cx.record("pool2", h);
        let n = cx.graph.shape(h)[0];
        let h = cx.graph.reshape(h, &[n, self.fc.in_features])?;
        cx.record("flatten", h);
        let h = self.fc.forward(cx, h)?;
        let h = cx.graph.relu(h);
        cx.record("dense", h);
        self.head.forward(cx, h)
    }
}
