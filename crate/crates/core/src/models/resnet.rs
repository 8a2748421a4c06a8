use super::spec::ModelSpec;
use crate::error::Result;
use crate::layers::{Conv2dLayer, ConvOptions, Ctx, Dense, Init, MaxPool2d, NormLayer, Padding, ParamStore};
use crate::rng::Rng;
use crate::tensor::Var;

fn conv(store: &mut ParamStore, name: &str, shape: (usize, usize, usize), stride: usize, rng: &mut Rng) -> Conv2dLayer {
    // Every conv here feeds a batch norm, whose shift subsumes a bias.
    let opts = ConvOptions {
        stride,
        padding: Padding::Same,
        bias: false,
    };
    Conv2dLayer::new(store, name, shape, opts, rng)
}

/// Two 3×3 conv+BN layers with a skip connection. The first conv carries the
/// stride; a strided or widening block projects its skip with 1×1 conv+BN.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv2dLayer,
    pub bn1: NormLayer,
    pub conv2: Conv2dLayer,
    pub bn2: NormLayer,
    pub projection: Option<(Conv2dLayer, NormLayer)>,
}

impl BasicBlock {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, stride: usize, rng: &mut Rng) -> Self {
        let conv1 = conv(store, &format!("{name}.conv1"), (in_ch, out_ch, 3), stride, rng);
        let bn1 = NormLayer::batch(store, &format!("{name}.bn1"), out_ch);
        let conv2 = conv(store, &format!("{name}.conv2"), (out_ch, out_ch, 3), 1, rng);
        let bn2 = NormLayer::batch(store, &format!("{name}.bn2"), out_ch);
        let projection = (stride != 1 || in_ch != out_ch).then(|| {
            (
                conv(store, &format!("{name}.proj"), (in_ch, out_ch, 1), stride, rng),
                NormLayer::batch(store, &format!("{name}.proj_bn"), out_ch),
            )
        });
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(cx, x)?;
        let h = self.bn1.forward(cx, h)?;
        let h = cx.graph.relu(h);
        let h = self.conv2.forward(cx, h)?;
        let h = self.bn2.forward(cx, h)?;
        let skip = match &self.projection {
            Some((c, bn)) => {
                let s = c.forward(cx, x)?;
                bn.forward(cx, s)?
            }
            None => x,
        };
        let y = cx.graph.add(h, skip)?;
        Ok(cx.graph.relu(y))
    }
}

/// 7×7/2 conv + BN + ReLU, then 3×3/2 max pool: a ×4 spatial reduction.
#[derive(Clone, Debug)]
pub struct Stem {
    pub conv: Conv2dLayer,
    pub bn: NormLayer,
    pub pool: MaxPool2d,
}

impl Stem {
    pub fn new(store: &mut ParamStore, in_ch: usize, width: usize, rng: &mut Rng) -> Self {
        Self {
            conv: conv(store, "stem.conv", (in_ch, width, 7), 2, rng),
            bn: NormLayer::batch(store, "stem.bn", width),
            pool: MaxPool2d {
                window: 3,
                stride: 2,
                padding: 1,
            },
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.conv.forward(cx, x)?;
        let h = self.bn.forward(cx, h)?;
        let h = cx.graph.relu(h);
        cx.record("stem", h);
        let h = self.pool.forward(cx, h)?;
        cx.record("pool", h);
        Ok(h)
    }
}

pub(crate) fn build_stage(
    store: &mut ParamStore,
    index: usize,
    in_ch: usize,
    out_ch: usize,
    blocks: usize,
    stride: usize,
    rng: &mut Rng,
) -> Vec<BasicBlock> {
    (0..blocks)
        .map(|b| {
            let (cin, s) = if b == 0 { (in_ch, stride) } else { (out_ch, 1) };
            BasicBlock::new(store, &format!("stage{}.block{b}", index + 1), cin, out_ch, s, rng)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ResnetNet {
    pub stem: Stem,
    pub stages: Vec<Vec<BasicBlock>>,
    pub head: Dense,
}

impl ResnetNet {
    pub fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let r = &spec.resnet;
        let stem = Stem::new(store, spec.channels, r.widths[0], rng);
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = r.widths[0];
        for s in 0..4 {
            let stride = if s == 0 { 1 } else { 2 };
            stages.push(build_stage(store, s, in_ch, r.widths[s], r.blocks[s], stride, rng));
            in_ch = r.widths[s];
        }
        let head = Dense::new(store, "head", in_ch, spec.num_classes, Init::XavierUniform, rng);
        Ok(Self { stem, stages, head })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(cx, x)?;
        for (s, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.forward(cx, h)?;
            }
            cx.record(format!("stage{}", s + 1), h);
        }
        let h = cx.graph.mean(h, &[2, 3])?;
        cx.record("gap", h);
        self.head.forward(cx, h)
    }
}
