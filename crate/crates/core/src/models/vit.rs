use super::resnet::{build_stage, BasicBlock, Stem};
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::layers::{
    initialize, Conv2dLayer, ConvOptions, Ctx, Dense, Dropout, Init, NormLayer, Padding, ParamId, ParamKind,
    ParamStore, PatchEmbedding, TransformerBlock,
};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

/// Transformer blocks, final layer norm, token mean-pool, dropout, dense head.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<TransformerBlock>,
    pub norm: NormLayer,
    pub dropout: Dropout,
    pub head: Dense,
}

impl Encoder {
    fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let v = &spec.vit;
        let blocks = (0..v.depth)
            .map(|i| TransformerBlock::new(store, &format!("encoder.block{i}"), v.dim, v.heads, v.mlp_ratio, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            norm: NormLayer::layer(store, "encoder.norm", v.dim),
            dropout: Dropout::new(v.dropout)?,
            head: Dense::new(store, "head", v.dim, spec.num_classes, Init::XavierUniform, rng),
        })
    }

    fn forward(&mut self, cx: &mut Ctx<'_>, tokens: Var) -> Result<Var> {
        let mut h = tokens;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            h = block.forward(cx, h)?;
            cx.record(format!("block{}", i + 1), h);
        }
        let h = self.norm.forward(cx, h)?;
        let h = cx.graph.mean(h, &[1])?;
        cx.record("pooled", h);
        let h = self.dropout.forward(cx, h)?;
        self.head.forward(cx, h)
    }

    pub fn last_attention(&self) -> Option<&Tensor> {
        self.blocks.last()?.attention.last_attention.as_ref()
    }
}

/// Patch-token ViT: 32×32 patches, learned positions, mean-pooled encoder.
#[derive(Clone, Debug)]
pub struct VitNet {
    pub embed: PatchEmbedding,
    pub encoder: Encoder,
}

impl VitNet {
    pub fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let patch = spec.family.patch_size().ok_or_else(|| Error::UnsupportedFamily(spec.family.to_string()))?;
        let embed = PatchEmbedding::new(
            store,
            "embed",
            (spec.channels, spec.height, spec.width),
            patch,
            spec.vit.dim,
            rng,
        )?;
        let encoder = Encoder::new(spec, store, rng)?;
        Ok(Self { embed, encoder })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.embed.grid
    }

    pub fn forward(&mut self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let tokens = self.embed.forward(cx, x)?;
        cx.record("tokens", tokens);
        self.encoder.forward(cx, tokens)
    }
}

/// Convolutional-stem ViT: ResNet stem and first stage, 1×1 conv to the
/// model dimension, 4×4 average pooling to a 1/16-resolution token grid.
#[derive(Clone, Debug)]
pub struct HybridNet {
    pub stem: Stem,
    pub stage: Vec<BasicBlock>,
    pub to_dim: Conv2dLayer,
    pub positional: ParamId,
    pub grid: (usize, usize),
    pub encoder: Encoder,
}

/// Pooling window taking the stride-4 stem features to the token grid.
const TOKEN_POOL: usize = 4;

impl HybridNet {
    pub fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let r = &spec.resnet;
        let d = spec.vit.dim;
        if !spec.height.is_multiple_of(16) || !spec.width.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by the 16-pixel token size",
                spec.height, spec.width
            )));
        }
        let grid = (spec.height / 16, spec.width / 16);
        let stem = Stem::new(store, spec.channels, r.widths[0], rng);
        let stage = build_stage(store, 0, r.widths[0], r.widths[0], r.blocks[0], 1, rng);
        let to_dim = Conv2dLayer::new(
            store,
            "to_dim",
            (r.widths[0], d, 1),
            ConvOptions {
                stride: 1,
                padding: Padding::Valid,
                bias: true,
            },
            rng,
        );
        let table = initialize(Init::TruncatedNormal(0.02), &[grid.0 * grid.1, d], d, d, rng);
        let positional = store.add("embed.positional", ParamKind::Trainable, table);
        let encoder = Encoder::new(spec, store, rng)?;
        Ok(Self {
            stem,
            stage,
            to_dim,
            positional,
            grid,
            encoder,
        })
    }

    pub fn forward(&mut self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(cx, x)?;
        for block in &self.stage {
            h = block.forward(cx, h)?;
        }
        cx.record("stage1", h);
        let h = self.to_dim.forward(cx, h)?;
        let h = cx.graph.avgpool2d(h, TOKEN_POOL, TOKEN_POOL)?;
        cx.record("grid", h);
        let s = cx.graph.shape(h).to_vec();
        if (s[2], s[3]) != self.grid {
            return Err(Error::Shape {
                op: "hybrid token grid",
                lhs: s,
                rhs: vec![self.grid.0, self.grid.1],
            });
        }
        let h = cx.graph.reshape(h, &[s[0], s[1], s[2] * s[3]])?;
        let h = cx.graph.permute(h, &[0, 2, 1])?;
        let pos = cx.param(self.positional);
        let tokens = cx.graph.add(h, pos)?;
        cx.record("tokens", tokens);
        self.encoder.forward(cx, tokens)
    }
}
