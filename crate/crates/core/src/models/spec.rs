use std::fmt;
use std::str::FromStr;

use crate::config::{join, KeyValues};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cnn,
    Resnet,
    VitV1_32,
    VitV2_32,
    VitResnet16,
}

/// What the final layer emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Sigmoid probabilities in `(0,1)`.
    Probabilities,
    /// Unbounded pre-sigmoid scores.
    Logits,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Cnn,
        Family::Resnet,
        Family::VitV1_32,
        Family::VitV2_32,
        Family::VitResnet16,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Resnet => "resnet",
            Family::VitV1_32 => "vit_v1_32",
            Family::VitV2_32 => "vit_v2_32",
            Family::VitResnet16 => "vit_resnet_16",
        }
    }

    /// Families with a transformer encoder (and hence attention maps).
    pub fn is_vit(self) -> bool {
        matches!(self, Family::VitV1_32 | Family::VitV2_32 | Family::VitResnet16)
    }

    pub fn head(self) -> Head {
        match self {
            Family::VitResnet16 => Head::Logits,
            _ => Head::Probabilities,
        }
    }

    /// Side length, in input pixels, of the area one token covers.
    pub fn patch_size(self) -> Option<usize> {
        match self {
            Family::VitV1_32 | Family::VitV2_32 => Some(32),
            Family::VitResnet16 => Some(16),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "field `family`: unknown family `{s}` (expected one of cnn, resnet, vit_v1_32, vit_v2_32, vit_resnet_16)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VitDims {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl Default for VitDims {
    fn default() -> Self {
        Self {
            dim: 256,
            depth: 6,
            heads: 8,
            mlp_ratio: 4,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnDims {
    pub conv1: usize,
    pub conv2: usize,
    pub dense: usize,
}

impl Default for CnnDims {
    fn default() -> Self {
        Self {
            conv1: 32,
            conv2: 64,
            dense: 512,
        }
    }
}

/// Stage widths and block counts; the stem uses the first width. The hybrid
/// family uses only the first stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ResnetDims {
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
}

impl Default for ResnetDims {
    fn default() -> Self {
        Self {
            widths: [64, 128, 256, 512],
            blocks: [3, 4, 6, 3],
        }
    }
}

/// Declarative description of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub vit: VitDims,
    pub cnn: CnnDims,
    pub resnet: ResnetDims,
    pub seed: u64,
}

pub const SPEC_KEYS: &[&str] = &[
    "family",
    "input_height",
    "input_width",
    "input_channels",
    "num_classes",
    "vit_dim",
    "vit_depth",
    "vit_heads",
    "vit_mlp_ratio",
    "dropout",
    "cnn_conv1",
    "cnn_conv2",
    "cnn_dense",
    "resnet_widths",
    "resnet_blocks",
    "seed",
];

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            height: 224,
            width: 224,
            channels: 3,
            num_classes: 15,
            vit: VitDims::default(),
            cnn: CnnDims::default(),
            resnet: ResnetDims::default(),
            seed: 0,
        }
    }

    /// Small dimensions for laptop-scale experiments on `size×size` input.
    pub fn desk(family: Family, size: usize) -> Self {
        Self {
            height: size,
            width: size,
            vit: VitDims {
                dim: 64,
                depth: 2,
                heads: 4,
                mlp_ratio: 2,
                dropout: 0.1,
            },
            cnn: CnnDims {
                conv1: 8,
                conv2: 16,
                dense: 64,
            },
            resnet: ResnetDims {
                widths: [8, 16, 32, 64],
                blocks: [1, 1, 1, 1],
            },
            ..Self::new(family)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return cfg(format!(
                "input extents must be positive, got {}x{}x{}",
                self.height, self.width, self.channels
            ));
        }
        if self.num_classes == 0 {
            return cfg("field `num_classes` must be positive".into());
        }
        if self.family.is_vit() {
            let v = &self.vit;
            if v.dim == 0 || v.depth == 0 || v.mlp_ratio == 0 {
                return cfg("ViT dimensions must be positive".into());
            }
            if v.heads == 0 || !v.dim.is_multiple_of(v.heads) {
                return cfg(format!("field `vit_heads`: {} heads do not divide vit_dim {}", v.heads, v.dim));
            }
            if !(0.0..1.0).contains(&v.dropout) {
                return cfg(format!("field `dropout`: {} outside [0, 1)", v.dropout));
            }
            let p = self.family.patch_size().expect("vit family");
            if !self.height.is_multiple_of(p) || !self.width.is_multiple_of(p) {
                return cfg(format!(
                    "input {}x{} is not divisible by the {p}-pixel patch of {}",
                    self.height, self.width, self.family
                ));
            }
        }
        let r = &self.resnet;
        if r.widths.contains(&0) || r.blocks.contains(&0) {
            return cfg("ResNet widths and block counts must be positive".into());
        }
        let c = &self.cnn;
        if c.conv1 == 0 || c.conv2 == 0 || c.dense == 0 {
            return cfg("CNN widths must be positive".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("family", self.family);
        kv.set("input_height", self.height);
        kv.set("input_width", self.width);
        kv.set("input_channels", self.channels);
        kv.set("num_classes", self.num_classes);
        kv.set("vit_dim", self.vit.dim);
        kv.set("vit_depth", self.vit.depth);
        kv.set("vit_heads", self.vit.heads);
        kv.set("vit_mlp_ratio", self.vit.mlp_ratio);
        kv.set("dropout", self.vit.dropout);
        kv.set("cnn_conv1", self.cnn.conv1);
        kv.set("cnn_conv2", self.cnn.conv2);
        kv.set("cnn_dense", self.cnn.dense);
        kv.set("resnet_widths", join(&self.resnet.widths));
        kv.set("resnet_blocks", join(&self.resnet.blocks));
        kv.set("seed", self.seed);
        kv
    }

    /// Reads the model fields of `kv`, defaulting every absent one except
    /// `family`. Unrelated keys are ignored.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let family: Family = kv
            .get("family")
            .ok_or_else(|| Error::Config("missing field `family`".into()))?
            .parse()?;
        let d = ModelSpec::new(family);
        let four = |key: &str, default: [usize; 4]| -> Result<[usize; 4]> {
            match kv.list::<usize>(key)? {
                None => Ok(default),
                Some(v) => v
                    .try_into()
                    .map_err(|_| Error::Config(format!("field `{key}` needs exactly 4 entries"))),
            }
        };
        let spec = ModelSpec {
            family,
            height: kv.parsed_or("input_height", d.height)?,
            width: kv.parsed_or("input_width", d.width)?,
            channels: kv.parsed_or("input_channels", d.channels)?,
            num_classes: kv.parsed_or("num_classes", d.num_classes)?,
            vit: VitDims {
                dim: kv.parsed_or("vit_dim", d.vit.dim)?,
                depth: kv.parsed_or("vit_depth", d.vit.depth)?,
                heads: kv.parsed_or("vit_heads", d.vit.heads)?,
                mlp_ratio: kv.parsed_or("vit_mlp_ratio", d.vit.mlp_ratio)?,
                dropout: kv.parsed_or("dropout", d.vit.dropout)?,
            },
            cnn: CnnDims {
                conv1: kv.parsed_or("cnn_conv1", d.cnn.conv1)?,
                conv2: kv.parsed_or("cnn_conv2", d.cnn.conv2)?,
                dense: kv.parsed_or("cnn_dense", d.cnn.dense)?,
            },
            resnet: ResnetDims {
                widths: four("resnet_widths", d.resnet.widths)?,
                blocks: four("resnet_blocks", d.resnet.blocks)?,
            },
            seed: kv.parsed_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
