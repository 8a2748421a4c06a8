//! Parameterized, differentiable layers and the plumbing they share: a named
//! parameter store, initializers and the per-pass [`Ctx`].

mod attention;
mod block;
mod context;
mod conv;
mod dense;
mod init;
mod norm;
mod params;
mod patch;

pub use attention::MultiHeadAttention;
pub use block::TransformerBlock;
pub use context::Ctx;
pub use conv::{Conv2dLayer, ConvOptions, MaxPool2d, Padding};
pub use dense::Dense;
pub use init::{initialize, Init};
pub use norm::{Dropout, NormKind, NormLayer};
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use patch::PatchEmbedding;
