//! The five classifier architectures and their checkpoint format.

mod checkpoint;
mod cnn;
mod model;
mod resnet;
mod spec;
mod trace;
mod vit;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use cnn::CnnNet;
pub use model::{Model, Network, Pass};
pub use resnet::{BasicBlock, ResnetNet, Stem};
pub use spec::{CnnDims, Family, Head, ModelSpec, ResnetDims, VitDims, SPEC_KEYS};
pub use trace::trace_shapes;
pub use vit::{Encoder, HybridNet, VitNet};
