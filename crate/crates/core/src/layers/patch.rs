use super::context::Ctx;
use super::dense::Dense;
use super::init::{initialize, Init};
use super::params::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Var;

/// Patchify, project each patch to the model dimension, add a learned
/// positional table.
#[derive(Clone, Debug)]
pub struct PatchEmbedding {
    pub patch: usize,
    pub channels: usize,
    pub dim: usize,
    pub grid: (usize, usize),
    pub projection: Dense,
    pub positional: ParamId,
}

impl PatchEmbedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (channels, height, width): (usize, usize, usize),
        patch: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(Error::InvalidShape(format!(
                "patch size {patch} must divide image height {height} and width {width}"
            )));
        }
        let grid = (height / patch, width / patch);
        let feat = patch * patch * channels;
        let projection = Dense::new(store, &format!("{name}.projection"), feat, dim, Init::XavierUniform, rng);
        let table = initialize(Init::TruncatedNormal(0.02), &[grid.0 * grid.1, dim], dim, dim, rng);
        let positional = store.add(format!("{name}.positional"), ParamKind::Trainable, table);
        Ok(Self {
            patch,
            channels,
            dim,
            grid,
            projection,
            positional,
        })
    }

    pub fn tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// `[N,C,H,W]` → `[N,T,d]`.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let patches = cx.graph.patchify(x, self.patch)?;
        if cx.graph.shape(patches)[1] != self.tokens() {
            return Err(Error::Shape {
                op: "patch embedding",
                lhs: cx.graph.shape(x).to_vec(),
                rhs: vec![self.tokens(), self.dim],
            });
        }
        cx.record("patches", patches);
        let tokens = self.projection.forward(cx, patches)?;
        let pos = cx.param(self.positional);
        cx.graph.add(tokens, pos)
    }
}
