use super::attention::MultiHeadAttention;
use super::context::Ctx;
use super::dense::Dense;
use super::init::Init;
use super::norm::NormLayer;
use super::params::ParamStore;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Var;

/// Pre-norm transformer encoder block:
/// `x + MHA(LN(x))`, then `x + W2·GELU(W1·LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: NormLayer,
    pub attention: MultiHeadAttention,
    pub norm2: NormLayer,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, mlp_ratio: usize, rng: &mut Rng) -> Result<Self> {
        let hidden = dim * mlp_ratio;
        Ok(Self {
            norm1: NormLayer::layer(store, &format!("{name}.norm1"), dim),
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), dim, heads, rng)?,
            norm2: NormLayer::layer(store, &format!("{name}.norm2"), dim),
            fc1: Dense::new(store, &format!("{name}.mlp.fc1"), dim, hidden, Init::HeNormal, rng),
            fc2: Dense::new(store, &format!("{name}.mlp.fc2"), hidden, dim, Init::XavierUniform, rng),
        })
    }

    pub fn forward(&mut self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(cx, x)?;
        let h = self.attention.forward(cx, h)?;
        let x = cx.graph.add(x, h)?;
        let h = self.norm2.forward(cx, x)?;
        let h = self.fc1.forward(cx, h)?;
        let h = cx.graph.gelu(h);
        let h = self.fc2.forward(cx, h)?;
        cx.graph.add(x, h)
    }
}
