use super::cnn::CnnNet;
use super::resnet::ResnetNet;
use super::spec::{Family, Head, ModelSpec};
use super::vit::{HybridNet, VitNet};
use crate::error::{Error, Result};
use crate::layers::{Ctx, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub enum Network {
    Cnn(CnnNet),
    Resnet(ResnetNet),
    Vit(VitNet),
    Hybrid(HybridNet),
}

/// A built architecture together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub net: Network,
}

/// One recorded forward pass. `output` follows the family's head contract:
/// probabilities for sigmoid heads, logits otherwise.
pub struct Pass<'a> {
    pub cx: Ctx<'a>,
    pub output: Var,
    pub head: Head,
}

impl Pass<'_> {
    /// Binary cross entropy in the form matching the head.
    pub fn loss(&mut self, targets: &Tensor) -> Result<Var> {
        match self.head {
            Head::Probabilities => self.cx.graph.bce(self.output, targets),
            Head::Logits => self.cx.graph.bce_with_logits(self.output, targets),
        }
    }

    pub fn output(&self) -> &Tensor {
        self.cx.graph.value(self.output)
    }

    /// Output mapped to probabilities regardless of the head.
    pub fn probabilities(&self) -> Tensor {
        match self.head {
            Head::Probabilities => self.output().clone(),
            Head::Logits => self.output().map(crate::tensor::sigmoid),
        }
    }
}

fn expect(spec: &ModelSpec, families: &[Family]) -> Result<()> {
    spec.validate()?;
    if !families.contains(&spec.family) {
        return Err(Error::Config(format!(
            "builder for {:?} called with family {}",
            families, spec.family
        )));
    }
    Ok(())
}

impl Model {
    /// Builds the architecture named by `spec.family`, initialising weights
    /// from `spec.seed`.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        match spec.family {
            Family::Cnn => Self::build_cnn(spec),
            Family::Resnet => Self::build_resnet(spec),
            Family::VitV1_32 | Family::VitV2_32 => Self::build_vit(spec),
            Family::VitResnet16 => Self::build_hybrid(spec),
        }
    }

    fn assemble(spec: &ModelSpec, make: impl FnOnce(&mut ParamStore, &mut Rng) -> Result<Network>) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = rng::substream(spec.seed, rng::INIT);
        let net = make(&mut params, &mut rng)?;
        Ok(Self {
            spec: spec.clone(),
            params,
            net,
        })
    }

    pub fn build_cnn(spec: &ModelSpec) -> Result<Self> {
        expect(spec, &[Family::Cnn])?;
        Self::assemble(spec, |p, r| Ok(Network::Cnn(CnnNet::new(spec, p, r)?)))
    }

    pub fn build_resnet(spec: &ModelSpec) -> Result<Self> {
        expect(spec, &[Family::Resnet])?;
        Self::assemble(spec, |p, r| Ok(Network::Resnet(ResnetNet::new(spec, p, r)?)))
    }

    pub fn build_vit(spec: &ModelSpec) -> Result<Self> {
        expect(spec, &[Family::VitV1_32, Family::VitV2_32])?;
        Self::assemble(spec, |p, r| Ok(Network::Vit(VitNet::new(spec, p, r)?)))
    }

    pub fn build_hybrid(spec: &ModelSpec) -> Result<Self> {
        expect(spec, &[Family::VitResnet16])?;
        Self::assemble(spec, |p, r| Ok(Network::Hybrid(HybridNet::new(spec, p, r)?)))
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn head(&self) -> Head {
        self.spec.family.head()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = &self.spec;
        match x.shape() {
            [_, c, h, w] if (*c, *h, *w) == (s.channels, s.height, s.width) => Ok(()),
            other => Err(Error::Shape {
                op: "model input",
                lhs: other.to_vec(),
                rhs: vec![s.channels, s.height, s.width],
            }),
        }
    }

    /// Records a forward pass over `x` of shape `[N,C,H,W]`. Training mode
    /// needs `rng` for dropout and updates batch-norm running statistics.
    pub fn forward<'a>(&'a mut self, x: Tensor, training: bool, rng: Option<&'a mut Rng>) -> Result<Pass<'a>> {
        self.check_input(&x)?;
        let head = self.head();
        let mut cx = Ctx::new(&mut self.params, training, rng);
        let input = cx.input(x);
        let out = match &mut self.net {
            Network::Cnn(n) => n.forward(&mut cx, input)?,
            Network::Resnet(n) => n.forward(&mut cx, input)?,
            Network::Vit(n) => n.forward(&mut cx, input)?,
            Network::Hybrid(n) => n.forward(&mut cx, input)?,
        };
        let output = match head {
            Head::Probabilities => cx.graph.sigmoid(out),
            Head::Logits => out,
        };
        cx.record("output", output);
        Ok(Pass { cx, output, head })
    }

    /// Eval-mode probabilities `[N, num_classes]`.
    pub fn predict(&mut self, x: Tensor) -> Result<Tensor> {
        Ok(self.forward(x, false, None)?.probabilities())
    }

    /// Eval-mode probabilities for many images, `batch` at a time.
    pub fn predict_all(&mut self, images: &[&Tensor], batch: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch.max(1)) {
            let x = Tensor::stack(chunk)?;
            let p = self.predict(x)?;
            let k = p.shape()[1];
            out.extend(p.data().chunks(k).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Attention weights `[N,h,T,T]` of the last encoder block from the most
    /// recent forward pass.
    pub fn last_attention(&self) -> Option<&Tensor> {
        match &self.net {
            Network::Vit(n) => n.encoder.last_attention(),
            Network::Hybrid(n) => n.encoder.last_attention(),
            _ => None,
        }
    }

    /// Token grid `(rows, cols)` of transformer families.
    pub fn token_grid(&self) -> Option<(usize, usize)> {
        match &self.net {
            Network::Vit(n) => Some(n.grid()),
            Network::Hybrid(n) => Some(n.grid),
            _ => None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable().map(|(_, p)| p.value.len()).sum()
    }
}
