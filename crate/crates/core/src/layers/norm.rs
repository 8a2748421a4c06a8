use super::context::Ctx;
use super::params::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub enum NormKind {
    /// Statistics over the batch (and spatial axes) per channel on axis 1.
    Batch {
        running_mean: ParamId,
        running_var: ParamId,
        momentum: f64,
    },
    /// Statistics over the last axis of each sample.
    Layer,
}

#[derive(Clone, Debug)]
pub struct NormLayer {
    pub kind: NormKind,
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
    pub features: usize,
}

impl NormLayer {
    pub fn layer(store: &mut ParamStore, name: &str, features: usize) -> Self {
        let (gain, shift) = affine(store, name, features);
        Self {
            kind: NormKind::Layer,
            gain,
            shift,
            eps: 1e-9,
            features,
        }
    }

    pub fn batch(store: &mut ParamStore, name: &str, features: usize) -> Self {
        let (gain, shift) = affine(store, name, features);
        let running_mean = store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[features]));
        let running_var = store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones(&[features]));
        Self {
            kind: NormKind::Batch {
                running_mean,
                running_var,
                momentum: 0.1,
            },
            gain,
            shift,
            eps: 1e-5,
            features,
        }
    }

    /// Batch kind in training mode normalizes with batch statistics and
    /// folds them into the running estimates (unbiased variance); in eval
    /// mode it uses the running estimates.
    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let gain = cx.param(self.gain);
        let shift = cx.param(self.shift);
        match &self.kind {
            NormKind::Layer => cx.graph.layer_norm(x, gain, shift, self.eps),
            NormKind::Batch {
                running_mean,
                running_var,
                momentum,
            } => {
                let shape = cx.graph.shape(x).to_vec();
                if shape.len() < 2 || shape[1] != self.features {
                    return Err(Error::Shape {
                        op: "batch norm",
                        lhs: shape,
                        rhs: vec![self.features],
                    });
                }
                if !cx.training() {
                    let mean = cx.buffer(*running_mean).data().to_vec();
                    let var = cx.buffer(*running_var).data().to_vec();
                    let (y, _) = cx.graph.batch_norm(x, gain, shift, self.eps, Some((&mean, &var)))?;
                    return Ok(y);
                }
                if shape[0] < 2 {
                    return Err(Error::InvalidArgument(
                        "batch normalization in training mode needs at least 2 samples".into(),
                    ));
                }
                let (y, stats) = cx.graph.batch_norm(x, gain, shift, self.eps, None)?;
                let stats = stats.expect("batch statistics requested");
                let correction = stats.count as f64 / (stats.count as f64 - 1.0);
                let m = *momentum;
                let mean: Vec<f64> = cx
                    .buffer(*running_mean)
                    .data()
                    .iter()
                    .zip(&stats.mean)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let var: Vec<f64> = cx
                    .buffer(*running_var)
                    .data()
                    .iter()
                    .zip(&stats.var)
                    .map(|(r, b)| (1.0 - m) * r + m * b * correction)
                    .collect();
                cx.set_buffer(*running_mean, Tensor::from_parts(vec![self.features], mean));
                cx.set_buffer(*running_var, Tensor::from_parts(vec![self.features], var));
                Ok(y)
            }
        }
    }
}

fn affine(store: &mut ParamStore, name: &str, features: usize) -> (ParamId, ParamId) {
    let gain = store.add(format!("{name}.gain"), ParamKind::Trainable, Tensor::ones(&[features]));
    let shift = store.add(format!("{name}.shift"), ParamKind::Trainable, Tensor::zeros(&[features]));
    (gain, shift)
}

#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        cx.dropout(x, self.rate)
    }
}
