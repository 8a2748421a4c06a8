use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(Error::Config(format!(
                "field `optimizer`: unknown optimizer `{other}` (expected sgd, adam or adamw)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay for adamw, an L2 term added to the gradient for sgd
    /// and adam.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        let (lr, momentum, weight_decay) = match kind {
            OptimizerKind::Sgd => (1e-2, 0.9, 0.0),
            OptimizerKind::Adam => (1e-3, 0.0, 0.0),
            OptimizerKind::AdamW => (1e-3, 0.0, 0.01),
        };
        Self {
            kind,
            lr,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("field `lr`: {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("field `momentum`: {} outside [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("fields `beta1`/`beta2` must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("fields `eps` must be positive and `weight_decay` non-negative".into());
        }
        Ok(())
    }
}

/// First-order optimizer with per-parameter state indexed like the store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step_count: u64,
    /// Momentum velocity (sgd) or first moment (adam).
    first: Vec<Option<Tensor>>,
    /// Second moment (adam).
    second: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every trainable parameter holding a gradient.
    /// All gradients are checked before any parameter moves.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for (_, p) in params.trainable() {
            if p.grad.as_ref().is_some_and(|g| !g.all_finite()) {
                return Err(Error::NonFiniteGradient { param: p.name.clone() });
            }
        }
        self.step_count += 1;
        self.first.resize(params.len(), None);
        self.second.resize(params.len(), None);
        let c = self.config.clone();
        let t = self.step_count as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (id, p) in params.iter_mut() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let Some(grad) = &p.grad else { continue };
            let i = id.index();
            let w = p.value.data_mut();
            let g = grad.data();
            match c.kind {
                OptimizerKind::Sgd => {
                    let v = self.first[i].get_or_insert_with(|| Tensor::zeros(grad.shape())).data_mut();
                    for ((w, g), v) in w.iter_mut().zip(g).zip(v) {
                        *v = c.momentum * *v + g + c.weight_decay * *w;
                        *w -= c.lr * *v;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let decoupled = c.kind == OptimizerKind::AdamW;
                    let m = self.first[i].get_or_insert_with(|| Tensor::zeros(grad.shape())).data_mut();
                    let v = self.second[i].get_or_insert_with(|| Tensor::zeros(grad.shape())).data_mut();
                    for (((w, g), m), v) in w.iter_mut().zip(g).zip(m).zip(v) {
                        let g = if decoupled {
                            *w *= 1.0 - c.lr * c.weight_decay;
                            *g
                        } else {
                            g + c.weight_decay * *w
                        };
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        *w -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
