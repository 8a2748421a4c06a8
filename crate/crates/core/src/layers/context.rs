use super::params::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BackwardStats, Graph, Tensor, Var};

/// State of one forward (and optional backward) pass over a parameter
/// store, in training or eval mode.
///
/// Parameters enter the graph lazily, once per pass, as leaves that require
/// gradients when trainable. [`Ctx::backward`] adds the resulting gradients
/// into the store.
pub struct Ctx<'a> {
    pub graph: Graph,
    params: &'a mut ParamStore,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: Option<&'a mut Rng>,
    trace: Vec<(String, Var)>,
    backpropagated: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a mut ParamStore, training: bool, rng: Option<&'a mut Rng>) -> Self {
        let bound = vec![None; params.len()];
        Self {
            graph: Graph::new(),
            params,
            bound,
            training,
            rng,
            trace: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn eval(params: &'a mut ParamStore) -> Self {
        Self::new(params, false, None)
    }

    pub fn train(params: &'a mut ParamStore, rng: &'a mut Rng) -> Self {
        Self::new(params, true, Some(rng))
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.params.get(id);
        let v = self
            .graph
            .leaf(p.value.clone(), p.kind == ParamKind::Trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor {
        &self.params.get(id).value
    }

    pub fn set_buffer(&mut self, id: ParamId, value: Tensor) {
        let p = self.params.get_mut(id);
        debug_assert_eq!(p.kind, ParamKind::Buffer);
        debug_assert_eq!(p.value.shape(), value.shape());
        p.value = value;
    }

    pub fn rng(&mut self) -> Result<&mut Rng> {
        self.rng
            .as_deref_mut()
            .ok_or_else(|| Error::InvalidArgument("training-mode pass needs a random stream".into()))
    }

    /// Inverted dropout drawing its mask from this pass's random stream;
    /// identity outside training.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::InvalidArgument("training-mode pass needs a random stream".into()))?;
        self.graph.dropout(x, rate, true, rng)
    }

    /// Names an intermediate value so callers can inspect it after the pass.
    pub fn record(&mut self, name: impl Into<String>, v: Var) {
        self.trace.push((name.into(), v));
    }

    pub fn trace(&self) -> &[(String, Var)] {
        &self.trace
    }

    /// Shape of every recorded intermediate, in recording order.
    pub fn shape_trace(&self) -> Vec<(String, Vec<usize>)> {
        self.trace
            .iter()
            .map(|(n, v)| (n.clone(), self.graph.shape(*v).to_vec()))
            .collect()
    }

    /// Runs backward from `loss` and adds parameter gradients into the store.
    /// Allowed once per pass; graph gradients stay readable afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardStats> {
        if self.backpropagated {
            return Err(Error::InvalidArgument("backward already ran for this pass".into()));
        }
        self.backpropagated = true;
        let stats = self.graph.backward(loss)?;
        for (i, slot) in self.bound.iter().enumerate() {
            let Some(v) = slot else { continue };
            let Some(g) = self.graph.grad(*v) else { continue };
            let p = self.params.get_mut(ParamId(i));
            match &mut p.grad {
                Some(existing) => existing.add_assign(g)?,
                None => p.grad = Some(g.clone()),
            }
        }
        Ok(stats)
    }
}
