use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// so every node's inputs precede it.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Local-gradient rules evaluated, one per node that received a gradient.
    pub evaluations: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a value with no history.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the last scalar passed to [`Graph::backward`]
    /// with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Propagates d`loss`/d(node) to every node `loss` depends on.
    ///
    /// Gradients accumulate: calling this twice without [`Graph::zero_grad`]
    /// leaves every gradient doubled.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardStats> {
        let value = &self.nodes[loss.0].value;
        if value.len() != 1 {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(BackwardStats::default());
        }
        let mut pending: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::from_parts(value.shape().to_vec(), vec![1.0]));
        let mut finished = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            node.op.backward(&self.nodes, &node.value, &g, &mut pending);
            finished.push((i, g));
        }
        let stats = BackwardStats {
            evaluations: finished.len(),
        };
        for (i, g) in finished {
            let slot = &mut self.nodes[i].grad;
            match slot {
                Some(existing) => existing.add_assign(&g)?,
                None => *slot = Some(g),
            }
        }
        Ok(stats)
    }
}

/// Adds `g` into the pending gradient of `v` if `v` participates in
/// differentiation.
pub(crate) fn accumulate(nodes: &[Node], pending: &mut [Option<Tensor>], v: Var, g: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    debug_assert_eq!(g.shape(), nodes[v.0].value.shape());
    match &mut pending[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::ones(&[3]));
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, -4.0]);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[4.0, -8.0]);
        g.zero_grad();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::ones(&[2]));
        let w = g.variable(Tensor::ones(&[2]));
        let p = g.mul(c, w).unwrap();
        let loss = g.sum_all(p);
        g.backward(loss).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(w).unwrap().data(), &[1.0, 1.0]);
    }
}
