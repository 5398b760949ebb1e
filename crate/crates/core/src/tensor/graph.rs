use std::cell::{Cell, Ref, RefCell};
use std::sync::Arc;

use super::params::ParamId;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Local vector-Jacobian product of one recorded operation.
///
/// Receives the gradient of the output and a mask telling which parents
/// need a gradient; returns one entry per parent, in parent order.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Tape of executed operations, in execution (hence topological) order.
///
/// A graph is single-writer: build it on one thread, call
/// [`Graph::backward`], then drop it.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    macs: Cell<u64>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), grad_enabled: true, macs: Cell::new(0) }
    }

    /// A graph that never records local gradients (inference).
    pub fn no_grad() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulate operations executed so far by counted ops.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// A leaf that receives a gradient.
    pub fn input(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Arc::new(t),
            parents: vec![],
            backward: None,
            requires_grad: self.grad_enabled,
            param: None,
        })
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push(Node { value: Arc::new(t), parents: vec![], backward: None, requires_grad: false, param: None })
    }

    pub(crate) fn param_leaf(&self, t: Arc<Tensor<T>>, pid: ParamId) -> Var<'_, T> {
        self.push(Node {
            value: t,
            parents: vec![],
            backward: None,
            requires_grad: self.grad_enabled,
            param: Some(pid),
        })
    }

    /// Record the result of a custom operation.
    ///
    /// `backward` is kept only when some parent requires a gradient.
    pub fn record<'g, F>(&'g self, value: Tensor<T>, parents: &[Var<'g, T>], backward: F) -> Var<'g, T>
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(Node {
            value: Arc::new(value),
            parents: ids,
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            requires_grad,
            param: None,
        })
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// The graph is retained, so calling this twice and accumulating both
    /// results into a [`super::ParamStore`] doubles the stored gradients.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads, params: vec![] });
        }
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(back) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let local = back(&g, &needs);
            debug_assert_eq!(local.len(), node.parents.len());
            for ((&p, lg), &need) in node.parents.iter().zip(local).zip(&needs) {
                let Some(lg) = lg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(lg.shape(), nodes[p].value.shape(), "local grad shape");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&lg),
                    slot @ None => *slot = Some(lg),
                }
            }
        }
        let params = nodes.iter().enumerate().filter_map(|(i, n)| n.param.map(|p| (i, p))).collect();
        Ok(Gradients { grads, params })
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Borrow the value without bumping the reference count.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        let nodes: Ref<'_, Vec<Node<T>>> = self.graph.nodes.borrow();
        f(&nodes[self.id].value)
    }
}

/// Result of one reverse sweep: gradients of every leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, ParamId)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf, `None` if it did not influence the loss.
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a leaf, zeros if it did not influence the loss.
    pub fn wrt_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }

    /// `(param, gradient)` for every parameter leaf that received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params.iter().filter_map(|&(node, pid)| self.grads[node].as_ref().map(|g| (pid, g)))
    }
}
