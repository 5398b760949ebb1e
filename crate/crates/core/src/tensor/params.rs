use std::collections::HashMap;
use std::sync::Arc;

use super::graph::{Gradients, Graph, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Index of a learnable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Index of a non-learnable state tensor (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct ParamEntry<T> {
    name: String,
    value: Arc<Tensor<T>>,
    grad: Tensor<T>,
}

#[derive(Clone, Debug)]
struct BufferEntry<T> {
    name: String,
    value: Tensor<T>,
}

/// Ordered registry of every learnable tensor and state buffer of a model.
///
/// Names are unique across parameters and buffers, so each tensor appears
/// exactly once and the optimizer sees all of them.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<ParamEntry<T>>,
    buffers: Vec<BufferEntry<T>>,
    names: HashMap<String, ()>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new(), names: HashMap::new() }
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if self.names.insert(name.to_string(), ()).is_some() {
            return Err(Error::Registry(format!("duplicate tensor name `{name}`")));
        }
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.claim(name)?;
        let grad = value.zeros_like();
        self.params.push(ParamEntry { name: name.to_string(), value: Arc::new(value), grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<BufferId> {
        self.claim(name)?;
        self.buffers.push(BufferEntry { name: name.to_string(), value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_buffers(&self) -> usize {
        self.buffers.len()
    }

    /// Total learnable scalar count.
    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access; copies the tensor first if a live graph still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "param `{}` has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Add the parameter gradients of one reverse sweep into the stored grads.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (pid, g) in grads.params() {
            self.params[pid.0].grad.add_assign(g);
        }
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].value
    }

    pub fn buffer_ids(&self) -> impl Iterator<Item = BufferId> {
        (0..self.buffers.len()).map(BufferId)
    }

    pub fn buffer_name(&self, id: BufferId) -> &str {
        &self.buffers[id.0].name
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffers.iter().position(|b| b.name == name).map(BufferId)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| ParamEntry { name: p.name.clone(), value: Arc::new(p.value.cast()), grad: p.grad.cast() })
                .collect(),
            buffers: self.buffers.iter().map(|b| BufferEntry { name: b.name.clone(), value: b.value.cast() }).collect(),
            names: self.names.clone(),
        }
    }
}

/// Forward-pass context: the graph being recorded, the parameter store and
/// the train/eval mode.
pub struct Ctx<'g, 's, T> {
    pub graph: &'g Graph<T>,
    pub store: &'s mut ParamStore<T>,
    pub mode: Mode,
    cache: HashMap<ParamId, Var<'g, T>>,
}

impl<'g, 's, T: Scalar> Ctx<'g, 's, T> {
    pub fn new(graph: &'g Graph<T>, store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        Ctx { graph, store, mode, cache: HashMap::new() }
    }

    /// Graph leaf for a parameter; repeated calls return the same node.
    pub fn p(&mut self, id: ParamId) -> Var<'g, T> {
        if let Some(v) = self.cache.get(&id) {
            return *v;
        }
        let v = self.graph.param_leaf(self.store.shared(id), id);
        self.cache.insert(id, v);
        v
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }
}
