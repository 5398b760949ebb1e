//! The assembled segmentation network, its configuration, complexity
//! counters and checkpoint format.

mod checkpoint;
mod config;
mod net;

pub use checkpoint::{Checkpoint, Manifest, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, NormPlacement, Variant};
pub use net::{Features, MambaStage, Net, TokenStage};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::Builder;
use crate::tensor::{Ctx, Graph, Mode, ParamStore, Scalar, Tensor, Var};

/// A network together with its parameter registry.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub net: Net,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Build and initialize from `cfg.seed`.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = Net::new(&mut Builder::new(&mut store, &mut rng), cfg)?;
        Ok(Model { cfg: cfg.clone(), net, store })
    }

    pub fn forward<'g>(&mut self, graph: &'g Graph<T>, mode: Mode, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut cx = Ctx::new(graph, &mut self.store, mode);
        self.net.forward(&mut cx, x)
    }

    /// Eval-mode logits without recording gradients.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        let xi = g.constant(x.clone());
        let y = self.forward(&g, Mode::Eval, xi)?;
        Ok((*y.value()).clone())
    }

    /// Number of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.store.count_scalars()
    }

    /// Multiply-accumulates of one eval forward pass on an input of `shape`:
    /// convolutions `N*O*C*kh*kw*H'*W'`, depthwise `N*C*kh*kw*H'*W'`, matmuls
    /// `m*k*n`, and `3*N*L*E*S` per selective scan. Elementwise work is not
    /// counted.
    pub fn count_flops(&mut self, shape: &[usize]) -> Result<u64> {
        let g = Graph::no_grad();
        let xi = g.constant(Tensor::zeros(shape));
        self.forward(&g, Mode::Eval, xi)?;
        Ok(g.macs())
    }

    /// The same model at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { cfg: self.cfg.clone(), net: self.net.clone(), store: self.store.cast() }
    }
}
