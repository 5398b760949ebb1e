use serde::{Deserialize, Serialize};

use super::{batch_norm, Builder, Init};
use crate::error::Result;
use crate::tensor::{BatchNormStats, BufferId, Ctx, ParamId, Scalar, Var};

/// 3x3 convolution (no bias) followed by batch norm.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub kernel: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
}

impl ConvBn {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, cout: usize) -> Result<Self> {
        Ok(ConvBn {
            kernel: b.param(
                "kernel",
                &[cout, cin, 3, 3],
                Init::KaimingUniform { fan_in: cin * 9, gain: 2f64.sqrt() },
            )?,
            gamma: b.param("bn.gamma", &[cout], Init::Ones)?,
            beta: b.param("bn.beta", &[cout], Init::Zeros)?,
            stats: b.buffer("bn.stats", BatchNormStats::init(cout))?,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let k = cx.p(self.kernel);
        let y = x.conv2d(k, None, 1, 1)?;
        batch_norm(cx, y, self.gamma, self.beta, self.stats)
    }
}

/// Depthwise 3x3 convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct DepthwiseBn {
    pub kernel: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
}

impl DepthwiseBn {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, channels: usize) -> Result<Self> {
        Ok(DepthwiseBn {
            kernel: b.param("kernel", &[channels, 1, 3, 3], Init::KaimingUniform { fan_in: 9, gain: 2f64.sqrt() })?,
            gamma: b.param("bn.gamma", &[channels], Init::Ones)?,
            beta: b.param("bn.beta", &[channels], Init::Zeros)?,
            stats: b.buffer("bn.stats", BatchNormStats::init(channels))?,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let k = cx.p(self.kernel);
        let y = x.depthwise_conv2d(k, 1, 1)?;
        Ok(batch_norm(cx, y, self.gamma, self.beta, self.stats)?.relu())
    }
}

/// Whether a conv block halves (encoder) or doubles (decoder) resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Down,
    Up,
}

/// Two `conv3x3 -> BN -> ReLU` stages, then 2x2 max pool or 2x bilinear
/// upsampling.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub kind: BlockKind,
    pub stages: [ConvBn; 2],
}

impl ConvBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, kind: BlockKind, cin: usize, cout: usize) -> Result<Self> {
        let s0 = ConvBn::new(&mut b.scope("conv0"), cin, cout)?;
        let s1 = ConvBn::new(&mut b.scope("conv1"), cout, cout)?;
        Ok(ConvBlock { kind, stages: [s0, s1] })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut h = x;
        for s in &self.stages {
            h = s.forward(cx, h)?.relu();
        }
        match self.kind {
            BlockKind::Down => h.maxpool2d(2),
            BlockKind::Up => h.upsample_bilinear2x(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{away_from_zero, grad_check_params, Coords};
    use crate::tensor::{Graph, Mode, ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(kind: BlockKind, cin: usize, cout: usize) -> (ParamStore<f64>, ConvBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let blk = ConvBlock::new(&mut Builder::new(&mut store, &mut rng).scope("c1"), kind, cin, cout).unwrap();
        (store, blk)
    }

    fn input(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_f64(shape, &(0..n).map(|i| ((i * 7 + 3) as f64 * 0.71).sin()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn shapes_and_names() {
        let (mut store, down) = build(BlockKind::Down, 3, 4);
        assert_eq!(store.name(down.stages[0].kernel), "c1.conv0.kernel");
        assert_eq!(store.find_buffer("c1.conv1.bn.stats"), Some(down.stages[1].stats));
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let y = down.forward(&mut cx, g.input(input(&[2, 3, 8, 6]))).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 4, 3]);

        let (mut store, up) = build(BlockKind::Up, 4, 2);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let y = up.forward(&mut cx, g.input(input(&[1, 4, 3, 5]))).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 6, 10]);
    }

    #[test]
    fn outputs_are_nonnegative_before_upsampling() {
        // max-pool of ReLU output; bilinear weights are convex so Up is too
        for kind in [BlockKind::Down, BlockKind::Up] {
            let (mut store, blk) = build(kind, 2, 3);
            let g = Graph::new();
            let mut cx = Ctx::new(&g, &mut store, Mode::Train);
            let y = blk.forward(&mut cx, g.input(input(&[2, 2, 4, 4]))).unwrap();
            assert!(y.value().data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn train_updates_running_stats_eval_does_not() {
        let (mut store, blk) = build(BlockKind::Down, 2, 2);
        let before = store.buffer(blk.stages[0].stats).clone();
        {
            let g = Graph::no_grad();
            let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
            blk.forward(&mut cx, g.constant(input(&[1, 2, 4, 4]))).unwrap();
        }
        assert_eq!(store.buffer(blk.stages[0].stats), &before);
        {
            let g = Graph::no_grad();
            let mut cx = Ctx::new(&g, &mut store, Mode::Train);
            blk.forward(&mut cx, g.constant(input(&[1, 2, 4, 4]))).unwrap();
        }
        assert_ne!(store.buffer(blk.stages[0].stats), &before);
    }

    #[test]
    fn gradient_check_eval_mode() {
        // eval mode keeps BN affine with fixed stats, so the function is smooth
        // away from ReLU kinks and max-pool ties
        let (mut store, blk) = build(BlockKind::Up, 2, 2);
        let x = away_from_zero(&input(&[1, 2, 3, 3]));
        let rep = grad_check_params(
            &mut store,
            Mode::Eval,
            |cx| {
                let xi = cx.graph.constant(x.clone());
                Ok(blk.forward(cx, xi)?.sum())
            },
            1e-6,
            Coords::All,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-5, "{rep:?}");
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let (mut store, blk) = build(BlockKind::Down, 2, 3);
        for s in &blk.stages {
            let shape = store.value(s.kernel).shape().to_vec();
            store.set(s.kernel, Tensor::zeros(&shape)).unwrap();
        }
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let y = blk.forward(&mut cx, g.input(input(&[2, 2, 4, 4]))).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_compositional_replay() {
        let (mut store, blk) = build(BlockKind::Down, 2, 3);
        let x = input(&[2, 2, 6, 4]);
        let mut replay_store = store.clone();
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let y = blk.forward(&mut cx, g.input(x.clone())).unwrap().value();

        let g2 = Graph::new();
        let mut cx = Ctx::new(&g2, &mut replay_store, Mode::Train);
        let mut h = g2.input(x);
        for s in &blk.stages {
            let k = cx.p(s.kernel);
            let (ga, be) = (cx.p(s.gamma), cx.p(s.beta));
            h = h.conv2d(k, None, 1, 1).unwrap();
            h = h.batch_norm2d(ga, be, cx.store.buffer_mut(s.stats), true).unwrap().relu();
        }
        let want = h.maxpool2d(2).unwrap().value();
        assert_eq!(*y, *want);
    }

    #[test]
    fn down_then_up_restores_extents() {
        let (mut store, down) = build(BlockKind::Down, 2, 3);
        let up = ConvBlock::new(
            &mut Builder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).scope("d"),
            BlockKind::Up,
            3,
            2,
        )
        .unwrap();
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let h = down.forward(&mut cx, g.input(input(&[1, 2, 8, 12]))).unwrap();
        assert_eq!(up.forward(&mut cx, h).unwrap().shape(), vec![1, 2, 8, 12]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let (mut store, blk) = build(BlockKind::Down, 3, 4);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        assert!(matches!(blk.forward(&mut cx, g.input(input(&[1, 2, 4, 4]))), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn depthwise_bn_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DepthwiseBn::new(&mut Builder::new(&mut store, &mut rng), 3).unwrap();
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let y = d.forward(&mut cx, g.input(input(&[2, 3, 4, 4]))).unwrap();
        assert_eq!(y.shape(), vec![2, 3, 4, 4]);
    }
}
