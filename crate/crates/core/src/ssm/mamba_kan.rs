use serde::{Deserialize, Serialize};

use super::Ssm;
use crate::error::{dim_err, Result};
use crate::kan::{KanBlock, PatchEmbed, SplineGrid};
use crate::nn::{
    project_image, tokens_to_image, Activation, ActivationSlot, Builder, Init, SlotKind, SpatialAttention,
};
use crate::tensor::{Ctx, ParamId, Scalar, Var};

/// Settings shared by every Mamba block flavour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MambaSettings {
    pub state: usize,
    pub spline: SplineGrid,
    pub kan_base: Activation,
    /// Activation in the main path (after the token mixer).
    pub main: SlotKind,
    /// Activation on the parallel skip branch.
    pub gate: SlotKind,
    pub boa_members: Vec<Activation>,
}

impl Default for MambaSettings {
    fn default() -> Self {
        MambaSettings {
            state: 8,
            spline: SplineGrid::default(),
            kan_base: Activation::Silu,
            main: SlotKind::Boa,
            gate: SlotKind::Boa,
            boa_members: crate::nn::BOA_MEMBERS.to_vec(),
        }
    }
}

/// Which of the three summands of the block output are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchMask {
    pub main: bool,
    pub skip: bool,
    pub gate: bool,
}

impl Default for BranchMask {
    fn default() -> Self {
        BranchMask { main: true, skip: true, gate: true }
    }
}

/// The three summands of a Mamba block output.
#[derive(Clone, Copy, Debug)]
pub struct Branches<'g, T> {
    pub main: Var<'g, T>,
    pub skip: Var<'g, T>,
    pub gate: Var<'g, T>,
}

impl<'g, T: Scalar> Branches<'g, T> {
    pub fn combine(&self, mask: BranchMask) -> Result<Var<'g, T>> {
        let parts: Vec<Var<'g, T>> = [(mask.main, self.main), (mask.skip, self.skip), (mask.gate, self.gate)]
            .into_iter()
            .filter_map(|(keep, v)| keep.then_some(v))
            .collect();
        let Some((&first, rest)) = parts.split_first() else {
            return Ok(self.main.scale(0.0));
        };
        rest.iter().try_fold(first, |acc, &v| acc.add(v))
    }
}

/// Resampling of the block input onto the token grid: 2x2 average pooling
/// and a 1x1 projection when the channel count changes.
#[derive(Clone, Debug)]
pub struct Resample {
    pub proj: Option<ParamId>,
    pub pool: bool,
}

impl Resample {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, cout: usize, pool: bool) -> Result<Self> {
        let proj = (cin != cout)
            .then(|| b.param("skip_proj", &[cout, cin], Init::KaimingUniform { fan_in: cin, gain: 1.0 }))
            .transpose()?;
        Ok(Resample { proj, pool })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let x = if self.pool { x.avgpool2x2()? } else { x };
        match self.proj {
            Some(w) => project_image(cx, x, w),
            None => Ok(x),
        }
    }
}

/// Patch embedding, KAN block, bag of activations, selective scan and
/// spatial attention, summed with the resampled input and a gated copy of
/// it. Halves the spatial extents.
#[derive(Clone, Debug)]
pub struct MambaKanBlock {
    pub embed: PatchEmbed,
    pub kanb: KanBlock,
    pub boa_main: ActivationSlot,
    pub ssm: Ssm,
    pub attn: SpatialAttention,
    pub out_proj: ParamId,
    pub resample: Resample,
    pub boa_gate: ActivationSlot,
    pub mask: BranchMask,
    pub cin: usize,
    pub dim: usize,
}

impl MambaKanBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, dim: usize, cfg: &MambaSettings) -> Result<Self> {
        Ok(MambaKanBlock {
            embed: PatchEmbed::new(&mut b.scope("embed"), cin, dim)?,
            kanb: KanBlock::new(&mut b.scope("kanb"), dim, cfg.spline, cfg.kan_base)?,
            boa_main: ActivationSlot::new(&mut b.scope("boa_main"), cfg.main, &cfg.boa_members)?,
            ssm: Ssm::new(&mut b.scope("ssm"), dim, cfg.state)?,
            attn: SpatialAttention::new(&mut b.scope("attn"))?,
            out_proj: b.param("out_proj", &[dim, dim], Init::KaimingUniform { fan_in: dim, gain: 1.0 })?,
            resample: Resample::new(b, cin, dim, true)?,
            boa_gate: ActivationSlot::new(&mut b.scope("boa_gate"), cfg.gate, &cfg.boa_members)?,
            mask: BranchMask::default(),
            cin,
            dim,
        })
    }

    pub fn branches<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Branches<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.cin {
            return dim_err(format!("Mamba-KAN block expects [N, {}, H, W], got {s:?}", self.cin));
        }
        let tk = self.embed.forward(cx, x)?;
        let t = self.kanb.forward(cx, tk.tokens, tk.h, tk.w)?;
        let t = self.boa_main.forward(cx, t)?;
        let t = self.ssm.forward(cx, t)?;
        let img = self.attn.forward(cx, tokens_to_image(t, tk.h, tk.w)?)?;
        let main = project_image(cx, img, self.out_proj)?;
        let skip = self.resample.forward(cx, x)?;
        let gate = self.boa_gate.forward(cx, skip)?;
        Ok(Branches { main, skip, gate })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.branches(cx, x)?.combine(self.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::scan_core;
    use crate::tensor::gradcheck::{grad_check_params, Coords};
    use crate::tensor::{Graph, Mode, ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(cin: usize, dim: usize) -> (ParamStore<f64>, MambaKanBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = MambaSettings { state: 3, ..Default::default() };
        let blk = MambaKanBlock::new(&mut Builder::new(&mut store, &mut rng).scope("m1"), cin, dim, &cfg).unwrap();
        (store, blk)
    }

    fn input(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_f64(shape, &(0..n).map(|i| ((i * 11 + 2) as f64 * 0.29).sin()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn halves_extents_and_maps_channels() {
        let (mut store, blk) = build(4, 6);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let y = blk.forward(&mut cx, g.input(input(&[2, 4, 8, 6]))).unwrap();
        assert_eq!(y.shape(), vec![2, 6, 4, 3]);
        let y = blk.forward(&mut cx, g.input(input(&[1, 4, 5, 7]))).unwrap();
        assert_eq!(y.shape(), vec![1, 6, 3, 4]);
        assert!(blk.forward(&mut cx, g.input(input(&[1, 3, 4, 4]))).is_err());
    }

    #[test]
    fn forced_zero_main_path_leaves_skip_and_gate() {
        let (mut store, blk) = build(4, 4);
        assert!(blk.resample.proj.is_none());
        store.set(blk.out_proj, Tensor::zeros(&[4, 4])).unwrap();
        let ActivationSlot::Boa(gate) = &blk.boa_gate else { panic!() };
        store.set(gate.alphas, Tensor::from_f64(&[5], &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let x = input(&[1, 4, 4, 4]).map(f64::abs);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let xi = g.input(x.clone());
        let y = blk.forward(&mut cx, xi).unwrap();
        let pooled = xi.avgpool2x2().unwrap().value();
        for (a, b) in y.value().data().iter().zip(pooled.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_the_sum_of_its_branches() {
        let (mut store, mut blk) = build(3, 4);
        let x = input(&[1, 3, 8, 8]);
        let run = |store: &mut ParamStore<f64>, blk: &MambaKanBlock| {
            let g = Graph::no_grad();
            let mut cx = Ctx::new(&g, store, Mode::Eval);
            let br = blk.branches(&mut cx, g.constant(x.clone())).unwrap();
            let y = br.combine(blk.mask).unwrap().value();
            ((*y).clone(), [(*br.main.value()).clone(), (*br.skip.value()).clone(), (*br.gate.value()).clone()])
        };
        let (full, parts) = run(&mut store, &blk);
        let masks = [
            BranchMask { main: false, ..Default::default() },
            BranchMask { skip: false, ..Default::default() },
            BranchMask { gate: false, ..Default::default() },
        ];
        for (k, m) in masks.into_iter().enumerate() {
            blk.mask = m;
            let (dropped, _) = run(&mut store, &blk);
            for i in 0..full.len() {
                assert!((full.data()[i] - dropped.data()[i] - parts[k].data()[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matches_six_stage_replay() {
        let (mut store, blk) = build(4, 4);
        let mut replay = store.clone();
        let x = input(&[1, 4, 8, 8]);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let y = blk.forward(&mut cx, g.input(x.clone())).unwrap().value();

        let g2 = Graph::new();
        let mut cx = Ctx::new(&g2, &mut replay, Mode::Train);
        let xi = g2.input(x);
        let k = cx.p(blk.embed.kernel);
        let conv = xi.conv2d(k, None, 2, 1).unwrap();
        let (lg, lb) = (cx.p(blk.embed.norm.gamma), cx.p(blk.embed.norm.beta));
        let toks = conv.reshape(&[1, 4, 16]).unwrap().transpose_last2().unwrap().layer_norm(lg, lb).unwrap();
        let t = blk.kanb.forward(&mut cx, toks, 4, 4).unwrap();
        let ActivationSlot::Boa(bm) = &blk.boa_main else { panic!() };
        let t = crate::nn::boa(t, cx.p(bm.alphas), &bm.members).unwrap();
        let p = blk.ssm.inputs(&mut cx, t).unwrap();
        let t = scan_core(t, p.delta, p.a, p.b, p.c, p.d).unwrap();
        let img = t.transpose_last2().unwrap().reshape(&[1, 4, 4, 4]).unwrap();
        let img = blk.attn.forward(&mut cx, img).unwrap();
        let w = cx.p(blk.out_proj);
        let main = img.reshape(&[1, 4, 16]).unwrap().transpose_last2().unwrap().linear(w, None).unwrap();
        let main = main.transpose_last2().unwrap().reshape(&[1, 4, 4, 4]).unwrap();
        let skip = xi.avgpool2x2().unwrap();
        let ActivationSlot::Boa(bg) = &blk.boa_gate else { panic!() };
        let gate = crate::nn::boa(skip, cx.p(bg.alphas), &bg.members).unwrap();
        let want = main.add(skip).unwrap().add(gate).unwrap().value();
        assert_eq!(*y, *want);
    }

    #[test]
    fn gradient_check_end_to_end() {
        let (mut store, blk) = build(2, 3);
        let x = input(&[1, 2, 4, 4]);
        let rep = grad_check_params(
            &mut store,
            Mode::Eval,
            |cx| {
                let xi = cx.graph.constant(x.clone());
                Ok(blk.forward(cx, xi)?.tanh().sum())
            },
            1e-6,
            Coords::All,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }
}
