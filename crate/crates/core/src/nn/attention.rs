use super::{Builder, Init};
use crate::error::Result;
use crate::tensor::{Ctx, ParamId, Scalar, Var};

pub const ATTN_KERNEL: usize = 7;

/// Spatial attention gate: `F * sigmoid(conv7x7([mean_c F, max_c F]))`.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl SpatialAttention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>) -> Result<Self> {
        let fan_in = 2 * ATTN_KERNEL * ATTN_KERNEL;
        Ok(SpatialAttention {
            kernel: b.param("kernel", &[1, 2, ATTN_KERNEL, ATTN_KERNEL], Init::KaimingUniform { fan_in, gain: 1.0 })?,
            bias: b.param("bias", &[1], Init::Zeros)?,
        })
    }

    /// The `[N, 1, H, W]` gate in `(0, 1)`.
    pub fn gate<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, f: Var<'g, T>) -> Result<Var<'g, T>> {
        let pooled = Var::concat_channels(&[f.channel_mean()?, f.channel_max()?])?;
        let (k, b) = (cx.p(self.kernel), cx.p(self.bias));
        Ok(pooled.conv2d(k, Some(b), 1, ATTN_KERNEL / 2)?.sigmoid())
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, f: Var<'g, T>) -> Result<Var<'g, T>> {
        let g = self.gate(cx, f)?;
        f.mul(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check_params, Coords};
    use crate::tensor::{Graph, Mode, ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (ParamStore<f64>, SpatialAttention) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let att = SpatialAttention::new(&mut Builder::new(&mut store, &mut rng).scope("att")).unwrap();
        (store, att)
    }

    #[test]
    fn zero_kernel_halves_the_input() {
        let (mut store, att) = fixture();
        store.set(att.kernel, Tensor::zeros(&[1, 2, 7, 7])).unwrap();
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let x = Tensor::from_f64(&[1, 2, 2, 2], &[1.0, -2.0, 3.0, 4.0, 0.5, 0.0, -1.0, 8.0]).unwrap();
        let y = att.forward(&mut cx, g.input(x.clone())).unwrap();
        for (a, b) in y.value().data().iter().zip(x.data()) {
            assert_eq!(*a, b * 0.5);
        }
    }

    #[test]
    fn gate_matches_hand_computation() {
        // single pixel: only the centre tap of the kernel sees data
        let (mut store, att) = fixture();
        let mut k = Tensor::<f64>::zeros(&[1, 2, 7, 7]);
        k.data_mut()[24] = 0.5; // mean channel centre
        k.data_mut()[49 + 24] = -1.0; // max channel centre
        store.set(att.kernel, k).unwrap();
        store.set(att.bias, Tensor::from_f64(&[1], &[0.25]).unwrap()).unwrap();
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let x = Tensor::from_f64(&[1, 3, 1, 1], &[1.0, 2.0, 6.0]).unwrap();
        let gate = att.gate(&mut cx, g.input(x)).unwrap().value().item();
        let z: f64 = 0.5 * 3.0 - 6.0 + 0.25;
        assert!((gate - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[1, 3, 2, 2], 1.5));
        assert!(x.channel_mean().unwrap().value().data().iter().all(|&v| v == 1.5));
        assert!(x.channel_max().unwrap().value().data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn matches_step_by_step_oracle() {
        let (mut store, att) = fixture();
        let (h, w) = (8usize, 8usize);
        let xs: Vec<f64> = (0..3 * h * w).map(|i| ((i * 13 % 17) as f64 * 0.53).cos() * 2.0).collect();
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let y = att.forward(&mut cx, g.input(Tensor::from_f64(&[1, 3, h, w], &xs).unwrap())).unwrap();
        let k = store.value(att.kernel).data().to_vec();
        let b = store.value(att.bias).item();
        let px = |c: usize, i: usize, j: usize| xs[(c * h + i) * w + j];
        let mut pooled = vec![[0.0f64; 2]; h * w];
        for i in 0..h {
            for j in 0..w {
                let v: Vec<f64> = (0..3).map(|c| px(c, i, j)).collect();
                pooled[i * w + j] = [v.iter().sum::<f64>() / 3.0, v.iter().cloned().fold(f64::MIN, f64::max)];
            }
        }
        for i in 0..h {
            for j in 0..w {
                let mut z = b;
                for c in 0..2 {
                    for di in 0..7 {
                        for dj in 0..7 {
                            let (ii, jj) = (i as isize + di as isize - 3, j as isize + dj as isize - 3);
                            if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                z += k[(c * 7 + di) * 7 + dj] * pooled[ii as usize * w + jj as usize][c];
                            }
                        }
                    }
                }
                let gate = 1.0 / (1.0 + (-z).exp());
                for c in 0..3 {
                    let got = y.value().data()[(c * h + i) * w + j];
                    assert!((got - px(c, i, j) * gate).abs() < 1e-10);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn output_never_exceeds_input(vals in proptest::collection::vec(-10.0f64..10.0, 2 * 3 * 3)) {
            let (mut store, att) = fixture();
            let g = Graph::new();
            let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
            let x = Tensor::from_f64(&[1, 2, 3, 3], &vals).unwrap();
            let y = att.forward(&mut cx, g.input(x)).unwrap();
            for (o, i) in y.value().data().iter().zip(&vals) {
                proptest::prop_assert!(o.abs() <= i.abs());
            }
        }
    }

    #[test]
    fn gradient_check() {
        let (mut store, att) = fixture();
        let x = Tensor::from_f64(&[1, 2, 3, 3], &(0..18).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        let rep = grad_check_params(
            &mut store,
            Mode::Train,
            |cx| {
                let xi = cx.graph.constant(x.clone());
                Ok(att.forward(cx, xi)?.sum())
            },
            1e-6,
            Coords::All,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-6, "{rep:?}");
    }
}
