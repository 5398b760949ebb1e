use super::graph::Var;
use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Running statistics of a batch-norm layer, stored as one `[2, C]` buffer:
/// row 0 is the running mean, row 1 the running (unbiased) variance.
pub struct BatchNormStats;

impl BatchNormStats {
    pub fn init<T: Scalar>(channels: usize) -> Tensor<T> {
        let mut t = Tensor::zeros(&[2, channels]);
        t.data_mut()[channels..].iter_mut().for_each(|v| *v = T::one());
        t
    }
}

/// `dx = (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) / sigma` for one
/// group of `m` normalized values.
#[inline]
fn norm_backward_group<T: Scalar>(dxhat: &[T], xhat: &[T], inv_sigma: T, out: &mut [T]) {
    let m = T::of(dxhat.len() as f64);
    let mean_d: T = dxhat.iter().copied().sum::<T>() / m;
    let mean_dx: T = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / m;
    for ((o, &d), &xh) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = (d - mean_d - xh * mean_dx) * inv_sigma;
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Batch normalization over `[N, H, W]` for each channel of `[N, C, H, W]`.
    ///
    /// In training mode normalizes with batch statistics and folds them into
    /// `stats` with momentum 0.1; in eval mode normalizes with `stats`.
    pub fn batch_norm2d(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        stats: &mut Tensor<T>,
        train: bool,
    ) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 {
            return dim_err(format!("batch_norm2d on {s:?}"));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [c] || bv.shape() != [c] || stats.shape() != [2, c] {
            return dim_err(format!(
                "batch_norm2d affine {:?}/{:?}/{:?} for {c} channels",
                gv.shape(),
                bv.shape(),
                stats.shape()
            ));
        }
        let m = n * hw;
        let eps = T::of(BN_EPS);
        let xd = x.data();
        let (mean, inv_sigma): (Vec<T>, Vec<T>) = if train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for b in 0..n {
                    acc += xd[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
                let mu = acc / T::of(m as f64);
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * hw..][..hw] {
                        sq += (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = sq / T::of(m as f64);
            }
            let mom = T::of(BN_MOMENTUM);
            let unbias = if m > 1 { T::of(m as f64 / (m - 1) as f64) } else { T::one() };
            let sd = stats.data_mut();
            for ch in 0..c {
                sd[ch] = (T::one() - mom) * sd[ch] + mom * mean[ch];
                sd[c + ch] = (T::one() - mom) * sd[c + ch] + mom * var[ch] * unbias;
            }
            let inv = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        } else {
            let sd = stats.data();
            (sd[..c].to_vec(), sd[c..].iter().map(|&v| T::one() / (v + eps).sqrt()).collect())
        };
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let (mu, is, ga, be) = (mean[ch], inv_sigma[ch], gv.data()[ch], bv.data()[ch]);
                for i in off..off + hw {
                    let h = (xd[i] - mu) * is;
                    xhat[i] = h;
                    out[i] = ga * h + be;
                }
            }
        }
        Ok(self.graph().record(Tensor::new(&s, out)?, &[self, gamma, beta], move |go, needs| {
            let gy = go.data();
            let gd = gv.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        dgamma[ch] += gy[i] * xhat[i];
                        dbeta[ch] += gy[i];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); gy.len()];
                if train {
                    let mut dxh = vec![T::zero(); m];
                    let mut xh = vec![T::zero(); m];
                    let mut tmp = vec![T::zero(); m];
                    for ch in 0..c {
                        for b in 0..n {
                            let off = (b * c + ch) * hw;
                            for i in 0..hw {
                                dxh[b * hw + i] = gy[off + i] * gd[ch];
                                xh[b * hw + i] = xhat[off + i];
                            }
                        }
                        norm_backward_group(&dxh, &xh, inv_sigma[ch], &mut tmp);
                        for b in 0..n {
                            let off = (b * c + ch) * hw;
                            dx[off..off + hw].copy_from_slice(&tmp[b * hw..(b + 1) * hw]);
                        }
                    }
                } else {
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            let f = gd[ch] * inv_sigma[ch];
                            for i in off..off + hw {
                                dx[i] = gy[i] * f;
                            }
                        }
                    }
                }
                Tensor::new(&s, dx).expect("shape")
            });
            vec![
                dx,
                needs[1].then(|| Tensor::new(&[c], dgamma).expect("shape")),
                needs[2].then(|| Tensor::new(&[c], dbeta).expect("shape")),
            ]
        }))
    }

    /// Layer normalization over the last axis with affine `gamma`/`beta`.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        let Some(&e) = s.last() else {
            return dim_err("layer_norm on a scalar");
        };
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [e] || bv.shape() != [e] || e == 0 {
            return dim_err(format!("layer_norm affine {:?}/{:?} for width {e}", gv.shape(), bv.shape()));
        }
        let eps = T::of(LN_EPS);
        let rows = x.len() / e;
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x.data()[r * e..(r + 1) * e];
            let mu = row.iter().copied().sum::<T>() / T::of(e as f64);
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / T::of(e as f64);
            let is = T::one() / (var + eps).sqrt();
            inv[r] = is;
            for i in 0..e {
                let h = (row[i] - mu) * is;
                xhat[r * e + i] = h;
                out[r * e + i] = gv.data()[i] * h + bv.data()[i];
            }
        }
        Ok(self.graph().record(Tensor::new(&s, out)?, &[self, gamma, beta], move |go, needs| {
            let gy = go.data();
            let mut dgamma = vec![T::zero(); e];
            let mut dbeta = vec![T::zero(); e];
            for r in 0..rows {
                for i in 0..e {
                    dgamma[i] += gy[r * e + i] * xhat[r * e + i];
                    dbeta[i] += gy[r * e + i];
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); gy.len()];
                let mut dxh = vec![T::zero(); e];
                for r in 0..rows {
                    for i in 0..e {
                        dxh[i] = gy[r * e + i] * gv.data()[i];
                    }
                    norm_backward_group(&dxh, &xhat[r * e..(r + 1) * e], inv[r], &mut dx[r * e..(r + 1) * e]);
                }
                Tensor::new(&s, dx).expect("shape")
            });
            vec![
                dx,
                needs[1].then(|| Tensor::new(&[e], dgamma).expect("shape")),
                needs[2].then(|| Tensor::new(&[e], dbeta).expect("shape")),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;
    use crate::tensor::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    fn channel_stats(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, hw) = (t.shape()[0], t.shape()[1], t.shape()[2] * t.shape()[3]);
        let vals: Vec<f64> = (0..n).flat_map(|b| t.data()[(b * c + ch) * hw..][..hw].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_standardizes_and_updates_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = rand_t(&mut rng, &[3, 2, 4, 5], -2.0, 5.0);
        let g = Graph::<f64>::new();
        let mut stats = BatchNormStats::init::<f64>(2);
        let y = g
            .input(x.clone())
            .batch_norm2d(g.constant(Tensor::ones(&[2])), g.constant(Tensor::zeros(&[2])), &mut stats, true)
            .unwrap();
        for ch in 0..2 {
            let (m, v) = channel_stats(&y.value(), ch);
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
            // two-pass oracle for the running update
            let (bm, bvar) = channel_stats(&x, ch);
            let cnt = 60.0;
            assert!((stats.data()[ch] - 0.1 * bm).abs() < 1e-12);
            assert!((stats.data()[2 + ch] - (0.9 + 0.1 * bvar * cnt / (cnt - 1.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_matches_explicit_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_t(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
        let gamma = rand_t(&mut rng, &[3], 0.5, 1.5);
        let beta = rand_t(&mut rng, &[3], -0.5, 0.5);
        let g = Graph::<f64>::new();
        let mut stats = BatchNormStats::init::<f64>(3);
        let y = g
            .input(x.clone())
            .batch_norm2d(g.constant(gamma.clone()), g.constant(beta.clone()), &mut stats, true)
            .unwrap();
        for ch in 0..3 {
            let (m, v) = channel_stats(&x, ch);
            for b in 0..2 {
                for i in 0..9 {
                    let idx = (b * 3 + ch) * 9 + i;
                    let want = gamma.data()[ch] * (x.data()[idx] - m) / (v + BN_EPS).sqrt() + beta.data()[ch];
                    assert!((y.value().data()[idx] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = rand_t(&mut rng, &[1, 2, 3, 3], -1.0, 1.0);
        let g = Graph::<f64>::new();
        let mut stats = BatchNormStats::init::<f64>(2);
        let y = g
            .input(x.clone())
            .batch_norm2d(g.constant(Tensor::ones(&[2])), g.constant(Tensor::zeros(&[2])), &mut stats, false)
            .unwrap();
        assert!(y.value().max_abs_diff(&x) < 1e-5);
        assert_eq!(stats, BatchNormStats::init::<f64>(2));
    }

    #[test]
    fn zero_variance_channel_is_finite() {
        let g = Graph::<f64>::new();
        let mut stats = BatchNormStats::init::<f64>(1);
        let y = g
            .input(Tensor::full(&[2, 1, 2, 2], 3.0))
            .batch_norm2d(g.constant(Tensor::ones(&[1])), g.constant(Tensor::zeros(&[1])), &mut stats, true)
            .unwrap();
        assert!(y.value().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_cases() {
        let g = Graph::<f64>::new();
        let beta = Tensor::from_f64(&[3], &[0.1, -0.2, 0.3]).unwrap();
        let y = g
            .input(Tensor::full(&[2, 3], 4.0))
            .layer_norm(g.constant(Tensor::ones(&[3])), g.constant(beta.clone()))
            .unwrap();
        assert_eq!(y.value().data(), &[0.1, -0.2, 0.3, 0.1, -0.2, 0.3]);

        // variance 1 - eps: standardized under this layer's own definition
        let s = (2.0 * (1.0 - LN_EPS)).sqrt();
        let std_tok = Tensor::from_f64(&[1, 4], &[-s, 0.0, 0.0, s]).unwrap();
        let y = g
            .input(std_tok.clone())
            .layer_norm(g.constant(Tensor::ones(&[4])), g.constant(Tensor::zeros(&[4])))
            .unwrap();
        assert!(y.value().max_abs_diff(&std_tok) < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_t(&mut rng, &[5], -2.0, 2.0);
        let y = g.input(x.clone()).layer_norm(g.constant(Tensor::ones(&[5])), g.constant(Tensor::zeros(&[5]))).unwrap();
        let mean = x.data().iter().sum::<f64>() / 5.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        for (o, v) in y.value().data().iter().zip(x.data()) {
            assert!((o - (v - mean) / (var + LN_EPS).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn norms_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let ins = vec![
            rand_t(&mut rng, &[2, 3, 3, 2], -1.0, 1.0),
            rand_t(&mut rng, &[3], 0.5, 1.5),
            rand_t(&mut rng, &[3], -0.5, 0.5),
            rand_t(&mut rng, &[2, 3, 3, 2], -1.0, 1.0),
        ];
        for train in [true, false] {
            let err = grad_check(
                |_, v| {
                    let mut stats = BatchNormStats::init::<f64>(3);
                    let y = v[0].batch_norm2d(v[1], v[2], &mut stats, train)?;
                    Ok(y.mul(v[3])?.tanh().sum())
                },
                &ins,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-7, "bn train={train}: {err}");
        }
        let ins = vec![
            rand_t(&mut rng, &[3, 6], -1.0, 1.0),
            rand_t(&mut rng, &[6], 0.5, 1.5),
            rand_t(&mut rng, &[6], -0.5, 0.5),
            rand_t(&mut rng, &[3, 6], -1.0, 1.0),
        ];
        let err = grad_check(|_, v| Ok(v[0].layer_norm(v[1], v[2])?.mul(v[3])?.sum()), &ins, 1e-5).unwrap();
        assert!(err < 1e-7, "ln {err}");
    }
}
