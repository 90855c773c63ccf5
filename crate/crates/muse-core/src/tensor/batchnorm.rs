//! Per-channel batch normalization over [N,C,H,W].

use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};

fn check_bn_shapes<E: Elem>(
    op: &'static str,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(op, format!("expected [N,C,H,W], got {s:?}")));
    }
    let c = s[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            op,
            format!(
                "scale {:?} / shift {:?} do not match {} channels",
                gamma.shape(),
                beta.shape(),
                c
            ),
        ));
    }
    Ok((s[0], c, s[2] * s[3]))
}

impl<E: Elem> Tensor<E> {
    /// Training-mode batchnorm using per-channel batch statistics.
    ///
    /// Returns the normalized tensor plus the biased batch mean/variance so
    /// the owning layer can update its running estimates.
    pub fn batchnorm2d_train(
        &self,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        eps: f64,
    ) -> Result<(Tensor<E>, Vec<E>, Vec<E>)> {
        let (n, c, hw) = check_bn_shapes("batchnorm2d_train", self, gamma, beta)?;
        let m = n * hw;
        if m < 2 {
            return Err(Error::arg(
                "batchnorm2d_train",
                "need at least 2 samples per channel for batch statistics",
            ));
        }
        let inv_m = E::ONE / E::from_f64(m as f64);
        let eps = E::from_f64(eps);
        let x = self.data();
        let mut mean = vec![E::ZERO; c];
        let mut var = vec![E::ZERO; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let mut acc = E::ZERO;
                for &v in &x[base..base + hw] {
                    acc += v;
                }
                mean[ch] += acc;
            }
        }
        for v in mean.iter_mut() {
            *v *= inv_m;
        }
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let mu = mean[ch];
                let mut acc = E::ZERO;
                for &v in &x[base..base + hw] {
                    let d = v - mu;
                    acc += d * d;
                }
                var[ch] += acc;
            }
        }
        for v in var.iter_mut() {
            *v *= inv_m;
        }
        let inv_std: Vec<E> = var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();

        let g = gamma.data();
        let bt = beta.data();
        let mut xhat = vec![E::ZERO; n * c * hw];
        let mut out = vec![E::ZERO; n * c * hw];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                for i in base..base + hw {
                    let h = (x[i] - mu) * is;
                    xhat[i] = h;
                    out[i] = ga * h + be;
                }
            }
        }
        drop(x);
        drop(g);
        drop(bt);

        let batch_mean = mean;
        let batch_var = var;
        let out = Tensor::from_op(
            "batchnorm2d_train",
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |up, parents| {
                let (input, gamma, beta) = (&parents[0], &parents[1], &parents[2]);
                // per-channel sums of dy and dy * xhat
                let mut sum_dy = vec![E::ZERO; c];
                let mut sum_dy_xhat = vec![E::ZERO; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let mut s = E::ZERO;
                        let mut sx = E::ZERO;
                        for i in base..base + hw {
                            s += up[i];
                            sx += up[i] * xhat[i];
                        }
                        sum_dy[ch] += s;
                        sum_dy_xhat[ch] += sx;
                    }
                }
                if beta.requires_grad() {
                    beta.accumulate_grad(&sum_dy);
                }
                if gamma.requires_grad() {
                    gamma.accumulate_grad(&sum_dy_xhat);
                }
                if input.requires_grad() {
                    let g = gamma.data();
                    let inv_m = E::ONE / E::from_f64((n * hw) as f64);
                    let mut dx = vec![E::ZERO; n * c * hw];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let k = g[ch] * inv_std[ch];
                            let mdy = sum_dy[ch] * inv_m;
                            let mdyx = sum_dy_xhat[ch] * inv_m;
                            for i in base..base + hw {
                                dx[i] = k * (up[i] - mdy - xhat[i] * mdyx);
                            }
                        }
                    }
                    drop(g);
                    input.accumulate_grad_owned(dx);
                }
            }),
        );
        Ok((out, batch_mean, batch_var))
    }

    /// Inference-mode batchnorm with fixed (running) statistics.
    pub fn batchnorm2d_eval(
        &self,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        running_mean: &[E],
        running_var: &[E],
        eps: f64,
    ) -> Result<Tensor<E>> {
        let (n, c, hw) = check_bn_shapes("batchnorm2d_eval", self, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(
                "batchnorm2d_eval",
                format!("running stats do not match {c} channels"),
            ));
        }
        let eps = E::from_f64(eps);
        let inv_std: Vec<E> = running_var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let x = self.data();
        let g = gamma.data();
        let bt = beta.data();
        let mut out = vec![E::ZERO; n * c * hw];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                for i in base..base + hw {
                    out[i] = ga * (x[i] - mu) * is + be;
                }
            }
        }
        drop(x);
        drop(g);
        drop(bt);
        Ok(Tensor::from_op(
            "batchnorm2d_eval",
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |up, parents| {
                let (input, gamma, beta) = (&parents[0], &parents[1], &parents[2]);
                if beta.requires_grad() {
                    let mut db = vec![E::ZERO; c];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            for i in base..base + hw {
                                db[ch] += up[i];
                            }
                        }
                    }
                    beta.accumulate_grad_owned(db);
                }
                if gamma.requires_grad() {
                    let x = input.data();
                    let mut dg = vec![E::ZERO; c];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            for i in base..base + hw {
                                dg[ch] += up[i] * (x[i] - mean[ch]) * inv_std[ch];
                            }
                        }
                    }
                    drop(x);
                    gamma.accumulate_grad_owned(dg);
                }
                if input.requires_grad() {
                    let g = gamma.data();
                    let mut dx = vec![E::ZERO; n * c * hw];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let k = g[ch] * inv_std[ch];
                            for i in base..base + hw {
                                dx[i] = up[i] * k;
                            }
                        }
                    }
                    drop(g);
                    input.accumulate_grad_owned(dx);
                }
            }),
        ))
    }
}
