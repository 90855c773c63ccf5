//! Spatial pooling.

use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};

impl<E: Elem> Tensor<E> {
    /// Max pooling with square window and no padding. Ties route gradient to
    /// the first maximum in scan order, which keeps backward deterministic.
    pub fn max_pool2d(&self, kernel: usize, stride: usize) -> Result<Tensor<E>> {
        if kernel == 0 || stride == 0 {
            return Err(Error::arg("max_pool2d", "kernel and stride must be positive"));
        }
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "max_pool2d",
                format!("expected [N,C,H,W], got {s:?}"),
            ));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h < kernel || w < kernel {
            return Err(Error::shape(
                "max_pool2d",
                format!("window {kernel} larger than input {h}x{w}"),
            ));
        }
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let x = self.data();
        let mut out = vec![E::ZERO; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        let mut oi = 0usize;
        for b in 0..n {
            for ch in 0..c {
                let plane = (b * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = plane + oy * stride * w + ox * stride;
                        let mut best_v = x[best];
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let i = plane + (oy * stride + ky) * w + ox * stride + kx;
                                if x[i] > best_v {
                                    best_v = x[i];
                                    best = i;
                                }
                            }
                        }
                        out[oi] = best_v;
                        argmax[oi] = best;
                        oi += 1;
                    }
                }
            }
        }
        drop(x);
        let total = self.numel();
        Ok(Tensor::from_op(
            "max_pool2d",
            out,
            vec![n, c, oh, ow],
            vec![self.clone()],
            Box::new(move |up, parents| {
                let mut g = vec![E::ZERO; total];
                for (i, &src) in argmax.iter().enumerate() {
                    g[src] += up[i];
                }
                parents[0].accumulate_grad_owned(g);
            }),
        ))
    }

    /// Mean over the spatial axes: [N,C,H,W] -> [N,C].
    pub fn global_avg_pool(&self) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("expected [N,C,H,W], got {s:?}"),
            ));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = E::ONE / E::from_f64(hw as f64);
        let x = self.data();
        let mut out = vec![E::ZERO; n * c];
        for (i, plane) in x.chunks(hw).enumerate() {
            let mut acc = E::ZERO;
            for &v in plane {
                acc += v;
            }
            out[i] = acc * inv;
        }
        drop(x);
        Ok(Tensor::from_op(
            "global_avg_pool",
            out,
            vec![n, c],
            vec![self.clone()],
            Box::new(move |up, parents| {
                let mut g = vec![E::ZERO; n * c * hw];
                for (i, chunk) in g.chunks_mut(hw).enumerate() {
                    let gv = up[i] * inv;
                    for v in chunk {
                        *v = gv;
                    }
                }
                parents[0].accumulate_grad_owned(g);
            }),
        ))
    }
}
