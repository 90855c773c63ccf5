//! Batch-index selection and the local/global pairing score.

use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};

impl<E: Elem> Tensor<E> {
    /// Gather rows along the batch axis: `out[i] = self[indices[i]]`.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<E>> {
        if self.shape().is_empty() {
            return Err(Error::shape("index_select", "scalar input".to_string()));
        }
        let n = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::arg(
                "index_select",
                format!("index {bad} out of range for batch {n}"),
            ));
        }
        let row: usize = self.shape()[1..].iter().product();
        let data = self.data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&data[i * row..(i + 1) * row]);
        }
        drop(data);
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let indices = indices.to_vec();
        Ok(Tensor::from_op(
            "index_select",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |up, parents| {
                let mut g = vec![E::ZERO; parents[0].numel()];
                for (o, &i) in indices.iter().enumerate() {
                    for c in 0..row {
                        g[i * row + c] += up[o * row + c];
                    }
                }
                parents[0].accumulate_grad_owned(g);
            }),
        ))
    }

    /// Score every spatial location of a local embedding map against a global
    /// embedding vector: `scores[n,h,w] = sum_e local[n,e,h,w] * global[n,e]`.
    pub fn score_local_global(&self, global: &Tensor<E>) -> Result<Tensor<E>> {
        let ls = self.shape();
        let gs = global.shape();
        if ls.len() != 4 || gs.len() != 2 || ls[0] != gs[0] || ls[1] != gs[1] {
            return Err(Error::shape(
                "score_local_global",
                format!("local {ls:?} vs global {gs:?}"),
            ));
        }
        let (n, e, h, w) = (ls[0], ls[1], ls[2], ls[3]);
        let hw = h * w;
        let local = self.data();
        let glob = global.data();
        let mut out = vec![E::ZERO; n * hw];
        for b in 0..n {
            for ch in 0..e {
                let gv = glob[b * e + ch];
                let base = (b * e + ch) * hw;
                let obase = b * hw;
                for p in 0..hw {
                    out[obase + p] += local[base + p] * gv;
                }
            }
        }
        drop(local);
        drop(glob);
        Ok(Tensor::from_op(
            "score_local_global",
            out,
            vec![n, h, w],
            vec![self.clone(), global.clone()],
            Box::new(move |up, parents| {
                if parents[0].requires_grad() {
                    let glob = parents[1].data();
                    let mut g = vec![E::ZERO; n * e * hw];
                    for b in 0..n {
                        for ch in 0..e {
                            let gv = glob[b * e + ch];
                            let base = (b * e + ch) * hw;
                            let ubase = b * hw;
                            for p in 0..hw {
                                g[base + p] = up[ubase + p] * gv;
                            }
                        }
                    }
                    drop(glob);
                    parents[0].accumulate_grad_owned(g);
                }
                if parents[1].requires_grad() {
                    let local = parents[0].data();
                    let mut g = vec![E::ZERO; n * e];
                    for b in 0..n {
                        for ch in 0..e {
                            let base = (b * e + ch) * hw;
                            let ubase = b * hw;
                            let mut acc = E::ZERO;
                            for p in 0..hw {
                                acc += up[ubase + p] * local[base + p];
                            }
                            g[b * e + ch] = acc;
                        }
                    }
                    drop(local);
                    parents[1].accumulate_grad_owned(g);
                }
            }),
        ))
    }
}
