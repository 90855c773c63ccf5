//! Fully connected layer: `out[n,k] = sum_d x[n,d] * w[k,d] + b[k]`.

use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};

impl<E: Elem> Tensor<E> {
    pub fn linear(&self, weight: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?} vs weight {ws:?}"),
            ));
        }
        let (n, d, k) = (xs[0], xs[1], ws[0]);
        if bias.shape() != [k] {
            return Err(Error::shape(
                "linear",
                format!("bias {:?} vs {} outputs", bias.shape(), k),
            ));
        }
        let mut out = vec![E::ZERO; n * k];
        {
            let x = self.data();
            let w = weight.data();
            // out = x [n,d] * w^T [d,k]
            unsafe {
                E::gemm(
                    n,
                    d,
                    k,
                    E::ONE,
                    x.as_ptr(),
                    d as isize,
                    1,
                    w.as_ptr(),
                    1,
                    d as isize,
                    E::ZERO,
                    out.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            let b = bias.data();
            for row in out.chunks_mut(k) {
                for (v, &bv) in row.iter_mut().zip(b.iter()) {
                    *v += bv;
                }
            }
        }
        Ok(Tensor::from_op(
            "linear",
            out,
            vec![n, k],
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |up, parents| {
                let (input, weight, bias) = (&parents[0], &parents[1], &parents[2]);
                if bias.requires_grad() {
                    let mut db = vec![E::ZERO; k];
                    for row in up.chunks(k) {
                        for (g, &u) in db.iter_mut().zip(row.iter()) {
                            *g += u;
                        }
                    }
                    bias.accumulate_grad_owned(db);
                }
                if weight.requires_grad() {
                    // dW = dOut^T [k,n] * x [n,d]
                    let x = input.data();
                    let mut dw = vec![E::ZERO; k * d];
                    unsafe {
                        E::gemm(
                            k,
                            n,
                            d,
                            E::ONE,
                            up.as_ptr(),
                            1,
                            k as isize,
                            x.as_ptr(),
                            d as isize,
                            1,
                            E::ZERO,
                            dw.as_mut_ptr(),
                            d as isize,
                            1,
                        );
                    }
                    weight.accumulate_grad_owned(dw);
                }
                if input.requires_grad() {
                    // dX = dOut [n,k] * w [k,d]
                    let w = weight.data();
                    let mut dx = vec![E::ZERO; n * d];
                    unsafe {
                        E::gemm(
                            n,
                            k,
                            d,
                            E::ONE,
                            up.as_ptr(),
                            k as isize,
                            1,
                            w.as_ptr(),
                            d as isize,
                            1,
                            E::ZERO,
                            dx.as_mut_ptr(),
                            d as isize,
                            1,
                        );
                    }
                    input.accumulate_grad_owned(dx);
                }
            }),
        ))
    }
}
