//! 2D convolution (cross-correlation) as im2col + gemm, the dominant cost of
//! every training step. Batch items map to disjoint output chunks, so the
//! parallel path is bitwise-deterministic for a fixed worker count.

use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::threading::{fold_items_f, for_each_chunk_mut};

#[derive(Clone, Copy)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn ck(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }
    /// Identity im2col: 1x1 kernel, unit stride, no padding.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col_sample<E: Elem>(x: &[E], d: &ConvDims, cols: &mut [E]) {
    // cols is [C*kh*kw, oh*ow] row-major
    let out_hw = d.out_hw();
    let mut row = 0usize;
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let dst = &mut cols[row * out_hw..(row + 1) * out_hw];
                let mut idx = 0usize;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        for _ in 0..d.ow {
                            dst[idx] = E::ZERO;
                            idx += 1;
                        }
                        continue;
                    }
                    let base = iy as usize * d.w;
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        dst[idx] = if ix < 0 || ix >= d.w as isize {
                            E::ZERO
                        } else {
                            plane[base + ix as usize]
                        };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_sample<E: Elem>(cols: &[E], d: &ConvDims, x: &mut [E]) {
    let out_hw = d.out_hw();
    let mut row = 0usize;
    for c in 0..d.c {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let src = &cols[row * out_hw..(row + 1) * out_hw];
                let mut idx = 0usize;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        idx += d.ow;
                        continue;
                    }
                    let base = iy as usize * d.w;
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            plane[base + ix as usize] += src[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

impl<E: Elem> Tensor<E> {
    /// Cross-correlation of [N,C,H,W] with [O,C,kH,kW] filters.
    ///
    /// Output spatial size is `(H + 2*padding - kH) / stride + 1` (integer
    /// division); differentiable w.r.t. input, weight, and bias.
    pub fn conv2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<E>> {
        if stride == 0 {
            return Err(Error::arg("conv2d", "stride must be positive"));
        }
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs:?} and weight {ws:?} must be rank 4"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} != weight channels {}", xs[1], ws[1]),
            ));
        }
        if xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    ws[2],
                    ws[3],
                    xs[2] + 2 * padding,
                    xs[3] + 2 * padding
                ),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} does not match {} filters", b.shape(), ws[0]),
                ));
            }
        }
        let d = ConvDims {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad: padding,
            oh: (xs[2] + 2 * padding - ws[2]) / stride + 1,
            ow: (xs[3] + 2 * padding - ws[3]) / stride + 1,
        };
        let ck = d.ck();
        let out_hw = d.out_hw();

        // Pointwise convs (the discriminator encoders) skip im2col entirely;
        // the input already is the column matrix.
        let cols: Vec<E> = if d.is_pointwise() {
            Vec::new()
        } else {
            let mut cols = vec![E::ZERO; d.n * ck * out_hw];
            let x_guard = self.data();
            let x: &[E] = &x_guard;
            for_each_chunk_mut(&mut cols, ck * out_hw, |n, chunk| {
                im2col_sample(&x[n * d.c * d.h * d.w..], &d, chunk);
            });
            cols
        };

        let mut out = vec![E::ZERO; d.n * d.o * out_hw];
        {
            let x_guard = self.data();
            let w_guard = weight.data();
            let w: &[E] = &w_guard;
            let col_src: &[E] = if d.is_pointwise() { &x_guard } else { &cols };
            for_each_chunk_mut(&mut out, d.o * out_hw, |n, chunk| unsafe {
                E::gemm(
                    d.o,
                    ck,
                    out_hw,
                    E::ONE,
                    w.as_ptr(),
                    ck as isize,
                    1,
                    col_src.as_ptr().add(n * ck * out_hw),
                    out_hw as isize,
                    1,
                    E::ZERO,
                    chunk.as_mut_ptr(),
                    out_hw as isize,
                    1,
                );
            });
        }
        if let Some(b) = bias {
            let b = b.data();
            for chunk in out.chunks_mut(d.o * out_hw) {
                for (o, plane) in chunk.chunks_mut(out_hw).enumerate() {
                    let bv = b[o];
                    for v in plane {
                        *v += bv;
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            "conv2d",
            out,
            vec![d.n, d.o, d.oh, d.ow],
            parents,
            Box::new(move |up, parents| {
                let input = &parents[0];
                let weight = &parents[1];
                let pointwise = d.is_pointwise();

                if let Some(bias) = parents.get(2) {
                    if bias.requires_grad() {
                        let mut db = vec![E::ZERO; d.o];
                        for chunk in up.chunks(d.o * out_hw) {
                            for (o, plane) in chunk.chunks(out_hw).enumerate() {
                                for &g in plane {
                                    db[o] += g;
                                }
                            }
                        }
                        bias.accumulate_grad_owned(db);
                    }
                }

                if weight.requires_grad() {
                    let x_guard = input.data();
                    let col_src: &[E] = if pointwise { &x_guard } else { &cols };
                    let mut dw = vec![E::ZERO; d.o * ck];
                    fold_items_f(&mut dw, d.n, |n, acc| unsafe {
                        // dW += dOut_n [O, ohw] * cols_n^T [ohw, CK]
                        E::gemm(
                            d.o,
                            out_hw,
                            ck,
                            E::ONE,
                            up.as_ptr().add(n * d.o * out_hw),
                            out_hw as isize,
                            1,
                            col_src.as_ptr().add(n * ck * out_hw),
                            1,
                            out_hw as isize,
                            E::ONE,
                            acc.as_mut_ptr(),
                            ck as isize,
                            1,
                        );
                    });
                    weight.accumulate_grad_owned(dw);
                }

                if input.requires_grad() {
                    let w_guard = weight.data();
                    let w: &[E] = &w_guard;
                    let mut dx = vec![E::ZERO; d.n * d.c * d.h * d.w];
                    for_each_chunk_mut(&mut dx, d.c * d.h * d.w, |n, chunk| unsafe {
                        if pointwise {
                            // dcols == dx directly
                            E::gemm(
                                ck,
                                d.o,
                                out_hw,
                                E::ONE,
                                w.as_ptr(),
                                1,
                                ck as isize,
                                up.as_ptr().add(n * d.o * out_hw),
                                out_hw as isize,
                                1,
                                E::ZERO,
                                chunk.as_mut_ptr(),
                                out_hw as isize,
                                1,
                            );
                        } else {
                            let mut dcols = vec![E::ZERO; ck * out_hw];
                            E::gemm(
                                ck,
                                d.o,
                                out_hw,
                                E::ONE,
                                w.as_ptr(),
                                1,
                                ck as isize,
                                up.as_ptr().add(n * d.o * out_hw),
                                out_hw as isize,
                                1,
                                E::ZERO,
                                dcols.as_mut_ptr(),
                                out_hw as isize,
                                1,
                            );
                            col2im_sample(&dcols, &d, chunk);
                        }
                    });
                    input.accumulate_grad_owned(dx);
                }
            }),
        ))
    }
}
