//! Elementwise arithmetic and activations.

use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};

fn same_shape<E: Elem>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<E: Elem> Tensor<E> {
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("add", self, other)?;
        let data: Vec<E> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            "add",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|up, parents| {
                parents[0].accumulate_grad(up);
                parents[1].accumulate_grad(up);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("sub", self, other)?;
        let data: Vec<E> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            "sub",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|up, parents| {
                parents[0].accumulate_grad(up);
                if parents[1].requires_grad() {
                    let neg: Vec<E> = up.iter().map(|&g| -g).collect();
                    parents[1].accumulate_grad_owned(neg);
                }
            }),
        ))
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("mul", self, other)?;
        let data: Vec<E> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            "mul",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|up, parents| {
                if parents[0].requires_grad() {
                    let b = parents[1].data();
                    let g: Vec<E> = up.iter().zip(b.iter()).map(|(&g, &b)| g * b).collect();
                    parents[0].accumulate_grad_owned(g);
                }
                if parents[1].requires_grad() {
                    let a = parents[0].data();
                    let g: Vec<E> = up.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect();
                    parents[1].accumulate_grad_owned(g);
                }
            }),
        ))
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: f64) -> Tensor<E> {
        let c = E::from_f64(c);
        let data: Vec<E> = self.data().iter().map(|&a| a * c).collect();
        Tensor::from_op(
            "scale",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |up, parents| {
                let g: Vec<E> = up.iter().map(|&g| g * c).collect();
                parents[0].accumulate_grad_owned(g);
            }),
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Tensor<E> {
        let c = E::from_f64(c);
        let data: Vec<E> = self.data().iter().map(|&a| a + c).collect();
        Tensor::from_op(
            "add_scalar",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |up, parents| {
                parents[0].accumulate_grad(up);
            }),
        )
    }

    pub fn relu(&self) -> Tensor<E> {
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|&a| if a > E::ZERO { a } else { E::ZERO })
            .collect();
        Tensor::from_op(
            "relu",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|up, parents| {
                let x = parents[0].data();
                let g: Vec<E> = up
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &x)| if x > E::ZERO { g } else { E::ZERO })
                    .collect();
                drop(x);
                parents[0].accumulate_grad_owned(g);
            }),
        )
    }

    /// log(1 + e^x) in the overflow-safe form max(x, 0) + log(1 + e^(-|x|)).
    pub fn softplus(&self) -> Tensor<E> {
        let data: Vec<E> = self.data().iter().map(|&x| softplus_scalar(x)).collect();
        Tensor::from_op(
            "softplus",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|up, parents| {
                let x = parents[0].data();
                let g: Vec<E> = up
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &x)| g * sigmoid_scalar(x))
                    .collect();
                drop(x);
                parents[0].accumulate_grad_owned(g);
            }),
        )
    }
}

pub(crate) fn softplus_scalar<E: Elem>(x: E) -> E {
    x.maximum(E::ZERO) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar<E: Elem>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}
