//! Full reductions to a scalar.

use super::Tensor;
use crate::elem::Elem;

impl<E: Elem> Tensor<E> {
    pub fn sum(&self) -> Tensor<E> {
        let s: E = self.data().iter().copied().sum();
        Tensor::from_op(
            "sum",
            vec![s],
            vec![],
            vec![self.clone()],
            Box::new(|up, parents| {
                let g = vec![up[0]; parents[0].numel()];
                parents[0].accumulate_grad_owned(g);
            }),
        )
    }

    pub fn mean(&self) -> Tensor<E> {
        let n = self.numel();
        debug_assert!(n > 0, "mean of empty tensor");
        let inv = E::ONE / E::from_f64(n as f64);
        let s: E = self.data().iter().copied().sum();
        Tensor::from_op(
            "mean",
            vec![s * inv],
            vec![],
            vec![self.clone()],
            Box::new(move |up, parents| {
                let g = vec![up[0] * inv; parents[0].numel()];
                parents[0].accumulate_grad_owned(g);
            }),
        )
    }
}
