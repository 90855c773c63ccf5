//! Row-wise log-softmax and the negative-log-likelihood picker that
//! together form cross-entropy.

use super::Tensor;
use crate::elem::Elem;
use crate::error::{Error, Result};

/// Row-wise log-softmax on plain data, shared by the op and by code that
/// needs soft targets outside the graph (KD teachers).
pub(crate) fn log_softmax_rows<E: Elem>(data: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; rows * cols];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mut max = row[0];
        for &v in row {
            max = max.maximum(v);
        }
        let mut lse = E::ZERO;
        for &v in row {
            lse += (v - max).exp();
        }
        let lse = lse.ln() + max;
        for (c, &v) in row.iter().enumerate() {
            out[r * cols + c] = v - lse;
        }
    }
    out
}

impl<E: Elem> Tensor<E> {
    /// Log-softmax over the last axis of a [N, K] tensor.
    pub fn log_softmax(&self) -> Result<Tensor<E>> {
        if self.shape().len() != 2 {
            return Err(Error::shape(
                "log_softmax",
                format!("expected [N, K], got {:?}", self.shape()),
            ));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        let out = log_softmax_rows(&self.data(), rows, cols);
        // softmax probabilities, cached for the backward pass
        let probs: Vec<E> = out.iter().map(|&v| v.exp()).collect();
        Ok(Tensor::from_op(
            "log_softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |up, parents| {
                // dx = dy - softmax(x) * sum_row(dy)
                let mut g = vec![E::ZERO; rows * cols];
                for r in 0..rows {
                    let mut row_sum = E::ZERO;
                    for c in 0..cols {
                        row_sum += up[r * cols + c];
                    }
                    for c in 0..cols {
                        let i = r * cols + c;
                        g[i] = up[i] - probs[i] * row_sum;
                    }
                }
                parents[0].accumulate_grad_owned(g);
            }),
        ))
    }

    /// Mean over the batch of `-input[n, labels[n]]`; with log-probabilities
    /// as input this is the NLL loss.
    pub fn nll_pick_mean(&self, labels: &[usize]) -> Result<Tensor<E>> {
        if self.shape().len() != 2 {
            return Err(Error::shape(
                "nll_pick_mean",
                format!("expected [N, K], got {:?}", self.shape()),
            ));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        if labels.len() != rows {
            return Err(Error::shape(
                "nll_pick_mean",
                format!("{} labels for {} rows", labels.len(), rows),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::arg(
                "nll_pick_mean",
                format!("label {bad} out of range for {cols} classes"),
            ));
        }
        let data = self.data();
        let inv = E::ONE / E::from_f64(rows as f64);
        let mut loss = E::ZERO;
        for (r, &l) in labels.iter().enumerate() {
            loss += -data[r * cols + l];
        }
        drop(data);
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            "nll_pick_mean",
            vec![loss * inv],
            vec![],
            vec![self.clone()],
            Box::new(move |up, parents| {
                let mut g = vec![E::ZERO; rows * cols];
                for (r, &l) in labels.iter().enumerate() {
                    g[r * cols + l] = -up[0] * inv;
                }
                parents[0].accumulate_grad_owned(g);
            }),
        ))
    }
}
