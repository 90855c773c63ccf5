//! Parameterized layers: thin wrappers pairing weight tensors with their
//! forward op, He-style initialization, and parameter bookkeeping.

use std::cell::RefCell;

use crate::elem::Elem;
use crate::error::Result;
use crate::rng::SeedRng;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Conv2d<E: Elem> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Elem> Conv2d<E> {
    pub fn init(
        rng: &mut SeedRng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let mut w = vec![E::ZERO; out_ch * in_ch * kernel * kernel];
        rng.fill_normal(&mut w, std);
        Conv2d {
            weight: Tensor::param(w, &[out_ch, in_ch, kernel, kernel]).expect("conv weight"),
            bias: bias.then(|| Tensor::param(vec![E::ZERO; out_ch], &[out_ch]).expect("conv bias")),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.forward_with_stride(x, self.stride)
    }

    /// Forward with an explicit stride (bottleneck heads pick theirs from the
    /// observed feature-map ratio).
    pub fn forward_with_stride(&self, x: &Tensor<E>, stride: usize) -> Result<Tensor<E>> {
        x.conv2d(&self.weight, self.bias.as_ref(), stride, self.padding)
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn param_count(&self) -> u64 {
        (self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)) as u64
    }

    /// Multiply-accumulates for one forward at the given output resolution.
    pub fn macs(&self, out_h: usize, out_w: usize) -> u64 {
        (self.out_ch() * self.in_ch() * self.kernel() * self.kernel() * out_h * out_w) as u64
    }

    pub fn out_hw(&self, h: usize, w: usize, stride: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel()) / stride + 1,
            (w + 2 * self.padding - self.kernel()) / stride + 1,
        )
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

pub struct BatchNorm2d<E: Elem> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: RefCell<Vec<E>>,
    pub running_var: RefCell<Vec<E>>,
}

impl<E: Elem> BatchNorm2d<E> {
    pub fn init(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(vec![E::ONE; channels], &[channels]).expect("bn gamma"),
            beta: Tensor::param(vec![E::ZERO; channels], &[channels]).expect("bn beta"),
            running_mean: RefCell::new(vec![E::ZERO; channels]),
            running_var: RefCell::new(vec![E::ONE; channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        match mode {
            Mode::Train => {
                let (y, mean, var) = x.batchnorm2d_train(&self.gamma, &self.beta, BN_EPS)?;
                // running stats track the unbiased variance
                let s = x.shape();
                let m = (s[0] * s[2] * s[3]) as f64;
                let unbias = E::from_f64(m / (m - 1.0));
                let mom = E::from_f64(BN_MOMENTUM);
                let keep = E::from_f64(1.0 - BN_MOMENTUM);
                let mut rm = self.running_mean.borrow_mut();
                let mut rv = self.running_var.borrow_mut();
                for c in 0..rm.len() {
                    rm[c] = keep * rm[c] + mom * mean[c];
                    rv[c] = keep * rv[c] + mom * var[c] * unbias;
                }
                Ok(y)
            }
            Mode::Eval => x.batchnorm2d_eval(
                &self.gamma,
                &self.beta,
                &self.running_mean.borrow(),
                &self.running_var.borrow(),
                BN_EPS,
            ),
        }
    }

    pub fn param_count(&self) -> u64 {
        (self.gamma.numel() + self.beta.numel()) as u64
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    /// Running statistics participate in checkpoints but not in gradients.
    pub fn stats_snapshot(&self) -> (Vec<E>, Vec<E>) {
        (
            self.running_mean.borrow().clone(),
            self.running_var.borrow().clone(),
        )
    }

    pub fn load_stats(&self, mean: &[E], var: &[E]) {
        self.running_mean.borrow_mut().copy_from_slice(mean);
        self.running_var.borrow_mut().copy_from_slice(var);
    }
}

pub struct Linear<E: Elem> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Elem> Linear<E> {
    pub fn init(rng: &mut SeedRng, in_dim: usize, out_dim: usize) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let mut w = vec![E::ZERO; out_dim * in_dim];
        rng.fill_normal(&mut w, std);
        Linear {
            weight: Tensor::param(w, &[out_dim, in_dim]).expect("linear weight"),
            bias: Tensor::param(vec![E::ZERO; out_dim], &[out_dim]).expect("linear bias"),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.linear(&self.weight, &self.bias)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> u64 {
        (self.weight.numel() + self.bias.numel()) as u64
    }

    /// Multiply-accumulates for one sample.
    pub fn macs(&self) -> u64 {
        (self.out_dim() * self.in_dim()) as u64
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// conv + batchnorm + relu, the unit both backbones are made of.
pub struct ConvBnRelu<E: Elem> {
    pub conv: Conv2d<E>,
    pub bn: BatchNorm2d<E>,
}

impl<E: Elem> ConvBnRelu<E> {
    pub fn init(
        rng: &mut SeedRng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvBnRelu {
            // bias folded into batchnorm shift
            conv: Conv2d::init(rng, in_ch, out_ch, kernel, stride, padding, false),
            bn: BatchNorm2d::init(out_ch),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        Ok(self.bn.forward(&self.conv.forward(x)?, mode)?.relu())
    }

    pub fn param_count(&self) -> u64 {
        self.conv.param_count() + self.bn.param_count()
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.bn.collect_params(&format!("{prefix}.bn"), out);
    }
}
