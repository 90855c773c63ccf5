//! SGD with momentum and weight decay, plus the milestone LR schedule.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct Sgd<E: Elem> {
    params: Vec<Tensor<E>>,
    velocity: Vec<Vec<E>>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<E: Elem> Sgd<E> {
    pub fn new(params: Vec<Tensor<E>>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params.iter().map(|p| vec![E::ZERO; p.numel()]).collect();
        Sgd {
            params,
            velocity,
            lr,
            momentum,
            weight_decay,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// v <- mu*v + (g + wd*p); p <- p - lr*v
    pub fn step(&mut self) -> Result<()> {
        let lr = E::from_f64(self.lr);
        let mu = E::from_f64(self.momentum);
        let wd = E::from_f64(self.weight_decay);
        for (param, vel) in self.params.iter().zip(self.velocity.iter_mut()) {
            let grad = param.grad().ok_or_else(|| {
                Error::arg("sgd_step", format!("missing gradient for {param:?}"))
            })?;
            let mut data = param.data_mut();
            for i in 0..data.len() {
                let g = grad[i] + wd * data[i];
                vel[i] = mu * vel[i] + g;
                data[i] -= lr * vel[i];
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> &[Tensor<E>] {
        &self.params
    }
}

/// Step decay: lr is multiplied by `gamma` at each milestone epoch.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub total_epochs: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, milestones: Vec<usize>, gamma: f64, total_epochs: usize) -> Result<Self> {
        let s = Schedule {
            base_lr,
            milestones,
            gamma,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::arg("schedule", "base_lr must be positive and finite"));
        }
        if self.total_epochs == 0 {
            return Err(Error::arg("schedule", "total_epochs must be positive"));
        }
        let mut prev = None;
        for &m in &self.milestones {
            if m >= self.total_epochs || prev.is_some_and(|p| m <= p) {
                return Err(Error::arg(
                    "schedule",
                    format!(
                        "milestones must be strictly increasing and below total_epochs, got {:?}",
                        self.milestones
                    ),
                ));
            }
            prev = Some(m);
        }
        Ok(())
    }

    /// base_lr * gamma^(number of milestones at or before `epoch`).
    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::arg(
                "lr_at_epoch",
                format!("epoch {epoch} out of range 0..{}", self.total_epochs),
            ));
        }
        let hits = self.milestones.iter().filter(|&&m| m <= epoch).count();
        Ok(self.base_lr * self.gamma.powi(hits as i32))
    }
}
