//! Optimization and the three distillation training modes.

pub mod optim;
pub mod run;

pub use optim::{Schedule, Sgd};
pub use run::{
    evaluate, run_offline_distill, run_online_distill, run_self_distill, TrainOptions,
};
