//! Backbone networks decomposed into feature-tapped modules, per-module
//! bottleneck classifier heads, and parameter/FLOP accounting.

pub mod backbone;
pub mod count;
pub mod head;
pub mod layers;

pub use backbone::{
    build_backbone, Architecture, Backbone, BackboneSpec, CompactModel, FeatureSet,
};
pub use count::{count_flops, count_macs, count_params, count_report, macs_to_flops, ModuleCount};
pub use head::BottleneckHead;
pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, Linear, Mode};
