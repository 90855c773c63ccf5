//! Bottleneck classifier heads for intermediate features.
//!
//! Each head projects a tapped feature map into the channel/spatial regime of
//! the final feature with one strided 1x1 conv block (pointwise, so the head
//! stays much smaller than the backbone modules it bypasses), then classifies
//! with global average pooling and a linear layer. Head parameters are
//! disjoint from the backbone.

use crate::elem::Elem;
use crate::error::Result;
use crate::nn::layers::{BatchNorm2d, Conv2d, Linear, Mode};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

pub struct BottleneckHead<E: Elem> {
    pub conv: Conv2d<E>,
    pub bn: BatchNorm2d<E>,
    pub classifier: Linear<E>,
    /// Spatial size ratio (tap resolution / final resolution) this head
    /// bridges; the conv stride is derived from it at forward time.
    pub spatial_ratio: usize,
}

fn round_div(a: usize, b: usize) -> usize {
    ((a + b / 2) / b).max(1)
}

impl<E: Elem> BottleneckHead<E> {
    pub fn init(
        rng: &mut SeedRng,
        in_ch: usize,
        out_ch: usize,
        num_classes: usize,
        spatial_ratio: usize,
    ) -> Self {
        BottleneckHead {
            conv: Conv2d::init(rng, in_ch, out_ch, 1, spatial_ratio.max(1), 0, false),
            bn: BatchNorm2d::init(out_ch),
            classifier: Linear::init(rng, out_ch, num_classes),
            spatial_ratio: spatial_ratio.max(1),
        }
    }

    /// Project a tapped feature into the final feature's regime
    /// (same channels, approximately the same spatial size).
    pub fn project(&self, feature: &Tensor<E>, final_hw: (usize, usize), mode: Mode) -> Result<Tensor<E>> {
        let h = feature.shape()[2];
        let stride = round_div(h, final_hw.0);
        let y = self.conv.forward_with_stride(feature, stride)?;
        Ok(self.bn.forward(&y, mode)?.relu())
    }

    /// Full head: projection, pooling, classification.
    pub fn forward(&self, feature: &Tensor<E>, final_hw: (usize, usize), mode: Mode) -> Result<Tensor<E>> {
        let p = self.project(feature, final_hw, mode)?;
        self.classifier.forward(&p.global_avg_pool()?)
    }

    pub fn param_count(&self) -> u64 {
        self.conv.param_count() + self.bn.param_count() + self.classifier.param_count()
    }

    pub fn macs(&self, tap_hw: (usize, usize), final_hw: (usize, usize)) -> u64 {
        let stride = round_div(tap_hw.0, final_hw.0);
        let (oh, ow) = self.conv.out_hw(tap_hw.0, tap_hw.1, stride);
        self.conv.macs(oh, ow) + self.classifier.macs(true)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.bn.collect_params(&format!("{prefix}.bn"), out);
        self.classifier.collect_params(&format!("{prefix}.fc"), out);
    }

    /// Parameters of the projection block only (used when just the
    /// projection participates in the objective, e.g. the L2 comparator).
    pub fn projection_params(&self) -> Vec<Tensor<E>> {
        vec![
            self.conv.weight.clone(),
            self.bn.gamma.clone(),
            self.bn.beta.clone(),
        ]
    }

    pub fn classifier_params(&self) -> Vec<Tensor<E>> {
        vec![self.classifier.weight.clone(), self.classifier.bias.clone()]
    }
}
