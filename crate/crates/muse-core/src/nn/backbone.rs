//! Feature-tapped backbones.
//!
//! A backbone is a chain of units (conv blocks or residual blocks) split into
//! T consecutive modules by `module_boundaries`. The activation at each module
//! boundary is a tapped feature; every tapped feature feeds a classifier head
//! (bottleneck heads for modules 1..T-1, global-pool + linear for module T).

use std::collections::HashMap;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nn::head::BottleneckHead;
use crate::nn::layers::{BatchNorm2d, Conv2d, ConvBnRelu, Linear, Mode};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Channel plan of the compact four-block CNN, sized so a full training run
/// stays in single-digit minutes on one core.
pub const SMALL_CNN_CHANNELS: [usize; 4] = [8, 16, 32, 64];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Architecture {
    SmallCnn4,
    Resnet18Cifar,
}

impl Architecture {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "small-cnn-4" => Ok(Architecture::SmallCnn4),
            "resnet18-cifar" => Ok(Architecture::Resnet18Cifar),
            other => Err(Error::arg(
                "architecture",
                format!("unknown architecture '{other}' (expected small-cnn-4 or resnet18-cifar)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::SmallCnn4 => "small-cnn-4",
            Architecture::Resnet18Cifar => "resnet18-cifar",
        }
    }

    /// Number of stackable units (excluding the resnet stem).
    pub fn depth(&self) -> usize {
        match self {
            Architecture::SmallCnn4 => 4,
            Architecture::Resnet18Cifar => 8,
        }
    }

    /// Boundaries giving the default T = 4 decomposition.
    pub fn default_boundaries(&self) -> Vec<usize> {
        match self {
            Architecture::SmallCnn4 => vec![1, 2, 3],
            // four residual stages of two blocks each
            Architecture::Resnet18Cifar => vec![2, 4, 6],
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackboneSpec {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub in_channels: usize,
    /// T-1 strictly increasing unit counts marking module ends.
    pub module_boundaries: Vec<usize>,
}

impl BackboneSpec {
    pub fn new(architecture: Architecture, num_classes: usize, in_channels: usize) -> Self {
        BackboneSpec {
            architecture,
            num_classes,
            in_channels,
            module_boundaries: architecture.default_boundaries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::arg("backbone", "num_classes must be at least 2"));
        }
        if self.in_channels == 0 {
            return Err(Error::arg("backbone", "in_channels must be positive"));
        }
        let depth = self.architecture.depth();
        if self.module_boundaries.is_empty() {
            return Err(Error::arg(
                "backbone",
                "module_boundaries must split the network into at least 2 modules",
            ));
        }
        let mut prev = 0usize;
        for &b in &self.module_boundaries {
            if b <= prev || b >= depth {
                return Err(Error::arg(
                    "backbone",
                    format!(
                        "module_boundaries must be strictly increasing within 1..{depth}, got {:?}",
                        self.module_boundaries
                    ),
                ));
            }
            prev = b;
        }
        Ok(())
    }

    pub fn num_modules(&self) -> usize {
        self.module_boundaries.len() + 1
    }

    /// Canonical one-line form, hashed into checkpoint fingerprints.
    pub fn canonical_string(&self) -> String {
        format!(
            "arch={};classes={};in_channels={};boundaries={:?}",
            self.architecture.name(),
            self.num_classes,
            self.in_channels,
            self.module_boundaries
        )
    }
}

/// Residual block with two 3x3 convs and an optional projection shortcut.
pub struct BasicBlock<E: Elem> {
    conv1: Conv2d<E>,
    bn1: BatchNorm2d<E>,
    conv2: Conv2d<E>,
    bn2: BatchNorm2d<E>,
    down: Option<(Conv2d<E>, BatchNorm2d<E>)>,
}

impl<E: Elem> BasicBlock<E> {
    fn init(rng: &mut SeedRng, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let down = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::init(rng, in_ch, out_ch, 1, stride, 0, false),
                BatchNorm2d::init(out_ch),
            )
        });
        BasicBlock {
            conv1: Conv2d::init(rng, in_ch, out_ch, 3, stride, 1, false),
            bn1: BatchNorm2d::init(out_ch),
            conv2: Conv2d::init(rng, out_ch, out_ch, 3, 1, 1, false),
            bn2: BatchNorm2d::init(out_ch),
            down,
        }
    }

    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu();
        let y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?;
        let shortcut = match &self.down {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok(y.add(&shortcut)?.relu())
    }

    fn param_count(&self) -> u64 {
        self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count()
            + self
                .down
                .as_ref()
                .map_or(0, |(c, b)| c.param_count() + b.param_count())
    }

    fn macs(&self, h: usize, w: usize) -> (u64, (usize, usize)) {
        let (oh, ow) = self.conv1.out_hw(h, w, self.conv1.stride);
        let mut macs = self.conv1.macs(oh, ow) + self.conv2.macs(oh, ow);
        if let Some((c, _)) = &self.down {
            macs += c.macs(oh, ow);
        }
        (macs, (oh, ow))
    }

    fn stride(&self) -> usize {
        self.conv1.stride
    }

    fn out_ch(&self) -> usize {
        self.conv1.out_ch()
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.bn1.collect_params(&format!("{prefix}.bn1"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        self.bn2.collect_params(&format!("{prefix}.bn2"), out);
        if let Some((c, b)) = &self.down {
            c.collect_params(&format!("{prefix}.down.conv"), out);
            b.collect_params(&format!("{prefix}.down.bn"), out);
        }
    }

    fn for_each_bn(&self, prefix: &str, f: &mut dyn FnMut(String, &BatchNorm2d<E>)) {
        f(format!("{prefix}.bn1"), &self.bn1);
        f(format!("{prefix}.bn2"), &self.bn2);
        if let Some((_, b)) = &self.down {
            f(format!("{prefix}.down.bn"), b);
        }
    }
}

enum Unit<E: Elem> {
    Conv(ConvBnRelu<E>),
    Basic(BasicBlock<E>),
}

impl<E: Elem> Unit<E> {
    fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        match self {
            Unit::Conv(c) => c.forward(x, mode),
            Unit::Basic(b) => b.forward(x, mode),
        }
    }

    fn out_ch(&self) -> usize {
        match self {
            Unit::Conv(c) => c.conv.out_ch(),
            Unit::Basic(b) => b.out_ch(),
        }
    }

    fn stride(&self) -> usize {
        match self {
            Unit::Conv(c) => c.conv.stride,
            Unit::Basic(b) => b.stride(),
        }
    }

    fn param_count(&self) -> u64 {
        match self {
            Unit::Conv(c) => c.param_count(),
            Unit::Basic(b) => b.param_count(),
        }
    }

    fn macs(&self, h: usize, w: usize) -> (u64, (usize, usize)) {
        match self {
            Unit::Conv(c) => {
                let (oh, ow) = c.conv.out_hw(h, w, c.conv.stride);
                (c.conv.macs(oh, ow), (oh, ow))
            }
            Unit::Basic(b) => b.macs(h, w),
        }
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        match self {
            Unit::Conv(c) => c.collect_params(prefix, out),
            Unit::Basic(b) => b.collect_params(prefix, out),
        }
    }

    fn for_each_bn(&self, prefix: &str, f: &mut dyn FnMut(String, &BatchNorm2d<E>)) {
        match self {
            Unit::Conv(c) => f(format!("{prefix}.bn"), &c.bn),
            Unit::Basic(b) => b.for_each_bn(prefix, f),
        }
    }
}

/// Features and per-module logits from one forward pass.
pub struct FeatureSet<E: Elem> {
    /// Tapped activations, shallow to deep; the last entry is the
    /// pre-classifier feature of the full network.
    pub features: Vec<Tensor<E>>,
    /// Head outputs, one [N, num_classes] tensor per module.
    pub logits: Vec<Tensor<E>>,
}

pub struct Backbone<E: Elem> {
    pub spec: BackboneSpec,
    stem: Option<ConvBnRelu<E>>,
    units: Vec<Unit<E>>,
    /// Unit counts at which modules end; last entry equals units.len().
    taps: Vec<usize>,
    pub heads: Vec<BottleneckHead<E>>,
    pub classifier: Linear<E>,
}

/// Deterministic construction: the same seed yields byte-identical parameters.
pub fn build_backbone<E: Elem>(spec: &BackboneSpec, seed: u64) -> Result<Backbone<E>> {
    spec.validate()?;
    let mut rng = SeedRng::derive(seed, 0x6261636b626f6e65); // "backbone"
    let (stem, units): (Option<ConvBnRelu<E>>, Vec<Unit<E>>) = match spec.architecture {
        Architecture::SmallCnn4 => {
            let mut units = Vec::new();
            let mut in_ch = spec.in_channels;
            for (i, &out_ch) in SMALL_CNN_CHANNELS.iter().enumerate() {
                let stride = if i == 0 { 1 } else { 2 };
                units.push(Unit::Conv(ConvBnRelu::init(&mut rng, in_ch, out_ch, 3, stride, 1)));
                in_ch = out_ch;
            }
            (None, units)
        }
        Architecture::Resnet18Cifar => {
            let stem = ConvBnRelu::init(&mut rng, spec.in_channels, 64, 3, 1, 1);
            let plan: [(usize, usize, usize); 8] = [
                (64, 64, 1),
                (64, 64, 1),
                (64, 128, 2),
                (128, 128, 1),
                (128, 256, 2),
                (256, 256, 1),
                (256, 512, 2),
                (512, 512, 1),
            ];
            let units = plan
                .iter()
                .map(|&(i, o, s)| Unit::Basic(BasicBlock::init(&mut rng, i, o, s)))
                .collect();
            (Some(stem), units)
        }
    };

    let mut taps = spec.module_boundaries.clone();
    taps.push(spec.architecture.depth());

    // nominal downsampling ratio between each tap and the final tap
    let final_ch = units[taps[taps.len() - 1] - 1].out_ch();
    let mut heads = Vec::new();
    for t in 0..taps.len() - 1 {
        let tap_ch = units[taps[t] - 1].out_ch();
        let ratio: usize = units[taps[t]..taps[taps.len() - 1]]
            .iter()
            .map(Unit::stride)
            .product();
        heads.push(BottleneckHead::init(
            &mut rng,
            tap_ch,
            final_ch,
            spec.num_classes,
            ratio,
        ));
    }
    let classifier = Linear::init(&mut rng, final_ch, spec.num_classes);

    Ok(Backbone {
        spec: spec.clone(),
        stem,
        units,
        taps,
        heads,
        classifier,
    })
}

impl<E: Elem> Backbone<E> {
    pub fn num_modules(&self) -> usize {
        self.taps.len()
    }

    fn check_input(&self, batch: &Tensor<E>) -> Result<()> {
        let s = batch.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "forward",
                format!("expected [N,C,H,W], got {s:?}"),
            ));
        }
        if s[1] != self.spec.in_channels {
            return Err(Error::shape(
                "forward",
                format!(
                    "input has {} channels but backbone expects {}",
                    s[1], self.spec.in_channels
                ),
            ));
        }
        Ok(())
    }

    /// Spatial size of the feature at unit count `upto` for a given input.
    fn spatial_after(&self, input_hw: (usize, usize), upto: usize) -> (usize, usize) {
        let mut hw = input_hw;
        if let Some(stem) = &self.stem {
            hw = stem.conv.out_hw(hw.0, hw.1, stem.conv.stride);
        }
        for unit in &self.units[..upto] {
            let (_, next) = unit.macs(hw.0, hw.1);
            hw = next;
        }
        hw
    }

    /// Spatial size of the final tapped feature for a given input.
    pub fn final_feature_hw(&self, input_hw: (usize, usize)) -> (usize, usize) {
        self.spatial_after(input_hw, self.units.len())
    }

    /// Run the network, tapping every module boundary and applying every
    /// classifier head.
    pub fn forward_collect(&self, batch: &Tensor<E>, mode: Mode) -> Result<FeatureSet<E>> {
        self.check_input(batch)?;
        let input_hw = (batch.shape()[2], batch.shape()[3]);
        let final_hw = self.final_feature_hw(input_hw);

        let mut features = Vec::with_capacity(self.taps.len());
        let mut x = match &self.stem {
            Some(stem) => stem.forward(batch, mode)?,
            None => batch.clone(),
        };
        let mut next_tap = 0usize;
        for (i, unit) in self.units.iter().enumerate() {
            x = unit.forward(&x, mode)?;
            if i + 1 == self.taps[next_tap] {
                features.push(x.clone());
                next_tap += 1;
            }
        }
        debug_assert_eq!(features.len(), self.taps.len());

        let mut logits = Vec::with_capacity(self.taps.len());
        for (t, head) in self.heads.iter().enumerate() {
            logits.push(head.forward(&features[t], final_hw, mode)?);
        }
        let last = features.last().expect("at least one tap");
        logits.push(self.classifier.forward(&last.global_avg_pool()?)?);

        Ok(FeatureSet { features, logits })
    }

    /// Forward through modules 1..=k only, returning logits of head k.
    /// Runs the identical ops as [`forward_collect`], so outputs agree
    /// bit for bit.
    pub fn forward_prefix(&self, batch: &Tensor<E>, k: usize, mode: Mode) -> Result<Tensor<E>> {
        let t = self.num_modules();
        if k == 0 || k > t {
            return Err(Error::arg(
                "forward_prefix",
                format!("module {k} out of range 1..={t}"),
            ));
        }
        self.check_input(batch)?;
        let input_hw = (batch.shape()[2], batch.shape()[3]);
        let final_hw = self.final_feature_hw(input_hw);
        let mut x = match &self.stem {
            Some(stem) => stem.forward(batch, mode)?,
            None => batch.clone(),
        };
        for unit in &self.units[..self.taps[k - 1]] {
            x = unit.forward(&x, mode)?;
        }
        if k == t {
            self.classifier.forward(&x.global_avg_pool()?)
        } else {
            self.heads[k - 1].forward(&x, final_hw, mode)
        }
    }

    /// Parameters of the trunk and final classifier (excluding the
    /// intermediate heads), in a deterministic order.
    pub fn base_params(&self) -> Vec<Tensor<E>> {
        let mut named = Vec::new();
        if let Some(stem) = &self.stem {
            stem.collect_params("stem", &mut named);
        }
        for (i, unit) in self.units.iter().enumerate() {
            unit.collect_params(&format!("units.{i}"), &mut named);
        }
        self.classifier.collect_params("classifier", &mut named);
        named.into_iter().map(|(_, t)| t).collect()
    }

    /// Trainable parameters in a deterministic order.
    pub fn collect_params(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        if let Some(stem) = &self.stem {
            stem.collect_params("stem", &mut out);
        }
        for (i, unit) in self.units.iter().enumerate() {
            unit.collect_params(&format!("units.{i}"), &mut out);
        }
        for (t, head) in self.heads.iter().enumerate() {
            head.collect_params(&format!("heads.{t}"), &mut out);
        }
        self.classifier.collect_params("classifier", &mut out);
        out
    }

    fn for_each_bn(&self, f: &mut dyn FnMut(String, &BatchNorm2d<E>)) {
        if let Some(stem) = &self.stem {
            f("stem.bn".to_string(), &stem.bn);
        }
        for (i, unit) in self.units.iter().enumerate() {
            unit.for_each_bn(&format!("units.{i}"), f);
        }
        for (t, head) in self.heads.iter().enumerate() {
            f(format!("heads.{t}.bn"), &head.bn);
        }
    }

    /// Full state (parameters plus batchnorm running statistics) for
    /// checkpointing, name -> (shape, values).
    pub fn state_entries(&self) -> Vec<(String, Vec<usize>, Vec<E>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<E>)> = self
            .collect_params()
            .into_iter()
            .map(|(name, t)| (name, t.shape().to_vec(), t.to_vec()))
            .collect();
        self.for_each_bn(&mut |name, bn| {
            let (mean, var) = bn.stats_snapshot();
            let c = mean.len();
            out.push((format!("{name}.running_mean"), vec![c], mean));
            out.push((format!("{name}.running_var"), vec![c], var));
        });
        out
    }

    /// Load a state map produced by [`state_entries`] on an identically
    /// shaped backbone.
    pub fn load_state(&self, entries: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        for (name, tensor) in self.collect_params() {
            let (shape, values) = entries.get(&name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter '{name}'"))
            })?;
            if shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(values);
        }
        let mut failed = None;
        self.for_each_bn(&mut |name, bn| {
            if failed.is_some() {
                return;
            }
            for (suffix, is_mean) in [("running_mean", true), ("running_var", false)] {
                let key = format!("{name}.{suffix}");
                match entries.get(&key) {
                    Some((_, values)) if values.len() == bn.running_mean.borrow().len() => {
                        if is_mean {
                            bn.running_mean.borrow_mut().copy_from_slice(values);
                        } else {
                            bn.running_var.borrow_mut().copy_from_slice(values);
                        }
                    }
                    _ => failed = Some(key),
                }
            }
        });
        match failed {
            Some(key) => Err(Error::Checkpoint(format!("missing or misshaped '{key}'"))),
            None => Ok(()),
        }
    }

    /// Early-exit view: modules 1..=k plus head k, sharing this backbone's
    /// weights.
    pub fn truncate(&self, k: usize) -> Result<CompactModel<'_, E>> {
        let t = self.num_modules();
        if k == 0 || k > t {
            return Err(Error::arg(
                "truncate",
                format!("module {k} out of range 1..={t}"),
            ));
        }
        Ok(CompactModel { backbone: self, k })
    }

    pub(crate) fn tap_channels(&self) -> Vec<usize> {
        self.taps
            .iter()
            .map(|&tp| self.units[tp - 1].out_ch())
            .collect()
    }

    pub(crate) fn taps(&self) -> &[usize] {
        &self.taps
    }

    pub(crate) fn stem_ref(&self) -> Option<&ConvBnRelu<E>> {
        self.stem.as_ref()
    }

    pub(crate) fn unit_param_count(&self, i: usize) -> u64 {
        self.units[i].param_count()
    }

    pub(crate) fn unit_macs(&self, i: usize, hw: (usize, usize)) -> (u64, (usize, usize)) {
        self.units[i].macs(hw.0, hw.1)
    }
}

/// Truncated early-exit model borrowing a trained backbone.
pub struct CompactModel<'a, E: Elem> {
    backbone: &'a Backbone<E>,
    pub k: usize,
}

impl<'a, E: Elem> CompactModel<'a, E> {
    pub fn forward(&self, batch: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        self.backbone.forward_prefix(batch, self.k, mode)
    }

    pub fn param_count(&self) -> u64 {
        crate::nn::count::count_params(self.backbone, Some(self.k))
            .expect("k validated at construction")
    }

    pub fn macs(&self, input_hw: (usize, usize)) -> u64 {
        crate::nn::count::count_macs(self.backbone, input_hw, Some(self.k))
            .expect("k validated at construction")
    }
}
