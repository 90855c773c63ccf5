//! Parameter and FLOP accounting.
//!
//! Convention: one multiply-accumulate = 2 FLOPs; batchnorm and activations
//! are ignored. Counts are reported as both MACs and FLOPs since published
//! figures rarely state their convention.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nn::backbone::Backbone;

/// Per-module breakdown for one input resolution.
#[derive(Debug, Clone)]
pub struct ModuleCount {
    pub module: usize,
    /// Backbone parameters inside this module.
    pub backbone_params: u64,
    /// Parameters of this module's classifier head.
    pub head_params: u64,
    /// Backbone MACs inside this module.
    pub backbone_macs: u64,
    /// MACs of this module's head.
    pub head_macs: u64,
    /// Parameters of the truncated model exiting here (prefix + this head).
    pub cumulative_params: u64,
    /// MACs of the truncated model exiting here.
    pub cumulative_macs: u64,
}

pub fn macs_to_flops(macs: u64) -> u64 {
    macs * 2
}

/// Parameters of the model truncated at `up_to_module` (prefix plus that
/// module's head); `None` counts the full network with its final classifier.
pub fn count_params<E: Elem>(backbone: &Backbone<E>, up_to_module: Option<usize>) -> Result<u64> {
    let t = backbone.num_modules();
    let k = up_to_module.unwrap_or(t);
    if k == 0 || k > t {
        return Err(Error::arg(
            "count_params",
            format!("module {k} out of range 1..={t}"),
        ));
    }
    let taps = backbone.taps();
    let mut total = backbone
        .stem_ref()
        .map_or(0, |s| s.param_count());
    for i in 0..taps[k - 1] {
        total += backbone.unit_param_count(i);
    }
    total += if k == t {
        backbone.classifier.param_count()
    } else {
        backbone.heads[k - 1].param_count()
    };
    Ok(total)
}

/// MACs of the truncated model at the given input resolution.
pub fn count_macs<E: Elem>(
    backbone: &Backbone<E>,
    input_hw: (usize, usize),
    up_to_module: Option<usize>,
) -> Result<u64> {
    let t = backbone.num_modules();
    let k = up_to_module.unwrap_or(t);
    if k == 0 || k > t {
        return Err(Error::arg(
            "count_flops",
            format!("module {k} out of range 1..={t}"),
        ));
    }
    let taps = backbone.taps();
    let mut hw = input_hw;
    let mut total = 0u64;
    if let Some(stem) = backbone.stem_ref() {
        let (oh, ow) = stem.conv.out_hw(hw.0, hw.1, stem.conv.stride);
        total += stem.conv.macs(oh, ow);
        hw = (oh, ow);
    }
    let mut tap_hw = hw;
    let mut final_hw = hw;
    for i in 0..taps[t - 1] {
        let (macs, next) = backbone.unit_macs(i, final_hw);
        if i < taps[k - 1] {
            total += macs;
            tap_hw = next;
        }
        final_hw = next;
    }
    total += if k == t {
        backbone.classifier.macs(true)
    } else {
        backbone.heads[k - 1].macs(tap_hw, final_hw)
    };
    Ok(total)
}

/// FLOPs (2 x MACs) of the truncated model.
pub fn count_flops<E: Elem>(
    backbone: &Backbone<E>,
    input_hw: (usize, usize),
    up_to_module: Option<usize>,
) -> Result<u64> {
    count_macs(backbone, input_hw, up_to_module).map(macs_to_flops)
}

/// Full per-module table for the `count` command.
pub fn count_report<E: Elem>(
    backbone: &Backbone<E>,
    input_hw: (usize, usize),
) -> Result<Vec<ModuleCount>> {
    let t = backbone.num_modules();
    let taps = backbone.taps();
    let mut report = Vec::with_capacity(t);

    let mut hw = input_hw;
    let mut stem_params = 0u64;
    let mut stem_macs = 0u64;
    if let Some(stem) = backbone.stem_ref() {
        let (oh, ow) = stem.conv.out_hw(hw.0, hw.1, stem.conv.stride);
        stem_params = stem.param_count();
        stem_macs = stem.conv.macs(oh, ow);
        hw = (oh, ow);
    }
    let final_hw = backbone.final_feature_hw(input_hw);

    let mut unit_idx = 0usize;
    let mut cum_params = 0u64;
    let mut cum_macs = 0u64;
    for m in 1..=t {
        let mut params = if m == 1 { stem_params } else { 0 };
        let mut macs = if m == 1 { stem_macs } else { 0 };
        while unit_idx < taps[m - 1] {
            params += backbone.unit_param_count(unit_idx);
            let (um, next) = backbone.unit_macs(unit_idx, hw);
            macs += um;
            hw = next;
            unit_idx += 1;
        }
        cum_params += params;
        cum_macs += macs;
        let (head_params, head_macs) = if m == t {
            (backbone.classifier.param_count(), backbone.classifier.macs(true))
        } else {
            (
                backbone.heads[m - 1].param_count(),
                backbone.heads[m - 1].macs(hw, final_hw),
            )
        };
        report.push(ModuleCount {
            module: m,
            backbone_params: params,
            head_params,
            backbone_macs: macs,
            head_macs,
            cumulative_params: cum_params + head_params,
            cumulative_macs: cum_macs + head_macs,
        });
    }
    Ok(report)
}
