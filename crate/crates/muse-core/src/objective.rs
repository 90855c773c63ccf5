//! Composition of the total training objective: the information terms in
//! their additive and multiplicative combinations, per-module cross-entropy,
//! logits distillation, and the L2 comparator.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::infoest::{mi_loss, si_loss, Discriminator, PairingPlan};
use crate::nn::backbone::{Backbone, FeatureSet};
use crate::nn::layers::Mode;
use crate::tensor::softmax_util::log_softmax_plain;
use crate::tensor::Tensor;

/// Which feature-discrepancy term couples each shallow feature to the last
/// feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuseVariant {
    None,
    MiOnly,
    SiOnly,
    /// si + mi: both information terms optimized jointly.
    Additive,
    /// si * mi: the self-information loss weights the mutual-information
    /// gradient.
    Multiplicative,
    /// Mean-squared comparator on projected features.
    L2,
}

impl MuseVariant {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "none" => MuseVariant::None,
            "mi-only" => MuseVariant::MiOnly,
            "si-only" => MuseVariant::SiOnly,
            "additive" => MuseVariant::Additive,
            "multiplicative" => MuseVariant::Multiplicative,
            "l2" => MuseVariant::L2,
            other => {
                return Err(Error::arg(
                    "muse_variant",
                    format!("unknown variant '{other}'"),
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            MuseVariant::None => "none",
            MuseVariant::MiOnly => "mi-only",
            MuseVariant::SiOnly => "si-only",
            MuseVariant::Additive => "additive",
            MuseVariant::Multiplicative => "multiplicative",
            MuseVariant::L2 => "l2",
        }
    }

    pub fn needs_mi(&self) -> bool {
        matches!(
            self,
            MuseVariant::MiOnly | MuseVariant::Additive | MuseVariant::Multiplicative
        )
    }

    pub fn needs_si(&self) -> bool {
        matches!(
            self,
            MuseVariant::SiOnly | MuseVariant::Additive | MuseVariant::Multiplicative
        )
    }
}

/// Declarative selection of loss terms and weights.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub muse_variant: MuseVariant,
    /// Cross-entropy supervision on intermediate heads.
    pub use_ce_heads: bool,
    /// Logits distillation from the final head into intermediate heads.
    pub use_kd_heads: bool,
    pub lambda_muse: f64,
    pub lambda_kd: f64,
    pub kd_temperature: f64,
    /// Discriminator embedding width.
    pub embed: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            muse_variant: MuseVariant::Additive,
            use_ce_heads: true,
            use_kd_heads: true,
            lambda_muse: 1.0,
            lambda_kd: 1.0,
            kd_temperature: 4.0,
            embed: 64,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_muse", self.lambda_muse), ("lambda_kd", self.lambda_kd)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::arg(
                    "objective",
                    format!("{name} must be finite and non-negative, got {v}"),
                ));
            }
        }
        if !(self.kd_temperature.is_finite() && self.kd_temperature > 0.0) {
            return Err(Error::arg(
                "objective",
                format!("kd_temperature must be positive, got {}", self.kd_temperature),
            ));
        }
        if self.embed == 0 {
            return Err(Error::arg("objective", "embed width must be positive"));
        }
        Ok(())
    }
}

/// Additive combination of the two positive JSD losses; minimizing the sum
/// maximizes both information quantities.
pub fn additive_muse<E: Elem>(si: &Tensor<E>, mi: &Tensor<E>) -> Result<Tensor<E>> {
    si.add(mi)
}

/// Multiplicative combination: d(si*mi)/d(mi) = si, so the self-information
/// loss literally scales the mutual-information gradient.
pub fn multiplicative_muse<E: Elem>(si: &Tensor<E>, mi: &Tensor<E>) -> Result<Tensor<E>> {
    si.mul(mi)
}

/// Mean cross-entropy from raw logits.
pub fn cross_entropy<E: Elem>(logits: &Tensor<E>, labels: &[usize]) -> Result<Tensor<E>> {
    logits.log_softmax()?.nll_pick_mean(labels)
}

/// Temperature-softened distillation loss
/// `tau^2 * KL(softmax(teacher/tau) || softmax(student/tau))`, batch mean.
/// The teacher side is treated as a constant.
pub fn kd_loss<E: Elem>(
    student_logits: &Tensor<E>,
    teacher_logits: &Tensor<E>,
    temperature: f64,
) -> Result<Tensor<E>> {
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::shape(
            "kd_loss",
            format!(
                "student {:?} vs teacher {:?}",
                student_logits.shape(),
                teacher_logits.shape()
            ),
        ));
    }
    if student_logits.shape().len() != 2 {
        return Err(Error::shape(
            "kd_loss",
            format!("expected [N, K] logits, got {:?}", student_logits.shape()),
        ));
    }
    let (n, k) = (student_logits.shape()[0], student_logits.shape()[1]);
    let tau = temperature;

    // teacher soft targets computed outside the graph
    let teacher = teacher_logits.detach();
    let scaled: Vec<E> = teacher
        .data()
        .iter()
        .map(|&v| v * E::from_f64(1.0 / tau))
        .collect();
    let log_pt = log_softmax_plain(&scaled, n, k);
    let pt: Vec<E> = log_pt.iter().map(|&v| v.exp()).collect();
    // sum p_t * ln p_t, the constant part of the KL
    let entropy_term: E = log_pt
        .iter()
        .zip(pt.iter())
        .map(|(&lp, &p)| p * lp)
        .sum();

    let pt_const = Tensor::new(pt, &[n, k])?;
    let log_ps = student_logits.scale(1.0 / tau).log_softmax()?;
    let cross: Tensor<E> = pt_const.mul(&log_ps)?.sum();
    // tau^2 / N * (sum p ln p - sum p ln q)
    let scale = tau * tau / n as f64;
    Ok(cross
        .scale(-scale)
        .add_scalar(entropy_term.to_f64() * scale))
}

/// Mean squared difference between a projected shallow feature and the last
/// feature.
pub fn l2_discrepancy<E: Elem>(projected: &Tensor<E>, last: &Tensor<E>) -> Result<Tensor<E>> {
    if projected.shape() != last.shape() {
        return Err(Error::shape(
            "l2_discrepancy",
            format!(
                "projection {:?} does not match last feature {:?}",
                projected.shape(),
                last.shape()
            ),
        ));
    }
    let diff = projected.sub(last)?;
    Ok(diff.mul(&diff)?.mean())
}

/// Per-term scalars from one total-loss evaluation; `total` equals the
/// weighted sum of the parts.
#[derive(Debug, Clone, Default)]
pub struct LossReport {
    /// ce[t] for t = 1..T (last entry is the final head).
    pub ce: Vec<Option<f64>>,
    /// kd[t] for t = 1..T-1.
    pub kd: Vec<Option<f64>>,
    pub mi: Vec<Option<f64>>,
    pub si: Vec<Option<f64>>,
    /// Combined per-module discrepancy term (whatever the variant computes).
    pub muse: Vec<Option<f64>>,
    pub total: f64,
}

impl LossReport {
    fn sized(t: usize) -> Self {
        LossReport {
            ce: vec![None; t],
            kd: vec![None; t.saturating_sub(1)],
            mi: vec![None; t.saturating_sub(1)],
            si: vec![None; t.saturating_sub(1)],
            muse: vec![None; t.saturating_sub(1)],
            total: 0.0,
        }
    }

    /// Recompute the weighted sum from the recorded parts.
    pub fn recombine(&self, config: &ObjectiveConfig) -> f64 {
        let mut total = self.ce.last().copied().flatten().unwrap_or(0.0);
        if config.use_ce_heads {
            for v in &self.ce[..self.ce.len().saturating_sub(1)] {
                total += v.unwrap_or(0.0);
            }
        }
        if config.use_kd_heads {
            for v in &self.kd {
                total += config.lambda_kd * v.unwrap_or(0.0);
            }
        }
        for v in &self.muse {
            total += config.lambda_muse * v.unwrap_or(0.0);
        }
        total
    }
}

/// Estimators attached to one backbone: a discriminator per (shallow, last)
/// pair and per self-information term, no weight sharing.
pub struct EstimatorBank<E: Elem> {
    pub mi: Vec<Discriminator<E>>,
    pub si: Vec<Discriminator<E>>,
}

impl<E: Elem> EstimatorBank<E> {
    /// Build estimators for `backbone`'s tap channels. `global_ch` is the
    /// channel count of the feature supplying the global view (the last
    /// feature of this backbone in self-distillation, possibly another
    /// network's in online/offline distillation).
    pub fn init(
        rng: &mut crate::rng::SeedRng,
        tap_channels: &[usize],
        global_ch: usize,
        embed: usize,
    ) -> Self {
        let shallow = &tap_channels[..tap_channels.len() - 1];
        EstimatorBank {
            mi: shallow
                .iter()
                .map(|&c| Discriminator::init(rng, c, global_ch, embed))
                .collect(),
            si: shallow
                .iter()
                .map(|&c| Discriminator::init(rng, c, c, embed))
                .collect(),
        }
    }

    pub fn for_backbone(
        rng: &mut crate::rng::SeedRng,
        backbone: &Backbone<E>,
        embed: usize,
    ) -> Self {
        let taps = backbone.tap_channels();
        let global_ch = *taps.last().expect("backbone has taps");
        Self::init(rng, &taps, global_ch, embed)
    }

    pub fn trainable_params(&self) -> Vec<Tensor<E>> {
        let mut out = Vec::new();
        for d in self.mi.iter().chain(self.si.iter()) {
            out.extend(d.trainable_params());
        }
        out
    }
}

/// Everything total_loss needs beyond the forward features.
pub struct ObjectiveInputs<'a, E: Elem> {
    pub labels: &'a [usize],
    pub plan: &'a PairingPlan,
    /// Required whenever the variant involves mi or si terms.
    pub estimators: Option<&'a EstimatorBank<E>>,
    /// Feature supplying the global view for MI terms; the backbone's own
    /// last feature in self-distillation, the teacher's in online/offline.
    pub global_feature: &'a Tensor<E>,
    /// Teacher logits for the KD terms (detached inside kd_loss). In
    /// self-distillation this is the backbone's own final head.
    pub teacher_logits: &'a Tensor<E>,
    /// Backbone whose heads provide the L2 projections (only used by the l2
    /// variant).
    pub backbone: Option<(&'a Backbone<E>, Mode)>,
}

/// Weighted sum of the configured terms over a collected feature set.
///
/// total = ce[T]
///       + use_ce * sum_t ce[t]
///       + use_kd * lambda_kd * sum_t kd(logits_t, teacher)
///       + lambda_muse * sum_t variant(t)
pub fn total_loss<E: Elem>(
    features: &FeatureSet<E>,
    inputs: &ObjectiveInputs<'_, E>,
    config: &ObjectiveConfig,
) -> Result<(Tensor<E>, LossReport)> {
    config.validate()?;
    let t = features.features.len();
    if t < 2 {
        return Err(Error::arg("total_loss", "need at least 2 modules"));
    }
    let mut report = LossReport::sized(t);
    let bank = |op: &'static str| {
        inputs
            .estimators
            .ok_or_else(|| Error::arg("total_loss", format!("{op} terms need estimators")))
    };

    // final-head task loss is always on
    let ce_last = cross_entropy(&features.logits[t - 1], inputs.labels)?;
    report.ce[t - 1] = Some(ce_last.item().to_f64());
    let mut total = ce_last;

    for i in 0..t - 1 {
        if config.use_ce_heads {
            let ce = cross_entropy(&features.logits[i], inputs.labels)?;
            report.ce[i] = Some(ce.item().to_f64());
            total = total.add(&ce)?;
        }
        if config.use_kd_heads {
            let kd = kd_loss(
                &features.logits[i],
                inputs.teacher_logits,
                config.kd_temperature,
            )?;
            report.kd[i] = Some(kd.item().to_f64());
            total = total.add(&kd.scale(config.lambda_kd))?;
        }
        let term = match config.muse_variant {
            MuseVariant::None => None,
            MuseVariant::MiOnly => {
                let mi = mi_loss(
                    &features.features[i],
                    inputs.global_feature,
                    &bank("mi")?.mi[i],
                    inputs.plan,
                )?;
                report.mi[i] = Some(mi.item().to_f64());
                Some(mi)
            }
            MuseVariant::SiOnly => {
                let si = si_loss(&features.features[i], &bank("si")?.si[i], inputs.plan)?;
                report.si[i] = Some(si.item().to_f64());
                Some(si)
            }
            MuseVariant::Additive | MuseVariant::Multiplicative => {
                let mi = mi_loss(
                    &features.features[i],
                    inputs.global_feature,
                    &bank("mi")?.mi[i],
                    inputs.plan,
                )?;
                let si = si_loss(&features.features[i], &bank("si")?.si[i], inputs.plan)?;
                report.mi[i] = Some(mi.item().to_f64());
                report.si[i] = Some(si.item().to_f64());
                Some(if config.muse_variant == MuseVariant::Additive {
                    additive_muse(&si, &mi)?
                } else {
                    multiplicative_muse(&si, &mi)?
                })
            }
            MuseVariant::L2 => {
                let (backbone, mode) = inputs.backbone.ok_or_else(|| {
                    Error::arg("total_loss", "l2 variant needs the backbone for projections")
                })?;
                let final_hw = (
                    inputs.global_feature.shape()[2],
                    inputs.global_feature.shape()[3],
                );
                let projected =
                    backbone.heads[i].project(&features.features[i], final_hw, mode)?;
                Some(l2_discrepancy(&projected, inputs.global_feature)?)
            }
        };
        if let Some(term) = term {
            report.muse[i] = Some(term.item().to_f64());
            total = total.add(&term.scale(config.lambda_muse))?;
        }
    }

    report.total = total.item().to_f64();
    Ok((total, report))
}
