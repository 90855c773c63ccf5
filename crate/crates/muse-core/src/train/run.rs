//! The three distillation training modes.
//!
//! All modes share one step shape: assemble a seeded batch, collect features
//! and per-module logits, compose the configured objective, and take one SGD
//! step over every parameter that participates in it (backbone, heads,
//! estimators). Runs are reproducible from (config, seed): parameter init,
//! data order, augmentation, and estimator init each draw from their own
//! derived RNG stream.

use crate::data::augment::augment_batch;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::infoest::sample_negatives;
use crate::metrics::MetricsLog;
use crate::nn::backbone::Backbone;
use crate::nn::layers::Mode;
use crate::objective::{
    kd_loss, EstimatorBank, LossReport, MuseVariant, ObjectiveConfig, ObjectiveInputs,
};
use crate::rng::SeedRng;
use crate::tensor::Tensor;
use crate::train::optim::{Schedule, Sgd};

const ORDER_STREAM: u64 = 0x6f72646572; // data order
const AUG_STREAM: u64 = 0x617567; // augmentation
const DISC_STREAM: u64 = 0x64697363; // estimator init

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
    /// Evaluate every this many epochs (the final epoch always evaluates).
    pub eval_every: usize,
    pub run_id: String,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size < 2 {
            return Err(Error::arg(
                "train",
                "batch_size must be at least 2 (negative pairing needs 2 samples)",
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::arg("train", "eval_every must be positive"));
        }
        Ok(())
    }
}

fn validate_data(backbone: &Backbone<f32>, ds: &LabeledDataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::arg("train", format!("{what} dataset is empty")));
    }
    if ds.channels != backbone.spec.in_channels {
        return Err(Error::shape(
            "train",
            format!(
                "{what} data has {} channels, backbone expects {}",
                ds.channels, backbone.spec.in_channels
            ),
        ));
    }
    if ds.num_classes > backbone.spec.num_classes {
        return Err(Error::shape(
            "train",
            format!(
                "{what} data has {} classes, backbone head has {}",
                ds.num_classes, backbone.spec.num_classes
            ),
        ));
    }
    Ok(())
}

/// Parameters that receive gradients under this objective.
fn participating_params(
    backbone: &Backbone<f32>,
    obj: &ObjectiveConfig,
    bank: Option<&EstimatorBank<f32>>,
) -> Vec<Tensor<f32>> {
    let mut params = backbone.base_params();
    let heads_classify = obj.use_ce_heads || obj.use_kd_heads;
    let heads_project = heads_classify || obj.muse_variant == MuseVariant::L2;
    for head in &backbone.heads {
        if heads_project {
            params.extend(head.projection_params());
        }
        if heads_classify {
            params.extend(head.classifier_params());
        }
    }
    if let Some(bank) = bank {
        params.extend(bank.trainable_params());
    }
    params
}

fn build_bank(
    backbone: &Backbone<f32>,
    obj: &ObjectiveConfig,
    global_ch: usize,
    disc_seed: u64,
) -> Option<EstimatorBank<f32>> {
    (obj.muse_variant.needs_mi() || obj.muse_variant.needs_si()).then(|| {
        let mut rng = SeedRng::derive(disc_seed, DISC_STREAM);
        let taps = backbone.tap_channels();
        EstimatorBank::init(&mut rng, &taps, global_ch, obj.embed)
    })
}

fn top1_counts(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    let data = logits.data();
    let mut correct = 0;
    for (n, &label) in labels.iter().enumerate() {
        let row = &data[n * k..(n + 1) * k];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct
}

/// Top-1 accuracy (percent) of every module head on a dataset.
pub fn evaluate(backbone: &Backbone<f32>, ds: &LabeledDataset, batch_size: usize) -> Result<Vec<f64>> {
    validate_data(backbone, ds, "eval")?;
    let t = backbone.num_modules();
    let mut correct = vec![0usize; t];
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = ds.batch::<f32>(chunk);
        let fs = backbone.forward_collect(&batch, Mode::Eval)?;
        for (m, logits) in fs.logits.iter().enumerate() {
            correct[m] += top1_counts(logits, &labels);
        }
    }
    Ok(correct
        .into_iter()
        .map(|c| 100.0 * c as f64 / ds.len() as f64)
        .collect())
}

/// Per-epoch running sums of loss terms and train accuracy.
struct EpochAccum {
    t: usize,
    batches: usize,
    ce: Vec<f64>,
    ce_seen: Vec<usize>,
    kd: Vec<f64>,
    kd_seen: Vec<usize>,
    mi: Vec<f64>,
    mi_seen: Vec<usize>,
    si: Vec<f64>,
    si_seen: Vec<usize>,
    muse: Vec<f64>,
    muse_seen: Vec<usize>,
    final_kd: f64,
    final_kd_seen: usize,
    total: f64,
    correct: Vec<usize>,
    samples: usize,
}

impl EpochAccum {
    fn new(t: usize) -> Self {
        EpochAccum {
            t,
            batches: 0,
            ce: vec![0.0; t],
            ce_seen: vec![0; t],
            kd: vec![0.0; t - 1],
            kd_seen: vec![0; t - 1],
            mi: vec![0.0; t - 1],
            mi_seen: vec![0; t - 1],
            si: vec![0.0; t - 1],
            si_seen: vec![0; t - 1],
            muse: vec![0.0; t - 1],
            muse_seen: vec![0; t - 1],
            final_kd: 0.0,
            final_kd_seen: 0,
            total: 0.0,
            correct: vec![0; t],
            samples: 0,
        }
    }

    fn add_report(&mut self, report: &LossReport, total_with_extras: f64) {
        self.batches += 1;
        self.total += total_with_extras;
        for (i, v) in report.ce.iter().enumerate() {
            if let Some(v) = v {
                self.ce[i] += v;
                self.ce_seen[i] += 1;
            }
        }
        for (vec, seen, src) in [
            (&mut self.kd, &mut self.kd_seen, &report.kd),
            (&mut self.mi, &mut self.mi_seen, &report.mi),
            (&mut self.si, &mut self.si_seen, &report.si),
            (&mut self.muse, &mut self.muse_seen, &report.muse),
        ] {
            for (i, v) in src.iter().enumerate() {
                if let Some(v) = v {
                    vec[i] += v;
                    seen[i] += 1;
                }
            }
        }
    }

    fn add_final_kd(&mut self, v: f64) {
        self.final_kd += v;
        self.final_kd_seen += 1;
    }

    fn add_top1(&mut self, logits: &[Tensor<f32>], labels: &[usize]) {
        for (m, l) in logits.iter().enumerate() {
            self.correct[m] += top1_counts(l, labels);
        }
        self.samples += labels.len();
    }

    fn emit(&self, log: &mut MetricsLog, run_id: &str, epoch: usize, step: usize) {
        let b = self.batches.max(1) as f64;
        for m in 0..self.t {
            if self.ce_seen[m] > 0 {
                log.push(run_id, epoch, step, "train", Some(m + 1), "ce", self.ce[m] / b);
            }
        }
        for (name, vals, seen) in [
            ("kd", &self.kd, &self.kd_seen),
            ("mi_loss", &self.mi, &self.mi_seen),
            ("si_loss", &self.si, &self.si_seen),
            ("muse", &self.muse, &self.muse_seen),
        ] {
            for m in 0..self.t - 1 {
                if seen[m] > 0 {
                    log.push(run_id, epoch, step, "train", Some(m + 1), name, vals[m] / b);
                }
            }
        }
        if self.final_kd_seen > 0 {
            log.push(run_id, epoch, step, "train", Some(self.t), "kd", self.final_kd / b);
        }
        log.push(run_id, epoch, step, "train", None, "total", self.total / b);
        for m in 0..self.t {
            log.push(
                run_id,
                epoch,
                step,
                "train",
                Some(m + 1),
                "top1",
                100.0 * self.correct[m] as f64 / self.samples.max(1) as f64,
            );
        }
    }
}

fn emit_eval(
    log: &mut MetricsLog,
    run_id: &str,
    epoch: usize,
    step: usize,
    top1: &[f64],
) {
    for (m, &v) in top1.iter().enumerate() {
        log.push(run_id, epoch, step, "eval", Some(m + 1), "top1", v);
    }
}

fn finite_or_err(v: f64, context: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::arg("train", format!("non-finite loss in {context}")))
    }
}

/// Self-distillation: one network, every intermediate feature coupled to its
/// own last feature, heads supervised per the objective config.
pub fn run_self_distill(
    backbone: &Backbone<f32>,
    train_ds: &LabeledDataset,
    eval_ds: &LabeledDataset,
    obj: &ObjectiveConfig,
    opts: &TrainOptions,
) -> Result<MetricsLog> {
    obj.validate()?;
    opts.validate()?;
    validate_data(backbone, train_ds, "train")?;
    validate_data(backbone, eval_ds, "eval")?;

    let final_ch = *backbone.tap_channels().last().expect("taps");
    let bank = build_bank(backbone, obj, final_ch, opts.seed);
    let mut opt = Sgd::new(
        participating_params(backbone, obj, bank.as_ref()),
        opts.schedule.base_lr,
        opts.momentum,
        opts.weight_decay,
    );
    let mut order_rng = SeedRng::derive(opts.seed, ORDER_STREAM);
    let mut aug_rng = SeedRng::derive(opts.seed, AUG_STREAM);
    let mut log = MetricsLog::new();
    let mut step = 0usize;
    let t = backbone.num_modules();

    for epoch in 0..opts.schedule.total_epochs {
        opt.set_lr(opts.schedule.lr_at_epoch(epoch)?);
        let perm = order_rng.permutation(train_ds.len());
        let mut acc = EpochAccum::new(t);
        for chunk in perm.chunks(opts.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut rows = train_ds.raw_rows(chunk);
            if opts.augment {
                augment_batch(
                    &mut rows,
                    chunk.len(),
                    train_ds.channels,
                    train_ds.height,
                    train_ds.width,
                    &mut aug_rng,
                );
            }
            let batch = Tensor::new(
                rows,
                &[chunk.len(), train_ds.channels, train_ds.height, train_ds.width],
            )?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_ds.labels[i]).collect();
            let plan = sample_negatives(chunk.len())?;
            let fs = backbone.forward_collect(&batch, Mode::Train)?;
            let inputs = ObjectiveInputs {
                labels: &labels,
                plan: &plan,
                estimators: bank.as_ref(),
                global_feature: fs.features.last().expect("taps"),
                teacher_logits: fs.logits.last().expect("heads"),
                backbone: Some((backbone, Mode::Train)),
            };
            let (loss, report) = crate::objective::total_loss(&fs, &inputs, obj)?;
            finite_or_err(report.total, "self-distillation step")?;
            opt.zero_grads();
            loss.backward()?;
            opt.step()?;
            acc.add_report(&report, report.total);
            acc.add_top1(&fs.logits, &labels);
            step += 1;
        }
        acc.emit(&mut log, &opts.run_id, epoch, step);
        log.push(&opts.run_id, epoch, step, "train", None, "lr", opt.lr);
        if (epoch + 1) % opts.eval_every == 0 || epoch + 1 == opts.schedule.total_epochs {
            let top1 = evaluate(backbone, eval_ds, opts.batch_size)?;
            emit_eval(&mut log, &opts.run_id, epoch, step, &top1);
        }
    }
    Ok(log)
}

/// Online distillation: two networks train from scratch; each one's
/// intermediate features couple to the other's last feature, and the final
/// logits distill mutually.
#[allow(clippy::too_many_arguments)]
pub fn run_online_distill(
    net1: &Backbone<f32>,
    net2: &Backbone<f32>,
    disc_seeds: (u64, u64),
    train_ds: &LabeledDataset,
    eval_ds: &LabeledDataset,
    obj: &ObjectiveConfig,
    opts: &TrainOptions,
) -> Result<MetricsLog> {
    obj.validate()?;
    opts.validate()?;
    validate_data(net1, train_ds, "train")?;
    validate_data(net2, train_ds, "train")?;
    validate_data(net1, eval_ds, "eval")?;
    if net1.spec.num_classes != net2.spec.num_classes {
        return Err(Error::shape(
            "online",
            format!(
                "class-count mismatch: {} vs {}",
                net1.spec.num_classes, net2.spec.num_classes
            ),
        ));
    }

    let final1 = *net1.tap_channels().last().expect("taps");
    let final2 = *net2.tap_channels().last().expect("taps");
    // each net's estimators take the *other* net's last feature as the
    // global view
    let bank1 = build_bank(net1, obj, final2, disc_seeds.0);
    let bank2 = build_bank(net2, obj, final1, disc_seeds.1);

    let mut params = participating_params(net1, obj, bank1.as_ref());
    params.extend(participating_params(net2, obj, bank2.as_ref()));
    let mut opt = Sgd::new(params, opts.schedule.base_lr, opts.momentum, opts.weight_decay);

    let mut order_rng = SeedRng::derive(opts.seed, ORDER_STREAM);
    let mut aug_rng = SeedRng::derive(opts.seed, AUG_STREAM);
    let mut log = MetricsLog::new();
    let mut step = 0usize;
    let (id1, id2) = (format!("{}/net1", opts.run_id), format!("{}/net2", opts.run_id));

    for epoch in 0..opts.schedule.total_epochs {
        opt.set_lr(opts.schedule.lr_at_epoch(epoch)?);
        let perm = order_rng.permutation(train_ds.len());
        let mut acc1 = EpochAccum::new(net1.num_modules());
        let mut acc2 = EpochAccum::new(net2.num_modules());
        for chunk in perm.chunks(opts.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut rows = train_ds.raw_rows(chunk);
            if opts.augment {
                augment_batch(
                    &mut rows,
                    chunk.len(),
                    train_ds.channels,
                    train_ds.height,
                    train_ds.width,
                    &mut aug_rng,
                );
            }
            let batch = Tensor::new(
                rows,
                &[chunk.len(), train_ds.channels, train_ds.height, train_ds.width],
            )?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_ds.labels[i]).collect();
            let plan = sample_negatives(chunk.len())?;

            let fs1 = net1.forward_collect(&batch, Mode::Train)?;
            let fs2 = net2.forward_collect(&batch, Mode::Train)?;

            let inputs1 = ObjectiveInputs {
                labels: &labels,
                plan: &plan,
                estimators: bank1.as_ref(),
                global_feature: fs2.features.last().expect("taps"),
                teacher_logits: fs2.logits.last().expect("heads"),
                backbone: Some((net1, Mode::Train)),
            };
            let (loss1, rep1) = crate::objective::total_loss(&fs1, &inputs1, obj)?;
            let inputs2 = ObjectiveInputs {
                labels: &labels,
                plan: &plan,
                estimators: bank2.as_ref(),
                global_feature: fs1.features.last().expect("taps"),
                teacher_logits: fs1.logits.last().expect("heads"),
                backbone: Some((net2, Mode::Train)),
            };
            let (loss2, rep2) = crate::objective::total_loss(&fs2, &inputs2, obj)?;

            // mutual distillation on the final logits
            let kd1 = kd_loss(
                fs1.logits.last().expect("heads"),
                fs2.logits.last().expect("heads"),
                obj.kd_temperature,
            )?;
            let kd2 = kd_loss(
                fs2.logits.last().expect("heads"),
                fs1.logits.last().expect("heads"),
                obj.kd_temperature,
            )?;
            let total = loss1
                .add(&loss2)?
                .add(&kd1.scale(obj.lambda_kd))?
                .add(&kd2.scale(obj.lambda_kd))?;
            let total_val = total.item() as f64;
            finite_or_err(total_val, "online-distillation step")?;
            opt.zero_grads();
            total.backward()?;
            opt.step()?;

            acc1.add_report(&rep1, rep1.total + obj.lambda_kd * kd1.item() as f64);
            acc1.add_final_kd(kd1.item() as f64);
            acc1.add_top1(&fs1.logits, &labels);
            acc2.add_report(&rep2, rep2.total + obj.lambda_kd * kd2.item() as f64);
            acc2.add_final_kd(kd2.item() as f64);
            acc2.add_top1(&fs2.logits, &labels);
            step += 1;
        }
        acc1.emit(&mut log, &id1, epoch, step);
        acc2.emit(&mut log, &id2, epoch, step);
        log.push(&opts.run_id, epoch, step, "train", None, "lr", opt.lr);
        if (epoch + 1) % opts.eval_every == 0 || epoch + 1 == opts.schedule.total_epochs {
            emit_eval(&mut log, &id1, epoch, step, &evaluate(net1, eval_ds, opts.batch_size)?);
            emit_eval(&mut log, &id2, epoch, step, &evaluate(net2, eval_ds, opts.batch_size)?);
        }
    }
    Ok(log)
}

/// Offline distillation: a frozen pretrained teacher supplies the last
/// feature and the final-logits soft targets; only the student and its
/// estimators update.
#[allow(clippy::too_many_arguments)]
pub fn run_offline_distill(
    teacher: &Backbone<f32>,
    student: &Backbone<f32>,
    disc_seed: u64,
    train_ds: &LabeledDataset,
    eval_ds: &LabeledDataset,
    obj: &ObjectiveConfig,
    opts: &TrainOptions,
) -> Result<MetricsLog> {
    obj.validate()?;
    opts.validate()?;
    validate_data(teacher, train_ds, "train")?;
    validate_data(student, train_ds, "train")?;
    validate_data(student, eval_ds, "eval")?;
    if teacher.spec.num_classes != student.spec.num_classes {
        return Err(Error::shape(
            "offline",
            format!(
                "class-count mismatch: teacher {} vs student {}",
                teacher.spec.num_classes, student.spec.num_classes
            ),
        ));
    }

    let teacher_final = *teacher.tap_channels().last().expect("taps");
    let bank = build_bank(student, obj, teacher_final, disc_seed);
    let mut opt = Sgd::new(
        participating_params(student, obj, bank.as_ref()),
        opts.schedule.base_lr,
        opts.momentum,
        opts.weight_decay,
    );
    let mut order_rng = SeedRng::derive(opts.seed, ORDER_STREAM);
    let mut aug_rng = SeedRng::derive(opts.seed, AUG_STREAM);
    let mut log = MetricsLog::new();
    let mut step = 0usize;
    let t = student.num_modules();

    for epoch in 0..opts.schedule.total_epochs {
        opt.set_lr(opts.schedule.lr_at_epoch(epoch)?);
        let perm = order_rng.permutation(train_ds.len());
        let mut acc = EpochAccum::new(t);
        for chunk in perm.chunks(opts.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut rows = train_ds.raw_rows(chunk);
            if opts.augment {
                augment_batch(
                    &mut rows,
                    chunk.len(),
                    train_ds.channels,
                    train_ds.height,
                    train_ds.width,
                    &mut aug_rng,
                );
            }
            let batch = Tensor::new(
                rows,
                &[chunk.len(), train_ds.channels, train_ds.height, train_ds.width],
            )?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_ds.labels[i]).collect();
            let plan = sample_negatives(chunk.len())?;

            // frozen teacher runs in eval mode; outputs are detached so no
            // gradient can reach its parameters
            let tfs = teacher.forward_collect(&batch, Mode::Eval)?;
            let teacher_feature = tfs.features.last().expect("taps").detach();
            let teacher_logits = tfs.logits.last().expect("heads").detach();

            let fs = student.forward_collect(&batch, Mode::Train)?;
            let inputs = ObjectiveInputs {
                labels: &labels,
                plan: &plan,
                estimators: bank.as_ref(),
                global_feature: &teacher_feature,
                teacher_logits: &teacher_logits,
                backbone: Some((student, Mode::Train)),
            };
            let (loss, report) = crate::objective::total_loss(&fs, &inputs, obj)?;
            let kd_final = kd_loss(
                fs.logits.last().expect("heads"),
                &teacher_logits,
                obj.kd_temperature,
            )?;
            let total = loss.add(&kd_final.scale(obj.lambda_kd))?;
            let total_val = total.item() as f64;
            finite_or_err(total_val, "offline-distillation step")?;
            opt.zero_grads();
            total.backward()?;
            opt.step()?;

            acc.add_report(&report, total_val);
            acc.add_final_kd(kd_final.item() as f64);
            acc.add_top1(&fs.logits, &labels);
            step += 1;
        }
        acc.emit(&mut log, &opts.run_id, epoch, step);
        log.push(&opts.run_id, epoch, step, "train", None, "lr", opt.lr);
        if (epoch + 1) % opts.eval_every == 0 || epoch + 1 == opts.schedule.total_epochs {
            let top1 = evaluate(student, eval_ds, opts.batch_size)?;
            emit_eval(&mut log, &opts.run_id, epoch, step, &top1);
        }
    }
    Ok(log)
}
