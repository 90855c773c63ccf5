//! Contracts of the three training modes on fast desk-scale runs.

use muse_core::checkpoint::Checkpoint;
use muse_core::data::idx::{encode_idx_images, encode_idx_labels};
use muse_core::data::{generate_glyphs, load_idx, LabeledDataset};
use muse_core::nn::{build_backbone, Architecture, Backbone, BackboneSpec, Mode};
use muse_core::objective::{MuseVariant, ObjectiveConfig};
use muse_core::train::{
    evaluate, run_offline_distill, run_online_distill, run_self_distill, Schedule, TrainOptions,
};
use muse_core::Tensor;

fn glyph_dataset(count: usize, seed: u64, tag: &str) -> LabeledDataset {
    let dir = std::env::temp_dir().join("muse-train-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let glyphs = generate_glyphs(count, seed);
    let img = dir.join(format!("{tag}-images"));
    let lab = dir.join(format!("{tag}-labels"));
    std::fs::write(&img, encode_idx_images(28, 28, &glyphs.images)).unwrap();
    std::fs::write(&lab, encode_idx_labels(&glyphs.labels)).unwrap();
    load_idx(&img, &lab).unwrap()
}

fn spec() -> BackboneSpec {
    BackboneSpec::new(Architecture::SmallCnn4, 10, 1)
}

fn opts(seed: u64, epochs: usize, run_id: &str) -> TrainOptions {
    TrainOptions {
        batch_size: 32,
        schedule: Schedule::new(0.05, vec![], 0.1, epochs).unwrap(),
        momentum: 0.9,
        weight_decay: 5e-4,
        augment: false,
        seed,
        eval_every: 1,
        run_id: run_id.to_string(),
    }
}

fn baseline_obj() -> ObjectiveConfig {
    ObjectiveConfig {
        muse_variant: MuseVariant::None,
        use_ce_heads: false,
        use_kd_heads: false,
        ..ObjectiveConfig::default()
    }
}

fn muse_obj(embed: usize) -> ObjectiveConfig {
    ObjectiveConfig {
        muse_variant: MuseVariant::Additive,
        use_ce_heads: true,
        use_kd_heads: true,
        embed,
        ..ObjectiveConfig::default()
    }
}

#[test]
fn zero_weight_muse_reproduces_the_baseline_trajectory() {
    let train = glyph_dataset(120, 11, "degen-train");
    let eval = glyph_dataset(40, 12, "degen-eval");

    let bb_a = build_backbone::<f32>(&spec(), 5).unwrap();
    let cfg_a = ObjectiveConfig {
        muse_variant: MuseVariant::Additive,
        use_ce_heads: false,
        use_kd_heads: false,
        lambda_muse: 0.0,
        embed: 8,
        ..ObjectiveConfig::default()
    };
    let log_a = run_self_distill(&bb_a, &train, &eval, &cfg_a, &opts(5, 3, "a")).unwrap();

    let bb_b = build_backbone::<f32>(&spec(), 5).unwrap();
    let log_b = run_self_distill(&bb_b, &train, &eval, &baseline_obj(), &opts(5, 3, "b")).unwrap();

    // identical trajectories: every shared metric matches exactly
    for metric in ["top1", "ce"] {
        for module in 1..=4 {
            let a = log_a.series("eval", Some(module), metric);
            let b = log_b.series("eval", Some(module), metric);
            assert_eq!(a, b, "eval {metric} module {module}");
        }
    }
    let a_tot = log_a.series("train", None, "total");
    let b_tot = log_b.series("train", None, "total");
    assert_eq!(a_tot, b_tot, "train total trajectories diverged");

    // and the four module accuracies are reported every eval epoch
    for module in 1..=4 {
        assert_eq!(log_a.series("eval", Some(module), "top1").len(), 3);
    }
}

#[test]
fn same_seed_and_config_reproduce_metrics_exactly() {
    let train = glyph_dataset(100, 21, "repro-train");
    let eval = glyph_dataset(30, 22, "repro-eval");
    let run = || {
        let bb = build_backbone::<f32>(&spec(), 9).unwrap();
        run_self_distill(&bb, &train, &eval, &muse_obj(8), &opts(9, 2, "r")).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.rows.len(), b.rows.len());
    for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
        assert_eq!(ra, rb);
    }
}

#[test]
fn eval_of_a_fixed_model_is_deterministic() {
    let eval = glyph_dataset(50, 31, "evaldet");
    let bb = build_backbone::<f32>(&spec(), 2).unwrap();
    let a = evaluate(&bb, &eval, 16).unwrap();
    let b = evaluate(&bb, &eval, 16).unwrap();
    assert_eq!(a, b);
}

#[test]
fn online_twins_with_identical_seeds_report_identical_metrics() {
    let train = glyph_dataset(100, 41, "online-train");
    let eval = glyph_dataset(30, 42, "online-eval");
    let net1 = build_backbone::<f32>(&spec(), 7).unwrap();
    let net2 = build_backbone::<f32>(&spec(), 7).unwrap();
    let obj = ObjectiveConfig {
        muse_variant: MuseVariant::Additive,
        use_ce_heads: false,
        use_kd_heads: false,
        embed: 8,
        ..ObjectiveConfig::default()
    };
    let log =
        run_online_distill(&net1, &net2, (7, 7), &train, &eval, &obj, &opts(3, 2, "tw")).unwrap();
    for metric in ["top1"] {
        for module in 1..=4 {
            let a = log.series("eval", Some(module), metric);
            // series are keyed by run_id via rows; filter manually
            let rows_net1: Vec<f64> = log
                .rows
                .iter()
                .filter(|r| r.run_id == "tw/net1" && r.metric == metric && r.module == Some(module) && r.split == "eval")
                .map(|r| r.value)
                .collect();
            let rows_net2: Vec<f64> = log
                .rows
                .iter()
                .filter(|r| r.run_id == "tw/net2" && r.metric == metric && r.module == Some(module) && r.split == "eval")
                .map(|r| r.value)
                .collect();
            assert!(!rows_net1.is_empty());
            assert_eq!(rows_net1, rows_net2, "twin metrics diverged");
            let _ = a;
        }
    }
}

#[test]
fn online_without_cross_terms_degenerates_to_independent_baselines() {
    let train = glyph_dataset(100, 51, "indep-train");
    let eval = glyph_dataset(30, 52, "indep-eval");
    let obj = ObjectiveConfig {
        muse_variant: MuseVariant::None,
        use_ce_heads: false,
        use_kd_heads: false,
        lambda_kd: 0.0,
        ..ObjectiveConfig::default()
    };
    let net1 = build_backbone::<f32>(&spec(), 13).unwrap();
    let net2 = build_backbone::<f32>(&spec(), 14).unwrap();
    let log =
        run_online_distill(&net1, &net2, (13, 14), &train, &eval, &obj, &opts(4, 2, "on")).unwrap();

    let solo = build_backbone::<f32>(&spec(), 13).unwrap();
    let solo_log = run_self_distill(&solo, &train, &eval, &baseline_obj(), &opts(4, 2, "solo")).unwrap();

    let net1_top1: Vec<f64> = log
        .rows
        .iter()
        .filter(|r| r.run_id == "on/net1" && r.metric == "top1" && r.module == Some(4) && r.split == "eval")
        .map(|r| r.value)
        .collect();
    let solo_top1: Vec<f64> = solo_log
        .series("eval", Some(4), "top1")
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    assert_eq!(net1_top1, solo_top1, "net1 should match a solo baseline exactly");
}

#[test]
fn offline_teacher_stays_bitwise_frozen() {
    let train = glyph_dataset(100, 61, "off-train");
    let eval = glyph_dataset(30, 62, "off-eval");
    let teacher = build_backbone::<f32>(&spec(), 17).unwrap();
    // give the teacher non-default running stats by training it briefly
    let _ = run_self_distill(&teacher, &train, &eval, &baseline_obj(), &opts(17, 1, "t")).unwrap();
    let before: Vec<Vec<u32>> = teacher
        .state_entries()
        .into_iter()
        .map(|(_, _, v)| v.iter().map(|x| x.to_bits()).collect())
        .collect();

    let student = build_backbone::<f32>(&spec(), 18).unwrap();
    let obj = ObjectiveConfig {
        muse_variant: MuseVariant::Additive,
        use_ce_heads: false,
        use_kd_heads: false,
        embed: 8,
        ..ObjectiveConfig::default()
    };
    let _ = run_offline_distill(&teacher, &student, 18, &train, &eval, &obj, &opts(18, 2, "off"))
        .unwrap();

    let after: Vec<Vec<u32>> = teacher
        .state_entries()
        .into_iter()
        .map(|(_, _, v)| v.iter().map(|x| x.to_bits()).collect())
        .collect();
    assert_eq!(before, after, "teacher was modified by offline distillation");
}

#[test]
fn truncated_exit_matches_full_model_after_training() {
    let train = glyph_dataset(80, 71, "trunc-train");
    let eval = glyph_dataset(20, 72, "trunc-eval");
    let bb = build_backbone::<f32>(&spec(), 23).unwrap();
    let _ = run_self_distill(&bb, &train, &eval, &muse_obj(8), &opts(23, 1, "tr")).unwrap();

    let (batch, _) = eval.batch::<f32>(&[0, 1, 2, 3, 4]);
    let fs = bb.forward_collect(&batch, Mode::Eval).unwrap();
    for k in 1..=4usize {
        let compact = bb.truncate(k).unwrap();
        let logits = compact.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(
            logits.to_vec(),
            fs.logits[k - 1].to_vec(),
            "exit {k} diverged from collected logits"
        );
    }
    // early exits strictly shrink the model
    let mut prev = 0u64;
    for k in 1..=4usize {
        let p = bb.truncate(k).unwrap().param_count();
        assert!(p > prev);
        prev = p;
    }
}

#[test]
fn checkpoint_round_trip_preserves_eval_metrics() {
    let train = glyph_dataset(80, 81, "ckpt-train");
    let eval = glyph_dataset(30, 82, "ckpt-eval");
    let bb = build_backbone::<f32>(&spec(), 27).unwrap();
    let _ = run_self_distill(&bb, &train, &eval, &baseline_obj(), &opts(27, 1, "ck")).unwrap();
    let before = evaluate(&bb, &eval, 16).unwrap();

    let path = std::env::temp_dir().join("muse-train-tests/trained.ckpt");
    Checkpoint::from_backbone(&bb).save(&path).unwrap();
    let restored: Backbone<f32> = {
        let fresh = build_backbone::<f32>(&spec(), 99).unwrap();
        Checkpoint::load(&path)
            .unwrap()
            .load_into_backbone(&fresh, true)
            .unwrap();
        fresh
    };
    let after = evaluate(&restored, &eval, 16).unwrap();
    assert_eq!(before, after);
    let x = Tensor::<f32>::zeros(&[1, 1, 28, 28]);
    let a = bb.forward_collect(&x, Mode::Eval).unwrap();
    let b = restored.forward_collect(&x, Mode::Eval).unwrap();
    assert_eq!(a.logits[3].to_vec(), b.logits[3].to_vec());
}
