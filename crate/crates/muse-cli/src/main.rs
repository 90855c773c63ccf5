//! Experiment runner.
//!
//! Subcommands: `train` (config-driven self/online/offline distillation),
//! `eval` (full or truncated checkpoint evaluation), `mi-bench` (estimator
//! check on correlated Gaussians), `count` (parameter/FLOP accounting).
//! `MUSE_THREADS` caps intra-op workers; 0 forces the single-threaded
//! deterministic mode.

mod config;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{parse_config, RunMode};
use muse_core::checkpoint::{load_backbone, save_backbone};
use muse_core::infoest::mi_bench;
use muse_core::metrics::MetricsLog;
use muse_core::nn::{
    build_backbone, count_macs, count_params, count_report, macs_to_flops, Architecture,
    BackboneSpec, Mode,
};
use muse_core::train::{run_offline_distill, run_online_distill, run_self_distill};

#[derive(Parser)]
#[command(name = "muse", about = "Self/online/offline distillation with information-based feature coupling", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint, optionally truncated to an early-exit module.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Exit module (1..=T); defaults to the full network.
        #[arg(long)]
        module: Option<usize>,
        /// Run config supplying the architecture and the test split.
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the information estimator on correlated Gaussians and report
    /// converged losses against the analytic value.
    MiBench {
        /// Comma-separated correlation coefficients.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 32)]
        embed: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Optional CSV output (rho,analytic_mi_nats,converged_loss).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-module parameter and FLOP counts.
    Count {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        in_channels: usize,
        #[arg(long, default_value_t = 32)]
        input_size: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Eval {
            ckpt,
            module,
            config,
        } => cmd_eval(&ckpt, module, &config),
        Command::MiBench {
            rho,
            steps,
            dim,
            embed,
            batch,
            lr,
            seed,
            out,
        } => cmd_mi_bench(&rho, steps, dim, embed, batch, lr, seed, out.as_deref()),
        Command::Count {
            arch,
            classes,
            in_channels,
            input_size,
        } => cmd_count(&arch, classes, in_channels, input_size),
    }
}

fn cmd_train(config_path: &std::path::Path) -> Result<()> {
    let config = parse_config(config_path)?;
    let run_id = config.run_id()?;
    let out_dir = config.output_dir.clone();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;

    let (train_ds, test_ds) = config.data.load(config.per_class_limit)?;
    println!(
        "run {run_id}: {} train / {} test samples",
        train_ds.len(),
        test_ds.len()
    );
    let opts = config.train_options(run_id.clone())?;
    let obj = config.objective.to_objective()?;
    let spec = config.backbone.to_spec()?;

    let metrics: MetricsLog = match config.mode {
        RunMode::SelfDistill => {
            let backbone = build_backbone::<f32>(&spec, config.seed)?;
            let log = run_self_distill(&backbone, &train_ds, &test_ds, &obj, &opts)?;
            save_backbone(&backbone, &out_dir.join("model.ckpt"))?;
            report_final(&log, &run_id, backbone.num_modules());
            log
        }
        RunMode::Online => {
            let spec2 = config
                .backbone2
                .as_ref()
                .map(|b| b.to_spec())
                .transpose()?
                .unwrap_or_else(|| spec.clone());
            let seed2 = config.net2_seed.unwrap_or(config.seed + 1);
            let net1 = build_backbone::<f32>(&spec, config.seed)?;
            let net2 = build_backbone::<f32>(&spec2, seed2)?;
            let log = run_online_distill(
                &net1,
                &net2,
                (config.seed, seed2),
                &train_ds,
                &test_ds,
                &obj,
                &opts,
            )?;
            save_backbone(&net1, &out_dir.join("net1.ckpt"))?;
            save_backbone(&net2, &out_dir.join("net2.ckpt"))?;
            report_final(&log, &format!("{run_id}/net1"), net1.num_modules());
            report_final(&log, &format!("{run_id}/net2"), net2.num_modules());
            log
        }
        RunMode::Offline => {
            let teacher_spec = config
                .teacher_backbone
                .as_ref()
                .map(|b| b.to_spec())
                .transpose()?
                .unwrap_or_else(|| spec.clone());
            let teacher_path = config.teacher_ckpt.as_ref().expect("validated");
            let teacher = load_backbone(&teacher_spec, teacher_path)
                .with_context(|| format!("loading teacher {}", teacher_path.display()))?;
            let student = build_backbone::<f32>(&spec, config.seed)?;
            let log = run_offline_distill(
                &teacher,
                &student,
                config.seed,
                &train_ds,
                &test_ds,
                &obj,
                &opts,
            )?;
            save_backbone(&student, &out_dir.join("student.ckpt"))?;
            report_final(&log, &run_id, student.num_modules());
            log
        }
        RunMode::MiBench | RunMode::Count => unreachable!("rejected by validation"),
    };

    let metrics_path = out_dir.join("metrics.csv");
    metrics.write_csv(&metrics_path)?;
    println!("metrics written to {}", metrics_path.display());
    Ok(())
}

fn report_final(log: &MetricsLog, run_id: &str, modules: usize) {
    let mut parts = Vec::new();
    for m in 1..=modules {
        let v = log
            .rows
            .iter()
            .rev()
            .find(|r| r.run_id == run_id && r.split == "eval" && r.module == Some(m) && r.metric == "top1")
            .map(|r| r.value);
        if let Some(v) = v {
            parts.push(format!("module{m} {v:.2}%"));
        }
    }
    println!("{run_id} final eval top-1: {}", parts.join(", "));
}

fn cmd_eval(ckpt: &std::path::Path, module: Option<usize>, config_path: &std::path::Path) -> Result<()> {
    let config = parse_config(config_path)?;
    let spec = config.backbone.to_spec()?;
    let backbone = load_backbone(&spec, ckpt)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let (_, test_ds) = config.data.load(None)?;
    let t = backbone.num_modules();
    let k = module.unwrap_or(t);
    if k == 0 || k > t {
        bail!("module {k} out of range 1..={t}");
    }

    let compact = backbone.truncate(k)?;
    let input_hw = (test_ds.height, test_ds.width);
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..test_ds.len()).collect();
    for chunk in indices.chunks(config.batch_size) {
        let (batch, labels) = test_ds.batch::<f32>(chunk);
        let logits = compact.forward(&batch, Mode::Eval)?;
        let ld = logits.data();
        let kdim = logits.shape()[1];
        for (n, &label) in labels.iter().enumerate() {
            let row = &ld[n * kdim..(n + 1) * kdim];
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if best == label {
                correct += 1;
            }
        }
    }
    let top1 = 100.0 * correct as f64 / test_ds.len() as f64;
    let params = count_params(&backbone, Some(k))?;
    let macs = count_macs(&backbone, input_hw, Some(k))?;
    println!("exit module {k} of {t}");
    println!("top1 {top1:.2}%");
    println!("params {params}");
    println!("macs {macs}");
    println!("flops {}", macs_to_flops(macs));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_mi_bench(
    rhos: &[f64],
    steps: usize,
    dim: usize,
    embed: usize,
    batch: usize,
    lr: f64,
    seed: u64,
    out: Option<&std::path::Path>,
) -> Result<()> {
    if rhos.is_empty() {
        bail!("at least one rho is required");
    }
    let points = mi_bench(rhos, steps, dim, embed, batch, lr, seed)?;
    println!("{:>6} {:>18} {:>16}", "rho", "analytic_mi_nats", "converged_loss");
    for p in &points {
        println!(
            "{:>6.3} {:>18.6} {:>16.6}",
            p.rho, p.analytic_mi_nats, p.converged_loss
        );
    }
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = String::from("rho,analytic_mi_nats,converged_loss\n");
        for p in &points {
            text.push_str(&format!("{},{},{}\n", p.rho, p.analytic_mi_nats, p.converged_loss));
        }
        std::fs::write(path, text)?;
        println!("written to {}", path.display());
    }
    Ok(())
}

fn cmd_count(arch: &str, classes: usize, in_channels: usize, input_size: usize) -> Result<()> {
    let arch = Architecture::parse(arch)?;
    let spec = BackboneSpec::new(arch, classes, in_channels);
    let backbone = build_backbone::<f32>(&spec, 0)?;
    let report = count_report(&backbone, (input_size, input_size))?;
    println!(
        "{} / {} classes / {}x{}x{} input",
        arch.name(),
        classes,
        in_channels,
        input_size,
        input_size
    );
    println!(
        "{:>7} {:>15} {:>12} {:>15} {:>12} {:>15} {:>15}",
        "module", "params", "head_params", "macs", "head_macs", "cum_params", "cum_macs"
    );
    for m in &report {
        println!(
            "{:>7} {:>15} {:>12} {:>15} {:>12} {:>15} {:>15}",
            m.module,
            m.backbone_params,
            m.head_params,
            m.backbone_macs,
            m.head_macs,
            m.cumulative_params,
            m.cumulative_macs
        );
    }
    let total_params = count_params(&backbone, None)?;
    let total_macs = count_macs(&backbone, (input_size, input_size), None)?;
    println!("total params {total_params}");
    println!("total macs {total_macs}");
    println!("total flops {}", macs_to_flops(total_macs));
    Ok(())
}
