//! `clad`: data generation, training, attacks and reports from the shell.
//!
//! Every command prints one JSON object on stdout when it succeeds. On
//! failure it prints a JSON failure record on stderr and exits with status 1.
//! Relative output paths are placed under `$CLAD_OUTPUT_ROOT` when it is set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clad_core::downstream::{write_scores, Classifier};
use clad_core::encoder::{Checkpoint, CheckpointKind, TinyEncoder};
use clad_core::evaluation::{attack_sweep, combined_attack_matrix, leave_one_out_study, EvalReport};
use clad_core::experiment::{
    finetune_stage, generate_synthetic, load_noise_bank, load_splits, manipulate_file_with_bank, pretrain_stage,
    run_experiment, summarize_run_dir, write_dataset_dir, write_report_bundle, ExperimentConfig, SynthConfig,
};
use clad_core::manipulations::{representative_set, Family, ManipulationSpec};
use clad_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

const OUTPUT_ROOT_VAR: &str = "CLAD_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "clad", version, about = "Manipulation-robust audio deepfake detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as train/ and eval/ protocol directories.
    GenData(GenData),
    /// Contrastive pretraining of the encoder for one seed.
    Pretrain(Stage),
    /// Fine-tune encoder and head for one seed.
    Finetune(Finetune),
    /// Attack sweep of a trained classifier over the configured grid.
    Eval(Eval),
    /// Pairwise combinations of manipulations on a trained classifier.
    AttackMatrix(Eval),
    /// Retrain once per held-out augmentation family and evaluate.
    LeaveOneOut(LeaveOneOut),
    /// Apply one manipulation to a WAV file.
    Manipulate(Manipulate),
    /// Rebuild the cross-seed summary of a finished run.
    Report(Report),
    /// Full pipeline for every configured seed.
    Run(Run),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_eval: usize,
    #[arg(long, default_value_t = 0.1)]
    real_fraction: f64,
    #[arg(long, default_value_t = 16_000)]
    duration_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Args)]
struct Stage {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Finetune {
    #[command(flatten)]
    stage: Stage,
    /// Encoder checkpoint from `pretrain`. Without it the encoder is
    /// initialized (and pretrained, if the variant asks) in memory.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LeaveOneOut {
    #[command(flatten)]
    stage: Stage,
    /// Families to hold out; defaults to the config, then to every
    /// augmentation family.
    #[arg(long, value_delimiter = ',')]
    families: Vec<Family>,
}

#[derive(Args)]
struct Manipulate {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// JSON manipulation, e.g. '{"family":"volume","factor":0.5}'.
    #[arg(long)]
    spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory of environmental noise WAVs.
    #[arg(long)]
    noise_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Report {
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct Run {
    #[command(flatten)]
    config: ConfigArg,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if p.is_relative() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn report_json(r: &EvalReport) -> Value {
    let cells: Vec<Value> = r
        .cells
        .iter()
        .map(|c| json!({ "manipulation": c.label(), "far": c.far, "frr": c.frr, "f1": c.f1 }))
        .collect();
    json!({ "clean_eer": r.clean_eer, "threshold": r.threshold.value, "cells": cells })
}

fn load_classifier(path: &Path) -> Result<Classifier<TinyEncoder>> {
    let ckpt = Checkpoint::read(path)?;
    ckpt.expect_kind(CheckpointKind::Classifier)?;
    Classifier::from_checkpoint(&ckpt)
}

fn gen_data(a: &GenData) -> Result<Value> {
    let cfg = SynthConfig {
        n_train: a.n_train,
        n_eval: a.n_eval,
        real_fraction: a.real_fraction,
        duration_samples: a.duration_samples,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let splits = generate_synthetic(&cfg)?;
    let out = output_path(&a.out);
    write_dataset_dir(&splits.train, &out.join("train"))?;
    write_dataset_dir(&splits.eval, &out.join("eval"))?;
    Ok(json!({
        "out": out,
        "train": splits.train.len(),
        "eval": splits.eval.len(),
    }))
}

fn pretrain_cmd(a: &Stage) -> Result<Value> {
    let cfg = a.config.load()?;
    let variant = cfg.variant.config();
    if !variant.use_contrastive_pretrain {
        return Err(Error::Config(format!("variant {} has no pretraining stage", cfg.variant.name())));
    }
    let out = output_path(&a.out);
    create_dir(&out)?;
    let splits = load_splits(&cfg.dataset, cfg.encoder.input_len)?;
    let bank = load_noise_bank(cfg.noise_dir.as_deref())?;
    let (_, steps) = pretrain_stage(
        &splits.train,
        &cfg.encoder,
        &cfg.training,
        variant,
        &cfg.augmentation,
        &bank,
        a.seed,
        Some(&out),
    )?;
    Ok(json!({ "steps": steps, "checkpoint": out.join("pretrain.ckpt") }))
}

fn finetune_cmd(a: &Finetune) -> Result<Value> {
    let cfg = a.stage.config.load()?;
    let variant = cfg.variant.config();
    let out = output_path(&a.stage.out);
    create_dir(&out)?;
    let splits = load_splits(&cfg.dataset, cfg.encoder.input_len)?;
    let bank = load_noise_bank(cfg.noise_dir.as_deref())?;
    let encoder = match &a.init {
        Some(path) => {
            let ckpt = Checkpoint::read(path)?;
            ckpt.expect_kind(CheckpointKind::Encoder)?;
            TinyEncoder::from_checkpoint(&ckpt)?
        }
        None => {
            let (e, _) = pretrain_stage(
                &splits.train,
                &cfg.encoder,
                &cfg.training,
                variant,
                &cfg.augmentation,
                &bank,
                a.stage.seed,
                None,
            )?;
            e
        }
    };
    let model = finetune_stage(
        &splits.train,
        encoder,
        &cfg.training,
        variant,
        &cfg.augmentation,
        &bank,
        a.stage.seed,
        Some(&out),
    )?;
    Ok(json!({
        "steps": model.finetune_steps,
        "train_accuracy": model.final_train_accuracy,
        "checkpoint": out.join("classifier.ckpt"),
    }))
}

fn eval_cmd(a: &Eval, matrix: bool) -> Result<Value> {
    let cfg = a.config.load()?;
    let classifier = load_classifier(&a.checkpoint)?;
    let splits = load_splits(&cfg.dataset, cfg.encoder.input_len)?;
    let bank = load_noise_bank(cfg.noise_dir.as_deref())?;
    let out = output_path(&a.out);
    create_dir(&out)?;
    let report = if matrix {
        let specs = cfg.combined_matrix.clone().unwrap_or_else(representative_set);
        let r = combined_attack_matrix(&classifier, &splits.eval, &specs, &bank, &cfg.eval)?;
        write_report_bundle(&r, &out, "matrix")?;
        r
    } else {
        let r = attack_sweep(&classifier, &splits.eval, &cfg.eval_grid, &bank, &cfg.eval)?;
        write_scores(&out.join("scores.jsonl"), &r.all_scores())?;
        write_report_bundle(&r, &out, "report")?;
        r
    };
    Ok(report_json(&report))
}

fn leave_one_out_cmd(a: &LeaveOneOut) -> Result<Value> {
    let cfg = a.stage.config.load()?;
    let families: Vec<Family> = if !a.families.is_empty() {
        a.families.clone()
    } else if let Some(f) = &cfg.leave_one_out {
        f.clone()
    } else {
        cfg.augmentation.enabled_families.iter().copied().collect()
    };
    let splits = load_splits(&cfg.dataset, cfg.encoder.input_len)?;
    let bank = load_noise_bank(cfg.noise_dir.as_deref())?;
    let out = output_path(&a.stage.out);
    let reports = leave_one_out_study(&splits.train, &splits.eval, &cfg, &families, &bank, a.stage.seed)?;
    let mut summary = serde_json::Map::new();
    for (family, r) in &reports {
        let dir = out.join(family.name());
        create_dir(&dir)?;
        write_report_bundle(r, &dir, "report")?;
        summary.insert(family.name().to_string(), report_json(r));
    }
    Ok(Value::Object(summary))
}

fn manipulate_cmd(a: &Manipulate) -> Result<Value> {
    let spec: ManipulationSpec = serde_json::from_str(&a.spec)?;
    spec.validate()?;
    let bank = load_noise_bank(a.noise_dir.as_deref())?;
    let output = output_path(&a.output);
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let snr = manipulate_file_with_bank(&a.input, &spec, &output, a.seed, &bank)?;
    Ok(json!({ "output": output, "snr_db": snr }))
}

fn report_cmd(a: &Report) -> Result<Value> {
    let summary = summarize_run_dir(&a.run)?;
    summary.write(&a.run)?;
    print!("{}", summary.to_csv()?);
    Ok(json!({ "summary": a.run.join("summary.csv"), "failures": summary.failures.len() }))
}

fn run_cmd(a: &Run) -> Result<Value> {
    let mut cfg = a.config.load()?;
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    cfg.output_dir = output_path(&cfg.output_dir);
    let outcome = run_experiment(&cfg)?;
    print!("{}", outcome.summary.to_csv()?);
    Ok(json!({
        "output_dir": cfg.output_dir,
        "mean_clean_eer": outcome.summary.mean_clean_eer,
        "failures": outcome.summary.failures,
    }))
}

fn name(c: &Command) -> &'static str {
    match c {
        Command::GenData(_) => "gen-data",
        Command::Pretrain(_) => "pretrain",
        Command::Finetune(_) => "finetune",
        Command::Eval(_) => "eval",
        Command::AttackMatrix(_) => "attack-matrix",
        Command::LeaveOneOut(_) => "leave-one-out",
        Command::Manipulate(_) => "manipulate",
        Command::Report(_) => "report",
        Command::Run(_) => "run",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Eval(a) => eval_cmd(a, false),
        Command::AttackMatrix(a) => eval_cmd(a, true),
        Command::LeaveOneOut(a) => leave_one_out_cmd(a),
        Command::Manipulate(a) => manipulate_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Run(a) => run_cmd(a),
    };
    match result {
        Ok(mut v) => {
            if let Value::Object(m) = &mut v {
                m.insert("status".into(), json!("ok"));
                m.insert("command".into(), json!(name(&cli.command)));
            }
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = json!({
                "status": "error",
                "command": name(&cli.command),
                "kind": e.kind(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
