//! Configuration, datasets and end-to-end orchestration:
//! pretrain → fine-tune → attack sweep → reports, once per seed.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! config.toml                 resolved configuration
//! summary.csv, summary.json   mean FAR per cell across seeds
//! seed_<s>/
//!   pretrain_log.jsonl, pretrain.ckpt      (variants with pretraining)
//!   finetune_log.jsonl, classifier.ckpt
//!   scores.jsonl                           clean and manipulated scores
//!   report.jsonl, report.csv
//!   plots/det_clean.{csv,svg}, plots/scores_clean.{csv,svg}, plots/det_<i>.csv
//!   matrix.jsonl, matrix.csv               (when combined_matrix is set)
//!   leave_one_out/<family>/report.{jsonl,csv}
//!   failure.json                           (only when the seed failed)
//! ```

pub mod plot;
pub mod protocol;
pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, DEFAULT_SAMPLE_RATE};
use crate::contrastive::{pretrain, PretrainOutputs, TrainingConfig};
use crate::data::{Dataset, Label};
use crate::downstream::{finetune, write_scores, Classifier, FinetuneOutputs, Variant, VariantConfig};
use crate::encoder::{TinyEncoder, TinyEncoderConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    attack_sweep, combined_attack_matrix, leave_one_out_study, write_det_csv, write_text, EvalConfig, EvalReport,
    ReportRow,
};
use crate::manipulations::{
    apply, default_eval_grid, measured_snr_db, splitmix64, AugmentationPolicy, Family, ManipulationSpec, NoiseBank,
};

pub use protocol::{parse_protocol, parse_protocol_text, write_protocol, ProtocolEntry, ProtocolKey};
pub use synth::{generate_synthetic, SynthConfig, SyntheticSplits};

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    /// Directory with `train/` and `eval/` protocol subdirectories.
    ProtocolDir(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SynthConfig::default())
    }
}

/// A named variant or explicit switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantChoice {
    Preset(Variant),
    Custom(VariantConfig),
}

impl VariantChoice {
    pub fn config(self) -> VariantConfig {
        match self {
            VariantChoice::Preset(v) => v.config(),
            VariantChoice::Custom(c) => c,
        }
    }

    pub fn name(self) -> String {
        match self {
            VariantChoice::Preset(v) => v.name().to_string(),
            VariantChoice::Custom(c) => Variant::ALL
                .into_iter()
                .find(|v| v.config() == c)
                .map_or_else(|| "custom".to_string(), |v| v.name().to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub variant: VariantChoice,
    /// Directory of `<id>.wav` environmental noises; a synthetic bank is
    /// used when absent.
    pub noise_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub encoder: TinyEncoderConfig,
    /// Fields left out of a config file come from [`TrainingConfig::desk`].
    #[serde(deserialize_with = "desk_training")]
    pub training: TrainingConfig,
    pub augmentation: AugmentationPolicy,
    pub eval: EvalConfig,
    pub eval_grid: Vec<ManipulationSpec>,
    /// Manipulations for the pairwise combination matrix.
    pub combined_matrix: Option<Vec<ManipulationSpec>>,
    /// Families for the leave-one-out study.
    pub leave_one_out: Option<Vec<Family>>,
}

fn desk_training<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainingConfig, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut merged = match serde_json::to_value(TrainingConfig::desk()).map_err(D::Error::custom)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("TrainingConfig serializes to an object"),
    };
    merged.extend(given);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(D::Error::custom)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs/experiment"),
            variant: VariantChoice::Preset(Variant::Clad),
            noise_dir: None,
            dataset: DatasetSource::default(),
            encoder: TinyEncoderConfig::default(),
            training: TrainingConfig::desk(),
            augmentation: AugmentationPolicy::default(),
            eval: EvalConfig::default(),
            eval_grid: default_eval_grid(),
            combined_matrix: None,
            leave_one_out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.encoder.validate()?;
        self.training.validate()?;
        self.augmentation.validate()?;
        if self.training.input_len != self.encoder.input_len {
            return Err(Error::Config(format!(
                "training.input_len {} differs from encoder.input_len {}",
                self.training.input_len, self.encoder.input_len
            )));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        if self.eval_grid.is_empty() {
            return Err(Error::Config("eval_grid must not be empty".into()));
        }
        for spec in self.eval_grid.iter().chain(self.combined_matrix.iter().flatten()) {
            spec.validate().map_err(|e| Error::Config(format!("{spec}: {e}")))?;
        }
        if let Some(f) = &self.leave_one_out {
            if f.len() < 2 {
                return Err(Error::Config("leave_one_out needs at least two families".into()));
            }
        }
        Ok(())
    }
}

/// Train and evaluation data, fixed to the encoder input length.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub eval: Dataset,
}

pub fn load_splits(source: &DatasetSource, input_len: usize) -> Result<Splits> {
    let (train, eval) = match source {
        DatasetSource::Synthetic(cfg) => {
            let s = generate_synthetic(cfg)?;
            (s.train, s.eval)
        }
        DatasetSource::ProtocolDir(dir) => (parse_protocol(&dir.join("train"))?, parse_protocol(&dir.join("eval"))?),
    };
    train.ensure_both_classes()?;
    eval.ensure_both_classes()?;
    Ok(Splits {
        train: train.fixed_length(input_len)?,
        eval: eval.fixed_length(input_len)?,
    })
}

pub fn load_noise_bank(noise_dir: Option<&Path>) -> Result<NoiseBank> {
    match noise_dir {
        Some(dir) => NoiseBank::load_dir(dir),
        None => Ok(NoiseBank::synthetic(DEFAULT_SAMPLE_RATE, 0)),
    }
}

/// Writes `data` as `<dir>/protocol.txt` plus `<dir>/wav/<id>.wav`.
pub fn write_dataset_dir(data: &Dataset, dir: &Path) -> Result<()> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut entries = Vec::with_capacity(data.len());
    for s in &data.samples {
        write_wav(&s.waveform, wav_dir.join(format!("{}.wav", s.id)))?;
        entries.push(ProtocolEntry {
            speaker_id: "synth".into(),
            utterance_id: s.id.clone(),
            system_id: if s.label.is_real() { "-".into() } else { "SYN".into() },
            key: if s.label.is_real() {
                ProtocolKey::Bonafide
            } else {
                ProtocolKey::Spoof
            },
        });
    }
    write_protocol(&dir.join(protocol::PROTOCOL_FILE), &entries)
}

/// Seeds for the stochastic pieces of one training run.
#[derive(Clone, Copy, Debug)]
struct RunSeeds {
    encoder: u64,
    pretrain: u64,
    head: u64,
    finetune: u64,
}

impl RunSeeds {
    fn new(seed: u64, policy_seed: u64) -> Self {
        let mix = |k: u64| splitmix64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ policy_seed.rotate_left(17) ^ k);
        RunSeeds {
            encoder: mix(1),
            pretrain: mix(2),
            head: mix(3),
            finetune: mix(4),
        }
    }
}

/// A trained detector and bookkeeping from its training run.
pub struct TrainedModel {
    pub classifier: Classifier<TinyEncoder>,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub final_train_accuracy: f64,
}

/// Initializes the encoder and, when the variant asks for it, pretrains it.
/// Writes the pretraining log and checkpoint when `out_dir` is given.
/// Returns the encoder and the number of pretraining steps.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_stage(
    train: &Dataset,
    encoder_cfg: &TinyEncoderConfig,
    training: &TrainingConfig,
    variant: VariantConfig,
    policy: &AugmentationPolicy,
    bank: &NoiseBank,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(TinyEncoder, u64)> {
    let seeds = RunSeeds::new(seed, policy.seed);
    let encoder = TinyEncoder::new(encoder_cfg.clone(), seeds.encoder)?;
    if !variant.use_contrastive_pretrain {
        return Ok((encoder, 0));
    }
    let outputs = out_dir.map(|d| PretrainOutputs {
        log_path: d.join("pretrain_log.jsonl"),
        checkpoint_path: d.join("pretrain.ckpt"),
    });
    let outcome = pretrain(
        encoder,
        train,
        training,
        policy,
        bank,
        variant.use_length_loss,
        seeds.pretrain,
        outputs.as_ref(),
    )?;
    Ok((outcome.pair.query, outcome.steps))
}

/// Puts a fresh head on `encoder` and fine-tunes both. Writes the log and
/// classifier checkpoint when `out_dir` is given.
#[allow(clippy::too_many_arguments)]
pub fn finetune_stage(
    train: &Dataset,
    encoder: TinyEncoder,
    training: &TrainingConfig,
    variant: VariantConfig,
    policy: &AugmentationPolicy,
    bank: &NoiseBank,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainedModel> {
    let seeds = RunSeeds::new(seed, policy.seed);
    let classifier = Classifier::new(encoder, seeds.head);
    let outputs = out_dir.map(|d| FinetuneOutputs {
        log_path: d.join("finetune_log.jsonl"),
        checkpoint_path: d.join("classifier.ckpt"),
    });
    let ft = finetune(classifier, train, training, variant, policy, bank, seeds.finetune, outputs.as_ref())?;
    Ok(TrainedModel {
        final_train_accuracy: ft.epoch_accuracy.last().copied().unwrap_or(0.0),
        classifier: ft.classifier,
        pretrain_steps: 0,
        finetune_steps: ft.steps,
    })
}

/// Runs the training stages the variant asks for. Writes logs and
/// checkpoints when `out_dir` is given.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    train: &Dataset,
    encoder_cfg: &TinyEncoderConfig,
    training: &TrainingConfig,
    variant: VariantConfig,
    policy: &AugmentationPolicy,
    bank: &NoiseBank,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainedModel> {
    let (encoder, pretrain_steps) =
        pretrain_stage(train, encoder_cfg, training, variant, policy, bank, seed, out_dir)?;
    let model = finetune_stage(train, encoder, training, variant, policy, bank, seed, out_dir)?;
    Ok(TrainedModel { pretrain_steps, ..model })
}

/// Writes report, scores and plot data for one evaluation.
pub fn write_report_bundle(report: &EvalReport, dir: &Path, stem: &str) -> Result<()> {
    report.write_jsonl(&dir.join(format!("{stem}.jsonl")))?;
    report.write_csv(&dir.join(format!("{stem}.csv")))?;
    let plots = dir.join("plots");
    let prefix = if stem == "report" { String::new() } else { format!("{stem}_") };
    write_det_csv(&plots.join(format!("{prefix}det_clean.csv")), &report.clean_det)?;
    write_text(
        &plots.join(format!("{prefix}det_clean.svg")),
        &plot::det_svg("DET, clean", &report.clean_det),
    )?;
    let real: Vec<f64> = report.clean_scores.iter().filter(|r| r.label == Label::Real).map(|r| r.p).collect();
    let fake: Vec<f64> = report.clean_scores.iter().filter(|r| r.label == Label::Fake).map(|r| r.p).collect();
    write_text(&plots.join(format!("{prefix}scores_clean.csv")), &plot::histogram_csv(&real, &fake, 20))?;
    write_text(
        &plots.join(format!("{prefix}scores_clean.svg")),
        &plot::histogram_svg("clean scores", &real, &fake, 20),
    )?;
    for (i, cell) in report.cells.iter().enumerate() {
        write_det_csv(&plots.join(format!("{prefix}det_{i:02}.csv")), &cell.det)?;
    }
    Ok(())
}

/// Everything produced for one seed.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub report: EvalReport,
    pub matrix: Option<EvalReport>,
    pub leave_one_out: Option<Vec<(Family, EvalReport)>>,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub final_train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

/// Per-seed FAR table across cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub clean_eer: Vec<f64>,
    pub mean_clean_eer: f64,
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<SeedFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub manipulation: String,
    pub far: Vec<f64>,
    pub mean_far: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl SummaryTable {
    /// Builds the table from per-seed report rows (cells in a common order).
    pub fn from_rows(variant: &str, per_seed: &[(u64, Vec<ReportRow>)], failures: Vec<SeedFailure>) -> Result<Self> {
        let seeds: Vec<u64> = per_seed.iter().map(|(s, _)| *s).collect();
        let clean_eer: Vec<f64> = per_seed
            .iter()
            .map(|(_, rows)| rows.first().map_or(f64::NAN, |r| r.clean_eer))
            .collect();
        let mut order: Vec<String> = Vec::new();
        let mut far: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (seed, rows) in per_seed {
            for r in rows {
                let entry = far.entry(r.manipulation.clone()).or_insert_with(|| {
                    order.push(r.manipulation.clone());
                    Vec::new()
                });
                entry.push(r.far);
            }
            if rows.len() != order.len() {
                return Err(Error::Consistency(format!("seed {seed} has a different set of cells")));
            }
        }
        let rows = order
            .into_iter()
            .map(|m| {
                let v = far.remove(&m).unwrap_or_default();
                SummaryRow {
                    mean_far: mean(&v),
                    far: v,
                    manipulation: m,
                }
            })
            .collect();
        Ok(SummaryTable {
            variant: variant.to_string(),
            mean_clean_eer: mean(&clean_eer),
            seeds,
            clean_eer,
            rows,
            failures,
        })
    }

    pub fn row(&self, manipulation: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.manipulation == manipulation)
    }

    /// `manipulation,seed_<s>...,mean`; the first row holds clean EERs.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["manipulation".to_string()];
        header.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        header.push("mean".into());
        w.write_record(&header).map_err(crate::evaluation::csv_err)?;
        let mut eer_row = vec!["clean_eer".to_string()];
        eer_row.extend(self.clean_eer.iter().map(|v| v.to_string()));
        eer_row.push(self.mean_clean_eer.to_string());
        w.write_record(&eer_row).map_err(crate::evaluation::csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.manipulation.clone()];
            rec.extend(r.far.iter().map(|v| v.to_string()));
            rec.push(r.mean_far.to_string());
            w.write_record(&rec).map_err(crate::evaluation::csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format {
            field: "csv",
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("summary.csv"), &self.to_csv()?)?;
        write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(self)?)
    }
}

/// Outcome of [`run_experiment`].
pub struct ExperimentOutcome {
    pub summary: SummaryTable,
    pub results: Vec<SeedResult>,
}

/// Evaluates one trained classifier per the config and writes its bundle.
fn run_seed(cfg: &ExperimentConfig, splits: &Splits, bank: &NoiseBank, seed: u64, dir: &Path) -> Result<SeedResult> {
    let model = train_classifier(
        &splits.train,
        &cfg.encoder,
        &cfg.training,
        cfg.variant.config(),
        &cfg.augmentation,
        bank,
        seed,
        Some(dir),
    )?;
    let report = attack_sweep(&model.classifier, &splits.eval, &cfg.eval_grid, bank, &cfg.eval)?;
    write_scores(&dir.join("scores.jsonl"), &report.all_scores())?;
    write_report_bundle(&report, dir, "report")?;
    let matrix = match &cfg.combined_matrix {
        Some(specs) => {
            let m = combined_attack_matrix(&model.classifier, &splits.eval, specs, bank, &cfg.eval)?;
            write_report_bundle(&m, dir, "matrix")?;
            Some(m)
        }
        None => None,
    };
    let leave_one_out = match &cfg.leave_one_out {
        Some(families) => {
            let reports = leave_one_out_study(&splits.train, &splits.eval, cfg, families, bank, seed)?;
            for (family, r) in &reports {
                write_report_bundle(r, &dir.join("leave_one_out").join(family.name()), "report")?;
            }
            Some(reports)
        }
        None => None,
    };
    Ok(SeedResult {
        seed,
        report,
        matrix,
        leave_one_out,
        pretrain_steps: model.pretrain_steps,
        finetune_steps: model.finetune_steps,
        final_train_accuracy: model.final_train_accuracy,
    })
}

/// Runs every seed; a failing seed is recorded and the others proceed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let splits = load_splits(&cfg.dataset, cfg.encoder.input_len)?;
    let bank = load_noise_bank(cfg.noise_dir.as_deref())?;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed_{seed}"));
        match run_seed(cfg, &splits, &bank, seed, &dir) {
            Ok(r) => results.push(r),
            Err(e) => {
                let f = SeedFailure {
                    seed,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                };
                write_text(&dir.join("failure.json"), &serde_json::to_string_pretty(&f)?)?;
                failures.push(f);
            }
        }
    }
    let per_seed: Vec<(u64, Vec<ReportRow>)> = results.iter().map(|r| (r.seed, r.report.rows().collect())).collect();
    let summary = SummaryTable::from_rows(&cfg.variant.name(), &per_seed, failures)?;
    summary.write(out)?;
    Ok(ExperimentOutcome { summary, results })
}

/// Rebuilds the summary of a finished run from its `seed_*/report.jsonl`.
pub fn summarize_run_dir(dir: &Path) -> Result<SummaryTable> {
    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    let mut entries: Vec<(u64, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_prefix("seed_").and_then(|s| s.parse().ok()).map(|s| (s, e.path()))
        })
        .collect();
    entries.sort();
    for (seed, path) in entries {
        let report = path.join("report.jsonl");
        let failure = path.join("failure.json");
        if report.is_file() {
            per_seed.push((seed, crate::evaluation::read_report_jsonl(&report)?));
        } else if failure.is_file() {
            let text = std::fs::read_to_string(&failure).map_err(|e| Error::io(&failure, e))?;
            failures.push(serde_json::from_str(&text)?);
        }
    }
    if per_seed.is_empty() && failures.is_empty() {
        return Err(Error::Resolution(vec![format!("{}/seed_*/report.jsonl", dir.display())]));
    }
    let variant = std::fs::read_to_string(dir.join("config.toml"))
        .ok()
        .and_then(|t| toml::from_str::<ExperimentConfig>(&t).ok())
        .map_or_else(|| "unknown".to_string(), |c| c.variant.name());
    SummaryTable::from_rows(&variant, &per_seed, failures)
}

/// Reads `input`, applies `spec`, writes `output`. Returns the SNR achieved
/// in the written file for noise manipulations.
pub fn manipulate_file(input: &Path, spec: &ManipulationSpec, output: &Path, seed: u64) -> Result<Option<f64>> {
    let w = read_wav(input)?;
    let bank = NoiseBank::synthetic(w.sample_rate_hz(), 0);
    apply_and_write(&w, spec, output, seed, &bank)
}

/// Like [`manipulate_file`] with environmental noises from `bank`.
pub fn manipulate_file_with_bank(
    input: &Path,
    spec: &ManipulationSpec,
    output: &Path,
    seed: u64,
    bank: &NoiseBank,
) -> Result<Option<f64>> {
    apply_and_write(&read_wav(input)?, spec, output, seed, bank)
}

fn apply_and_write(
    w: &crate::audio::Waveform,
    spec: &ManipulationSpec,
    output: &Path,
    seed: u64,
    bank: &NoiseBank,
) -> Result<Option<f64>> {
    write_wav(&apply(spec, w, bank, seed)?, output)?;
    match spec.family() {
        Family::WhiteNoise | Family::EnvNoise => Ok(Some(measured_snr_db(w, &read_wav(output)?)?)),
        _ => Ok(None),
    }
}
