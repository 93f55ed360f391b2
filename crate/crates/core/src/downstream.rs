//! Fine-tuning a linear real/fake head on top of an encoder, scoring, and
//! the four training variants.

use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{fix_length, Waveform};
use crate::contrastive::{length_loss_grad, open_log, write_record, TrainingConfig};
use crate::data::{Dataset, Label};
use crate::encoder::{encoder_config_of, load_tensors, Checkpoint, CheckpointKind, Encoder, TinyEncoder};
use crate::error::{Error, Result};
use crate::manipulations::{sample_view, splitmix64, AugmentationPolicy, NoiseBank};
use crate::nn::{Adam, Linear, Param};

/// Probability clamp used by the cross-entropy loss.
pub const PROB_EPS: f64 = 1e-7;

/// Encoder plus a linear map to two logits `(fake, real)`.
#[derive(Clone, Debug)]
pub struct Classifier<E> {
    pub encoder: E,
    pub head: Linear,
}

impl<E: Encoder> Classifier<E> {
    pub fn new(encoder: E, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = Linear::new("classifier", encoder.feature_dim(), 2, &mut rng);
        Classifier { encoder, head }
    }

    fn logits_of(&self, features: &Array2<f64>) -> Array2<f64> {
        let n = features.nrows();
        let x: Vec<f32> = features.iter().map(|&v| v as f32).collect();
        let out = self.head.forward(&x, n);
        Array2::from_shape_vec((n, 2), out.into_iter().map(f64::from).collect()).expect("two logits per row")
    }

    /// Raw `(fake, real)` logits in inference mode.
    pub fn logits(&self, batch: &[Waveform]) -> Result<Array2<f64>> {
        let feats = self.encoder.infer(batch)?;
        Ok(self.logits_of(&feats))
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend([&self.head.weight, &self.head.bias]);
        v
    }

    pub fn to_checkpoint(&self, step: u64) -> Result<Checkpoint> {
        let mut ckpt = self.encoder.to_checkpoint(step)?;
        ckpt.kind = CheckpointKind::Classifier;
        ckpt.tensors.extend([self.head.weight.clone(), self.head.bias.clone()]);
        Ok(ckpt)
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.expect_kind(CheckpointKind::Classifier)?;
        self.encoder.load_checkpoint(ckpt)?;
        load_tensors(vec![&mut self.head.weight, &mut self.head.bias], ckpt)
    }
}

impl Classifier<TinyEncoder> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let encoder = TinyEncoder::new(encoder_config_of(ckpt)?, 0)?;
        let mut c = Classifier::new(encoder, 0);
        c.load_checkpoint(ckpt)?;
        Ok(c)
    }
}

/// Real-class probability of a `(fake, real)` logit pair.
pub fn real_probability(fake_logit: f64, real_logit: f64) -> f64 {
    1.0 / (1.0 + (fake_logit - real_logit).exp())
}

/// Inference-mode real probabilities, one per waveform.
pub fn score_batch<E: Encoder>(classifier: &Classifier<E>, batch: &[Waveform]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let logits = classifier.logits(batch)?;
    Ok(logits.rows().into_iter().map(|r| real_probability(r[0], r[1])).collect())
}

/// Binary cross-entropy on real probabilities, clamped to `[ε, 1 - ε]`.
pub fn downstream_loss(p: &[f64], y: &[Label]) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::arg(format!(
            "need equally many probabilities and labels, got {} and {}",
            p.len(),
            y.len()
        )));
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            match y {
                Label::Real => -p.ln(),
                Label::Fake => -(1.0 - p).ln(),
            }
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// Cross-entropy from `(fake, real)` logits and its gradient w.r.t. them.
pub fn downstream_loss_from_logits(logits: &Array2<f64>, y: &[Label]) -> Result<(f64, Array2<f64>)> {
    if logits.ncols() != 2 {
        return Err(Error::arg("expected two logits per row"));
    }
    let p: Vec<f64> = logits.rows().into_iter().map(|r| real_probability(r[0], r[1])).collect();
    let loss = downstream_loss(&p, y)?;
    let n = p.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    for (i, (&p, &y)) in p.iter().zip(y).enumerate() {
        let d = (p - y.as_f64()) / n;
        grad[[i, 0]] = -d;
        grad[[i, 1]] = d;
    }
    Ok((loss, grad))
}

/// Switches that define a training variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub use_contrastive_pretrain: bool,
    pub use_length_loss: bool,
    pub supervised_augmentation: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Supervised training with augmentation only.
    Vanilla,
    /// Contrastive pretraining without the length loss.
    Cl,
    /// Length loss added to supervised training, no pretraining.
    Ll,
    /// Contrastive pretraining with the length loss.
    Clad,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Vanilla, Variant::Cl, Variant::Ll, Variant::Clad];

    pub fn config(self) -> VariantConfig {
        let (c, l) = match self {
            Variant::Vanilla => (false, false),
            Variant::Cl => (true, false),
            Variant::Ll => (false, true),
            Variant::Clad => (true, true),
        };
        VariantConfig {
            use_contrastive_pretrain: c,
            use_length_loss: l,
            supervised_augmentation: true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Cl => "cl",
            Variant::Ll => "ll",
            Variant::Clad => "clad",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown variant {s:?} (expected vanilla, cl, ll or clad)")))
    }
}

/// Per-step record of the fine-tuning log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub step: u64,
    pub cross_entropy: f64,
    pub length: f64,
    pub total: f64,
    pub accuracy: f64,
}

pub struct FinetuneOutcome<E> {
    pub classifier: Classifier<E>,
    pub steps: u64,
    /// Training accuracy (score > 0.5 means real) of each epoch.
    pub epoch_accuracy: Vec<f64>,
    pub log: Vec<FinetuneRecord>,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutputs {
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Trains encoder and head jointly (or the head alone when
/// `cfg.freeze_encoder`). The length loss joins only when the variant uses
/// it without pretraining.
#[allow(clippy::too_many_arguments)]
pub fn finetune<E: Encoder>(
    mut classifier: Classifier<E>,
    data: &Dataset,
    cfg: &TrainingConfig,
    variant: VariantConfig,
    policy: &AugmentationPolicy,
    bank: &NoiseBank,
    seed: u64,
    outputs: Option<&FinetuneOutputs>,
) -> Result<FinetuneOutcome<E>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::arg("cannot fine-tune on an empty dataset"));
    }
    if variant.supervised_augmentation {
        policy.validate()?;
    }
    let input_len = classifier.encoder.input_len();
    let length_weight = if variant.use_length_loss && !variant.use_contrastive_pretrain {
        cfg.lambda
    } else {
        0.0
    };
    let mut optimizer = Adam::new(cfg.downstream_lr, cfg.downstream_weight_decay);
    let mut writer = match outputs {
        Some(o) => Some(open_log(&o.log_path)?),
        None => None,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0u64;
    let mut epoch_accuracy = Vec::with_capacity(cfg.downstream_epochs);
    let mut log = Vec::new();
    for epoch in 0..cfg.downstream_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ ((epoch as u64) << 24) ^ 0xF1));
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.downstream_batch) {
            let labels: Vec<Label> = chunk.iter().map(|&i| data.samples[i].label).collect();
            let mut views = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let w = &data.samples[i].waveform;
                let v = if variant.supervised_augmentation {
                    sample_view(policy, w, bank, &mut rng)?.0
                } else {
                    w.clone()
                };
                views.push(fix_length(&v, input_len)?);
            }

            let feats = if cfg.freeze_encoder {
                classifier.encoder.infer(&views)?
            } else {
                classifier.encoder.forward_train(&views)?
            };
            let logits = classifier.logits_of(&feats);
            let (ce, grad_logits) = downstream_loss_from_logits(&logits, &labels)?;
            let batch_correct = logits
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(r, &y)| (real_probability(r[0], r[1]) > 0.5) == y.is_real())
                .count();
            correct += batch_correct;

            let n = chunk.len();
            let x: Vec<f32> = feats.iter().map(|&v| v as f32).collect();
            let g: Vec<f32> = grad_logits.iter().map(|&v| v as f32).collect();
            classifier.head.weight.zero_grad();
            classifier.head.bias.zero_grad();
            let grad_x = classifier.head.backward(&g, &x, n);
            let mut len_loss = 0.0;
            if cfg.freeze_encoder {
                optimizer.step(vec![&mut classifier.head.weight, &mut classifier.head.bias]);
            } else {
                let mut grad_feats = Array2::from_shape_vec(feats.dim(), grad_x.into_iter().map(f64::from).collect())
                    .expect("feature gradient shape");
                if length_weight > 0.0 {
                    let len = length_loss_grad(feats.view(), &labels, cfg.real_weight, cfg.margin)?;
                    len_loss = len.loss;
                    grad_feats.scaled_add(length_weight, &len.grad);
                }
                classifier.encoder.zero_grad();
                classifier.encoder.backward(&grad_feats)?;
                let Classifier { encoder, head } = &mut classifier;
                let mut params = encoder.params_mut();
                params.extend([&mut head.weight, &mut head.bias]);
                optimizer.step(params);
            }
            let total = ce + length_weight * len_loss;
            if !total.is_finite() {
                return Err(Error::Domain(format!("fine-tuning loss diverged at step {step}")));
            }
            step += 1;
            let record = FinetuneRecord {
                epoch,
                step,
                cross_entropy: ce,
                length: len_loss,
                total,
                accuracy: batch_correct as f64 / n as f64,
            };
            if let (Some(w), Some(o)) = (writer.as_mut(), outputs) {
                write_record(w, &record, &o.log_path)?;
            }
            log.push(record);
        }
        epoch_accuracy.push(correct as f64 / data.len() as f64);
    }
    if let (Some(mut w), Some(o)) = (writer, outputs) {
        use std::io::Write;
        w.flush().map_err(|e| Error::io(&o.log_path, e))?;
        classifier.to_checkpoint(step)?.write(&o.checkpoint_path)?;
    }
    Ok(FinetuneOutcome {
        classifier,
        steps: step,
        epoch_accuracy,
        log,
    })
}

/// One scored sample, as exchanged through score files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub label: Label,
    /// Tag of the manipulation applied before scoring; `None` when clean.
    pub manipulation: Option<String>,
    pub p: f64,
}

/// Scores every sample of `data` (fixed to the encoder length first).
pub fn score_dataset<E: Encoder>(classifier: &Classifier<E>, data: &Dataset) -> Result<Vec<ScoreRecord>> {
    let input_len = classifier.encoder.input_len();
    let views = data
        .samples
        .iter()
        .map(|s| fix_length(&s.waveform, input_len))
        .collect::<Result<Vec<_>>>()?;
    let p = score_batch(classifier, &views)?;
    Ok(data
        .samples
        .iter()
        .zip(p)
        .map(|(s, p)| ScoreRecord {
            sample_id: s.id.clone(),
            label: s.label,
            manipulation: None,
            p,
        })
        .collect())
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = open_log(path)?;
    for r in records {
        write_record(&mut w, r, path)?;
    }
    use std::io::Write;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&rec.p) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("score {} outside [0, 1]", rec.p),
            });
        }
        out.push(rec);
    }
    Ok(out)
}
