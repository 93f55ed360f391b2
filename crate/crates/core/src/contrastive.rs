//! Contrastive pretraining: the negative queue, the cosine InfoNCE loss, the
//! length loss that pulls real features toward the origin and pushes fake
//! ones beyond a margin, and the momentum-contrast training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::encoder::{Encoder, EncoderPair};
use crate::error::{Error, Result};
use crate::manipulations::{sample_view, splitmix64, AugmentationPolicy, NoiseBank};
use crate::nn::Adam;
use crate::audio::{fix_length, Waveform};

const UNIT_NORM_TOL: f64 = 1e-5;

/// Fixed-capacity FIFO of unit-norm key features.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeQueue {
    storage: Array2<f64>,
    cursor: usize,
    fill: usize,
}

impl NegativeQueue {
    /// `capacity` random unit vectors, so the queue starts full.
    pub fn new(capacity: usize, dim: usize, seed: u64) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::arg("queue capacity and feature dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut storage: Array2<f64> = Array2::from_shape_simple_fn((capacity, dim), || StandardNormal.sample(&mut rng));
        for mut row in storage.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        Ok(NegativeQueue {
            storage,
            cursor: 0,
            fill: capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.storage.nrows()
    }

    pub fn dim(&self) -> usize {
        self.storage.ncols()
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    /// Slot the next pushed vector will overwrite (the oldest entry).
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn storage(&self) -> ArrayView2<'_, f64> {
        self.storage.view()
    }

    /// Overwrites the oldest entries with `keys`, row by row.
    pub fn push(&mut self, keys: ArrayView2<'_, f64>) -> Result<()> {
        if keys.ncols() != self.dim() {
            return Err(Error::arg(format!(
                "key dimension {} does not match queue dimension {}",
                keys.ncols(),
                self.dim()
            )));
        }
        if keys.nrows() > self.capacity() {
            return Err(Error::arg(format!(
                "cannot push {} keys into a queue of capacity {}",
                keys.nrows(),
                self.capacity()
            )));
        }
        for (i, row) in keys.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::arg(format!("key {i} has norm {n}, expected unit norm")));
            }
        }
        for row in keys.rows() {
            self.storage.row_mut(self.cursor).assign(&row);
            self.cursor = (self.cursor + 1) % self.capacity();
        }
        self.fill = self.capacity();
        Ok(())
    }
}

/// Row-wise unit normalization; a zero row is a domain error.
pub fn normalize_rows(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = x.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain(format!("feature row {i} has norm {n}; cannot normalize")));
        }
        row /= n;
    }
    Ok(out)
}

/// Loss value plus its gradient with respect to the query features.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
}

/// Mean over rows of `-log softmax` at the positive logit, cosine
/// similarities scaled by `1 / tau`. The positive sits in the denominator.
pub fn contrastive_loss(
    q: ArrayView2<'_, f64>,
    k_pos: ArrayView2<'_, f64>,
    queue: &NegativeQueue,
    tau: f64,
) -> Result<f64> {
    Ok(contrastive_loss_grad(q, k_pos, queue.storage(), tau, true)?.loss)
}

/// Contrastive loss and `d loss / d q`. `negatives` rows are used as given
/// (they are unit norm in a queue). With `include_positive = false` the
/// denominator sums over negatives only and the loss may go negative.
pub fn contrastive_loss_grad(
    q: ArrayView2<'_, f64>,
    k_pos: ArrayView2<'_, f64>,
    negatives: ArrayView2<'_, f64>,
    tau: f64,
    include_positive: bool,
) -> Result<LossGrad> {
    if q.dim() != k_pos.dim() {
        return Err(Error::arg(format!(
            "query shape {:?} differs from positive-key shape {:?}",
            q.dim(),
            k_pos.dim()
        )));
    }
    if negatives.ncols() != q.ncols() {
        return Err(Error::arg("negatives and queries differ in dimension"));
    }
    if !(tau > 0.0) {
        return Err(Error::arg(format!("temperature must be positive, got {tau}")));
    }
    let n = q.nrows();
    if n == 0 {
        return Err(Error::arg("empty query batch"));
    }
    if negatives.nrows() == 0 && !include_positive {
        return Err(Error::arg("denominator is empty"));
    }
    let qn = normalize_rows(q)?;
    let kn = normalize_rows(k_pos)?;
    let neg_logits = qn.dot(&negatives.t()) / tau;

    let mut loss = 0.0;
    let mut grad = Array2::zeros(q.dim());
    for i in 0..n {
        let qi = qn.row(i);
        let ki = kn.row(i);
        let pos = qi.dot(&ki) / tau;
        let negs = neg_logits.row(i);
        let mut max = negs.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if include_positive {
            max = max.max(pos);
        }
        let mut denom = negs.iter().map(|&l| (l - max).exp()).sum::<f64>();
        if include_positive {
            denom += (pos - max).exp();
        }
        let lse = max + denom.ln();
        loss += lse - pos;

        // d/dq̂ = (Σ p_s v_s - k̂) / tau over the denominator set
        let mut g_hat = negs.mapv(|l| (l - lse).exp()).dot(&negatives);
        if include_positive {
            g_hat.scaled_add((pos - lse).exp(), &ki);
        }
        g_hat -= &ki;
        g_hat /= tau * n as f64;
        grad.row_mut(i).assign(&project_out(qi, g_hat.view(), q.row(i)));
    }
    Ok(LossGrad {
        loss: loss / n as f64,
        grad,
    })
}

/// Chain rule through `q / ‖q‖`: `(I - q̂ q̂ᵀ) g / ‖q‖`.
fn project_out(q_hat: ArrayView1<'_, f64>, g: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> ndarray::Array1<f64> {
    let norm = q.dot(&q).sqrt();
    let along = q_hat.dot(&g);
    (&g - &(&q_hat * along)) / norm
}

fn check_labels(q: ArrayView2<'_, f64>, labels: &[Label]) -> Result<()> {
    if q.nrows() != labels.len() {
        return Err(Error::arg(format!(
            "{} feature rows but {} labels",
            q.nrows(),
            labels.len()
        )));
    }
    if q.nrows() == 0 {
        return Err(Error::arg("empty feature batch"));
    }
    Ok(())
}

/// Mean of `w‖q‖` over real rows and `max(margin - ‖q‖, 0)` over fake rows,
/// on unnormalized features.
pub fn length_loss(q: ArrayView2<'_, f64>, labels: &[Label], w: f64, margin: f64) -> Result<f64> {
    Ok(length_loss_grad(q, labels, w, margin)?.loss)
}

/// Length loss and its gradient. The subgradient at the origin and at
/// `‖q‖ = margin` is taken as zero.
pub fn length_loss_grad(q: ArrayView2<'_, f64>, labels: &[Label], w: f64, margin: f64) -> Result<LossGrad> {
    check_labels(q, labels)?;
    let n = q.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(q.dim());
    for ((row, label), mut g) in q.rows().into_iter().zip(labels).zip(grad.rows_mut()) {
        let norm = row.dot(&row).sqrt();
        match label {
            Label::Real => {
                loss += w * norm;
                if norm > 0.0 {
                    g.assign(&(&row * (w / (norm * n))));
                }
            }
            Label::Fake => {
                if norm < margin {
                    loss += margin - norm;
                    if norm > 0.0 {
                        g.assign(&(&row * (-1.0 / (norm * n))));
                    }
                }
            }
        }
    }
    Ok(LossGrad { loss: loss / n, grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub length: f64,
    pub total: f64,
}

/// `total = cl + lambda * len`.
pub fn pretrain_loss(cl: f64, len: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown {
        contrastive: cl,
        length: len,
        total: cl + lambda * len,
    }
}

/// Hyperparameters for both training stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub tau: f64,
    pub momentum: f64,
    pub queue_size: usize,
    /// Length-loss weight.
    pub lambda: f64,
    pub margin: f64,
    /// Weight of the real-class length term.
    pub real_weight: f64,
    pub pretrain_lr: f64,
    pub pretrain_weight_decay: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub cosine_annealing: bool,
    pub downstream_lr: f64,
    pub downstream_weight_decay: f64,
    pub downstream_epochs: usize,
    pub downstream_batch: usize,
    pub freeze_encoder: bool,
    pub input_len: usize,
    /// Count the positive pair in the softmax denominator (standard InfoNCE).
    pub include_positive_in_denominator: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            tau: 0.07,
            momentum: 0.999,
            queue_size: 6144,
            lambda: 2.0,
            margin: 4.0,
            real_weight: 9.0,
            pretrain_lr: 5e-4,
            pretrain_weight_decay: 1e-4,
            pretrain_epochs: 150,
            pretrain_batch: 24,
            cosine_annealing: true,
            downstream_lr: 1e-3,
            downstream_weight_decay: 1e-4,
            downstream_epochs: 10,
            downstream_batch: 16,
            freeze_encoder: false,
            input_len: 64_600,
            include_positive_in_denominator: true,
        }
    }
}

impl TrainingConfig {
    /// Small enough to train the reference encoder on a laptop CPU in minutes.
    pub fn desk() -> Self {
        TrainingConfig {
            queue_size: 1024,
            momentum: 0.99,
            pretrain_epochs: 12,
            downstream_epochs: 6,
            input_len: 16_000,
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1], got {}", self.momentum));
        }
        if self.queue_size == 0 || self.input_len == 0 {
            return bad("queue_size and input_len must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.margin >= 0.0 && self.real_weight > 0.0) {
            return bad("lambda and margin must be nonnegative and real_weight positive".into());
        }
        if !(self.pretrain_lr > 0.0 && self.downstream_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.pretrain_weight_decay >= 0.0 && self.downstream_weight_decay >= 0.0) {
            return bad("weight decay must be nonnegative".into());
        }
        if self.pretrain_batch == 0 || self.downstream_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.pretrain_epochs == 0 || self.downstream_epochs == 0 {
            return bad("epoch counts must be positive".into());
        }
        if self.pretrain_batch > self.queue_size {
            return bad(format!(
                "pretrain_batch {} exceeds queue_size {}",
                self.pretrain_batch, self.queue_size
            ));
        }
        Ok(())
    }
}

/// Cosine decay from `base` at epoch 0 to 0 at the final epoch.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return base;
    }
    base * (1.0 + (std::f64::consts::PI * epoch as f64 / (epochs - 1) as f64).cos()) / 2.0
}

/// Two manipulated views per sample plus labels.
#[derive(Clone, Debug)]
pub struct PretrainBatch {
    pub view_a: Vec<Waveform>,
    pub view_b: Vec<Waveform>,
    pub labels: Vec<Label>,
}

impl PretrainBatch {
    /// Draws both views of each sample, then fixes them to `input_len`.
    pub fn sample(
        samples: &[&crate::data::Sample],
        policy: &AugmentationPolicy,
        bank: &NoiseBank,
        input_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut view_a = Vec::with_capacity(samples.len());
        let mut view_b = Vec::with_capacity(samples.len());
        for s in samples {
            let (a, _) = sample_view(policy, &s.waveform, bank, &mut rng)?;
            let (b, _) = sample_view(policy, &s.waveform, bank, &mut rng)?;
            view_a.push(fix_length(&a, input_len)?);
            view_b.push(fix_length(&b, input_len)?);
        }
        Ok(PretrainBatch {
            view_a,
            view_b,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }
}

/// One optimization step in the fixed order: gradient update of the query
/// encoder, then momentum update of the key encoder, then enqueue.
pub fn pretrain_step<E: Encoder>(
    pair: &mut EncoderPair<E>,
    queue: &mut NegativeQueue,
    optimizer: &mut Adam,
    batch: &PretrainBatch,
    cfg: &TrainingConfig,
    use_length_loss: bool,
) -> Result<LossBreakdown> {
    let q = pair.query.forward_train(&batch.view_a)?;
    let k = pair.key.forward_train(&batch.view_b)?;
    let k_hat = normalize_rows(k.view())?;
    let cl = contrastive_loss_grad(
        q.view(),
        k_hat.view(),
        queue.storage(),
        cfg.tau,
        cfg.include_positive_in_denominator,
    )?;
    let lambda = if use_length_loss { cfg.lambda } else { 0.0 };
    let len = length_loss_grad(q.view(), &batch.labels, cfg.real_weight, cfg.margin)?;
    let mut grad = cl.grad;
    if lambda > 0.0 {
        grad.scaled_add(lambda, &len.grad);
    }
    pair.query.zero_grad();
    pair.query.backward(&grad)?;
    optimizer.step(pair.query.params_mut());
    pair.momentum_update()?;
    queue.push(k_hat.view())?;
    Ok(pretrain_loss(cl.loss, len.loss, lambda))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub contrastive: f64,
    pub length: f64,
    pub total: f64,
}

pub struct PretrainOutcome<E> {
    pub pair: EncoderPair<E>,
    pub queue: NegativeQueue,
    pub log: Vec<StepRecord>,
    pub steps: u64,
}

/// Where pretraining writes its log and final checkpoint.
#[derive(Clone, Debug)]
pub struct PretrainOutputs {
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Pretrains `encoder` on `data`; `seed` fixes shuffling, views and the
/// queue initialization.
#[allow(clippy::too_many_arguments)]
pub fn pretrain<E: Encoder>(
    encoder: E,
    data: &Dataset,
    cfg: &TrainingConfig,
    policy: &AugmentationPolicy,
    bank: &NoiseBank,
    use_length_loss: bool,
    seed: u64,
    outputs: Option<&PretrainOutputs>,
) -> Result<PretrainOutcome<E>> {
    cfg.validate()?;
    policy.validate()?;
    if data.is_empty() {
        return Err(Error::arg("cannot pretrain on an empty dataset"));
    }
    let mut pair = EncoderPair::clone_into_key(encoder, cfg.momentum);
    let mut queue = NegativeQueue::new(cfg.queue_size, pair.query.feature_dim(), splitmix64(seed ^ 0x51))?;
    let mut optimizer = Adam::new(cfg.pretrain_lr, cfg.pretrain_weight_decay);
    let mut log = Vec::new();
    let mut writer = match outputs {
        Some(o) => Some(open_log(&o.log_path)?),
        None => None,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.pretrain_epochs {
        let lr = if cfg.cosine_annealing {
            cosine_lr(cfg.pretrain_lr, epoch, cfg.pretrain_epochs)
        } else {
            cfg.pretrain_lr
        };
        optimizer.lr = lr;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (epoch as u64) << 20));
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.pretrain_batch) {
            let samples: Vec<_> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let view_seed = splitmix64(seed.wrapping_add(0x9E37) ^ step.wrapping_mul(0xA24B_AED4_963E_E407));
            let batch = PretrainBatch::sample(&samples, policy, bank, cfg.input_len, view_seed)?;
            let losses = pretrain_step(&mut pair, &mut queue, &mut optimizer, &batch, cfg, use_length_loss)?;
            if !losses.total.is_finite() {
                return Err(Error::Domain(format!("pretraining loss diverged at step {step}")));
            }
            step += 1;
            let record = StepRecord {
                epoch,
                step,
                lr,
                contrastive: losses.contrastive,
                length: losses.length,
                total: losses.total,
            };
            if let (Some(w), Some(o)) = (writer.as_mut(), outputs) {
                write_record(w, &record, &o.log_path)?;
            }
            log.push(record);
        }
    }
    if let (Some(mut w), Some(o)) = (writer, outputs) {
        w.flush().map_err(|e| Error::io(&o.log_path, e))?;
        pair.query.to_checkpoint(step)?.write(&o.checkpoint_path)?;
    }
    Ok(PretrainOutcome {
        pair,
        queue,
        log,
        steps: step,
    })
}

pub(crate) fn open_log(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub(crate) fn write_record<T: Serialize>(w: &mut impl Write, record: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Mean of the rows' Euclidean norms, split by label.
pub fn mean_norms(features: ArrayView2<'_, f64>, labels: &[Label]) -> (f64, f64) {
    let norms = features.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mean = |want: Label| {
        let v: Vec<f64> = norms.iter().zip(labels).filter(|(_, l)| **l == want).map(|(n, _)| *n).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    (mean(Label::Real), mean(Label::Fake))
}
