//! Waveform encoders and the query/key pair used for momentum contrast.
//!
//! Any network implementing [`Encoder`] can be plugged into pretraining and
//! fine-tuning: it maps a batch of fixed-length waveforms to a `[B, D]`
//! feature matrix and exposes its parameters as a flat, ordered list.

mod checkpoint;
mod tiny;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub(crate) use checkpoint::{encoder_config_of, encoder_tensors, load_tensors};
pub use checkpoint::{Checkpoint, CheckpointKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tiny::{TinyEncoder, TinyEncoderConfig};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::nn::Param;

pub trait Encoder: Clone + Send + Sync {
    fn feature_dim(&self) -> usize;

    /// Number of samples every input waveform must have.
    fn input_len(&self) -> usize;

    /// Forward pass with batch statistics; caches what `backward` needs.
    fn forward_train(&mut self, batch: &[Waveform]) -> Result<Array2<f64>>;

    /// Accumulates parameter gradients for `d loss / d features` of the last
    /// `forward_train` call.
    fn backward(&mut self, grad: &Array2<f64>) -> Result<()>;

    /// Inference with running statistics. Never mutates the encoder.
    fn infer(&self, batch: &[Waveform]) -> Result<Array2<f64>>;

    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Non-trainable state (normalization statistics).
    fn buffers(&self) -> Vec<&Param>;
    fn buffers_mut(&mut self) -> Vec<&mut Param>;

    fn to_checkpoint(&self, step: u64) -> Result<Checkpoint>;

    /// Loads weights and statistics by tensor name. Classifier checkpoints
    /// carry the encoder tensors too and are accepted.
    fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape.clone()).collect()
    }
}

/// One encoder output row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub(crate) fn check_batch_len(batch: &[Waveform], input_len: usize) -> Result<()> {
    match batch.iter().position(|w| w.len() != input_len) {
        Some(i) => Err(Error::arg(format!(
            "batch item {i} has {} samples, encoder expects {input_len}",
            batch[i].len()
        ))),
        None => Ok(()),
    }
}

/// Encodes in inference mode, one feature vector per waveform, order kept.
pub fn encode_batch<E: Encoder>(enc: &E, batch: &[Waveform]) -> Result<Vec<FeatureVector>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    check_batch_len(batch, enc.input_len())?;
    let feats = enc.infer(batch)?;
    Ok(feats.rows().into_iter().map(|r| FeatureVector(r.to_vec())).collect())
}

/// Query encoder (trained by gradient) and its momentum-averaged key twin.
#[derive(Clone, Debug)]
pub struct EncoderPair<E> {
    pub query: E,
    pub key: E,
    pub momentum: f64,
}

impl<E: Encoder> EncoderPair<E> {
    /// Starts the key encoder as a deep copy of the query encoder.
    pub fn clone_into_key(query: E, momentum: f64) -> Self {
        let key = query.clone();
        EncoderPair {
            query,
            key,
            momentum,
        }
    }

    /// `θ_k ← μ θ_k + (1 − μ) θ_q` over every parameter and buffer.
    pub fn momentum_update(&mut self) -> Result<()> {
        momentum_update_params(self.key.params_mut(), self.query.params(), self.momentum)?;
        momentum_update_params(self.key.buffers_mut(), self.query.buffers(), self.momentum)
    }
}

/// Elementwise momentum blend, computed in f64 and stored as f32.
pub fn momentum_update_params(key: Vec<&mut Param>, query: Vec<&Param>, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::arg(format!("momentum must lie in [0, 1], got {momentum}")));
    }
    if key.len() != query.len() {
        return Err(Error::Consistency(format!(
            "key has {} tensors, query has {}",
            key.len(),
            query.len()
        )));
    }
    for (k, q) in key.iter().zip(&query) {
        if k.shape != q.shape {
            return Err(Error::Consistency(format!(
                "shape mismatch for {}: {:?} vs {:?}",
                k.name, k.shape, q.shape
            )));
        }
    }
    for (k, q) in key.into_iter().zip(query) {
        for (kv, qv) in k.value.iter_mut().zip(&q.value) {
            *kv = blend(*kv, *qv, momentum);
        }
    }
    Ok(())
}

#[inline]
pub(crate) fn blend(key: f32, query: f32, momentum: f64) -> f32 {
    (momentum * key as f64 + (1.0 - momentum) * query as f64) as f32
}
