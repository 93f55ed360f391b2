use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_batch_len, encoder_tensors, load_tensors, Checkpoint, CheckpointKind, Encoder};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, BnCache, Conv1d, Linear, Param};

/// Strided Conv → BatchNorm → ReLU blocks, global average pooling and a
/// linear projection to `feature_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyEncoderConfig {
    pub input_len: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub feature_dim: usize,
}

impl Default for TinyEncoderConfig {
    fn default() -> Self {
        TinyEncoderConfig {
            input_len: 16_000,
            channels: vec![16, 32, 64],
            kernel: 9,
            stride: 4,
            feature_dim: 32,
        }
    }
}

impl TinyEncoderConfig {
    /// Temporal length after each block.
    pub fn block_lengths(&self) -> Vec<usize> {
        let mut len = self.input_len;
        self.channels
            .iter()
            .map(|_| {
                len = if len < self.kernel { 0 } else { (len - self.kernel) / self.stride + 1 };
                len
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("encoder needs at least one block with nonzero channels".into()));
        }
        if self.kernel == 0 || self.stride == 0 || self.feature_dim == 0 {
            return Err(Error::Config("kernel, stride and feature_dim must be positive".into()));
        }
        if self.block_lengths().last() == Some(&0) {
            return Err(Error::Config(format!(
                "input_len {} is too short for {} blocks of kernel {} stride {}",
                self.input_len,
                self.channels.len(),
                self.kernel,
                self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv1d,
    bn: BatchNorm1d,
}

struct BlockCache {
    in_len: usize,
    cols: Vec<f32>,
    bn: BnCache,
    act: Vec<f32>,
}

struct Cache {
    batch: usize,
    blocks: Vec<BlockCache>,
    pooled: Vec<f32>,
}

#[derive(Debug)]
pub struct TinyEncoder {
    config: TinyEncoderConfig,
    blocks: Vec<Block>,
    head: Linear,
    cache: Option<Cache>,
}

impl std::fmt::Debug for Cache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Cache(batch = {})", self.batch)
    }
}

// cached activations belong to one training step and are not copied
impl Clone for TinyEncoder {
    fn clone(&self) -> Self {
        TinyEncoder {
            config: self.config.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
            cache: None,
        }
    }
}

const INFER_CHUNK: usize = 32;

impl TinyEncoder {
    pub fn new(config: TinyEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 1;
        let blocks = config
            .channels
            .iter()
            .enumerate()
            .map(|(i, &out_ch)| {
                let conv = Conv1d::new(&format!("blocks.{i}.conv"), in_ch, out_ch, config.kernel, config.stride, &mut rng);
                in_ch = out_ch;
                Block {
                    conv,
                    bn: BatchNorm1d::new(&format!("blocks.{i}.bn"), out_ch),
                }
            })
            .collect();
        let head = Linear::new("head", in_ch, config.feature_dim, &mut rng);
        Ok(TinyEncoder {
            config,
            blocks,
            head,
            cache: None,
        })
    }

    pub fn config(&self) -> &TinyEncoderConfig {
        &self.config
    }

    fn flatten(batch: &[Waveform]) -> Vec<f32> {
        batch.iter().flat_map(|w| w.samples().iter().map(|&s| s as f32)).collect()
    }

    fn pool(act: &[f32], channels: usize, batch: usize, len: usize) -> Vec<f32> {
        let mut pooled = vec![0.0; batch * channels];
        for c in 0..channels {
            for b in 0..batch {
                let row = &act[c * batch * len + b * len..][..len];
                pooled[b * channels + c] = (row.iter().map(|&v| v as f64).sum::<f64>() / len as f64) as f32;
            }
        }
        pooled
    }

    fn to_features(out: Vec<f32>, batch: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_vec((batch, dim), out.into_iter().map(f64::from).collect())
            .expect("head output has batch * dim entries")
    }

    fn infer_chunk(&self, batch: &[Waveform]) -> Vec<f32> {
        let n = batch.len();
        let mut x = Self::flatten(batch);
        let mut len = self.config.input_len;
        for block in &self.blocks {
            let (mut y, _) = block.conv.forward(&x, n, len);
            len = block.conv.out_len(len);
            block.bn.forward_eval(&mut y);
            y.iter_mut().for_each(|v| *v = v.max(0.0));
            x = y;
        }
        let channels = *self.config.channels.last().expect("validated");
        let pooled = Self::pool(&x, channels, n, len);
        self.head.forward(&pooled, n)
    }
}

impl Encoder for TinyEncoder {
    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn input_len(&self) -> usize {
        self.config.input_len
    }

    fn forward_train(&mut self, batch: &[Waveform]) -> Result<Array2<f64>> {
        if batch.is_empty() {
            return Err(Error::arg("empty training batch"));
        }
        check_batch_len(batch, self.config.input_len)?;
        let n = batch.len();
        let mut x = Self::flatten(batch);
        let mut len = self.config.input_len;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (mut y, cols) = block.conv.forward(&x, n, len);
            let in_len = len;
            len = block.conv.out_len(len);
            let bn = block.bn.forward_train(&mut y);
            y.iter_mut().for_each(|v| *v = v.max(0.0));
            caches.push(BlockCache {
                in_len,
                cols,
                bn,
                act: y.clone(),
            });
            x = y;
        }
        let channels = *self.config.channels.last().expect("validated");
        let pooled = Self::pool(&x, channels, n, len);
        let out = self.head.forward(&pooled, n);
        self.cache = Some(Cache {
            batch: n,
            blocks: caches,
            pooled,
        });
        Ok(Self::to_features(out, n, self.config.feature_dim))
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Consistency("backward called without a training forward pass".into()))?;
        let n = cache.batch;
        if grad.dim() != (n, self.config.feature_dim) {
            return Err(Error::Consistency(format!(
                "gradient shape {:?} does not match features ({n}, {})",
                grad.dim(),
                self.config.feature_dim
            )));
        }
        let g: Vec<f32> = grad.iter().map(|&v| v as f32).collect();
        let g_pooled = self.head.backward(&g, &cache.pooled, n);

        let lens = self.config.block_lengths();
        let channels = *self.config.channels.last().expect("validated");
        let last_len = *lens.last().expect("validated");
        let mut d = vec![0.0f32; channels * n * last_len];
        for c in 0..channels {
            for b in 0..n {
                let v = g_pooled[b * channels + c] / last_len as f32;
                d[c * n * last_len + b * last_len..][..last_len].fill(v);
            }
        }
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            for (dv, a) in d.iter_mut().zip(&bc.act) {
                if *a <= 0.0 {
                    *dv = 0.0;
                }
            }
            block.bn.backward(&mut d, &bc.bn);
            match block.conv.backward(&d, &bc.cols, n, bc.in_len, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
        Ok(())
    }

    fn infer(&self, batch: &[Waveform]) -> Result<Array2<f64>> {
        check_batch_len(batch, self.config.input_len)?;
        let dim = self.config.feature_dim;
        let mut out = Vec::with_capacity(batch.len() * dim);
        for chunk in batch.chunks(INFER_CHUNK) {
            out.extend(self.infer_chunk(chunk));
        }
        Ok(Self::to_features(out, batch.len(), dim))
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend([&b.conv.weight, &b.bn.gamma, &b.bn.beta]);
        }
        v.extend([&self.head.weight, &self.head.bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend([&mut b.conv.weight, &mut b.bn.gamma, &mut b.bn.beta]);
        }
        v.extend([&mut self.head.weight, &mut self.head.bias]);
        v
    }

    fn to_checkpoint(&self, step: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CheckpointKind::Encoder,
            step,
            meta: serde_json::json!({ "encoder": serde_json::to_value(&self.config)? }),
            tensors: encoder_tensors(self),
        })
    }

    fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        load_tensors(self.params_mut(), ckpt)?;
        load_tensors(self.buffers_mut(), ckpt)
    }

    fn buffers(&self) -> Vec<&Param> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.bn.running_mean, &b.bn.running_var])
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.bn.running_mean, &mut b.bn.running_var])
            .collect()
    }
}
