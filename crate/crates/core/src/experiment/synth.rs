//! Desk-scale stand-in corpus.
//!
//! Real samples are harmonic stacks with `1/k` amplitudes and a slow
//! vibrato. Fake samples use `1/k²` amplitudes, no vibrato, and reset every
//! oscillator phase every 512 samples, a crude stand-in for frame-wise
//! vocoder artifacts. Both get an attack/decay envelope and white noise at
//! 30 dB SNR, then are peak-normalized to 0.9.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::data::{Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::manipulations::{inject_noise, splitmix64, white_noise_source};

pub const HARMONICS: usize = 5;
pub const F0_RANGE_HZ: (f64, f64) = (120.0, 280.0);
pub const VIBRATO_DEPTH: f64 = 0.03;
pub const VIBRATO_RATE_HZ: f64 = 5.0;
pub const PHASE_RESET_PERIOD: usize = 512;
pub const NOISE_SNR_DB: f64 = 30.0;
pub const PEAK: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub real_fraction: f64,
    pub duration_samples: usize,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 2000,
            n_eval: 500,
            real_fraction: 0.1,
            duration_samples: 16_000,
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_real(&self, n: usize) -> usize {
        (self.real_fraction * n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.real_fraction > 0.0 && self.real_fraction < 1.0) {
            return Err(Error::Config(format!(
                "real_fraction must lie in (0, 1), got {}",
                self.real_fraction
            )));
        }
        for (name, n) in [("n_train", self.n_train), ("n_eval", self.n_eval)] {
            let r = self.n_real(n);
            if n < 2 || r == 0 || r == n {
                return Err(Error::Config(format!(
                    "{name} = {n} with real_fraction {} does not yield both classes",
                    self.real_fraction
                )));
            }
        }
        if self.duration_samples == 0 || self.sample_rate_hz == 0 {
            return Err(Error::Config("duration_samples and sample_rate_hz must be positive".into()));
        }
        Ok(())
    }
}

/// Training and evaluation splits drawn from disjoint random streams.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplits {
    pub train: Dataset,
    pub eval: Dataset,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticSplits> {
    cfg.validate()?;
    Ok(SyntheticSplits {
        train: generate_split(cfg, cfg.n_train, "train", 1)?,
        eval: generate_split(cfg, cfg.n_eval, "eval", 2)?,
    })
}

fn generate_split(cfg: &SynthConfig, n: usize, name: &str, stream: u64) -> Result<Dataset> {
    let n_real = cfg.n_real(n);
    let mut labels: Vec<Label> = (0..n).map(|i| if i < n_real { Label::Real } else { Label::Fake }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ stream.wrapping_mul(0x2545_F491_4F6C_DD1D)));
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let seed = splitmix64(rng.random::<u64>() ^ i as u64);
            Ok(Sample {
                id: format!("{name}_{i:05}"),
                label,
                waveform: synth_sample(label, cfg.duration_samples, cfg.sample_rate_hz, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset::new(samples))
}

/// Linear attack over the first 5% and decay over the last 10%.
fn envelope(n: usize, len: usize) -> f64 {
    let attack = (len as f64 * 0.05).max(1.0);
    let decay = (len as f64 * 0.10).max(1.0);
    let t = n as f64;
    let up = (t / attack).min(1.0);
    let down = ((len as f64 - t) / decay).min(1.0);
    up.min(down).max(0.0)
}

/// One sample of the given class, deterministic in `seed`.
pub fn synth_sample(label: Label, len: usize, sample_rate_hz: u32, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate_hz as f64;
    let f0 = rng.random_range(F0_RANGE_HZ.0..=F0_RANGE_HZ.1);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let noise_seed: u64 = rng.random();
    let mut phases: Vec<f64> = match label {
        Label::Real => (0..HARMONICS).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
        Label::Fake => vec![0.0; HARMONICS],
    };
    let mut x = Vec::with_capacity(len);
    for n in 0..len {
        if label == Label::Fake && n % PHASE_RESET_PERIOD == 0 {
            phases.iter_mut().for_each(|p| *p = 0.0);
        }
        let f = match label {
            Label::Real => f0 * (1.0 + VIBRATO_DEPTH * (2.0 * PI * VIBRATO_RATE_HZ * n as f64 / sr + vib_phase).sin()),
            Label::Fake => f0,
        };
        let mut v = 0.0;
        for (k, phase) in phases.iter_mut().enumerate() {
            let h = (k + 1) as f64;
            let amp = match label {
                Label::Real => 1.0 / h,
                Label::Fake => 1.0 / (h * h),
            };
            v += amp * phase.sin();
            *phase = (*phase + 2.0 * PI * h * f / sr) % (2.0 * PI);
        }
        x.push(v * envelope(n, len));
    }
    let clean = Waveform::new(x, sample_rate_hz)?;
    let noise = white_noise_source(len, noise_seed)?;
    let noisy = inject_noise(&clean, NOISE_SNR_DB, &noise)?;
    let peak = noisy.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Waveform::new(noisy.samples().iter().map(|v| v * PEAK / peak).collect(), sample_rate_hz)
}
