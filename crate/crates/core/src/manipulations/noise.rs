use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{power_of, read_wav, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Environmental noise categories of the evaluation grid.
pub const ENV_NOISE_IDS: [&str; 7] = [
    "wind",
    "footsteps",
    "breathing",
    "coughing",
    "rain",
    "clock_tick",
    "sneezing",
];

/// Zero-mean, unit-variance Gaussian noise, reproducible from `seed`.
pub fn white_noise_source(len: usize, seed: u64) -> Result<Waveform> {
    if len == 0 {
        return Err(Error::arg("noise length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Waveform::from_parts(samples, DEFAULT_SAMPLE_RATE))
}

/// Adds `noise` scaled so that the clean-to-added power ratio is `snr_db`.
///
/// Noise shorter than the signal is tiled; longer noise is cropped to its prefix.
pub fn inject_noise(w: &Waveform, snr_db: f64, noise: &Waveform) -> Result<Waveform> {
    w.ensure_non_empty()?;
    noise.ensure_non_empty()?;
    let signal_power = power_of(w.samples()).mean_square_power;
    if signal_power == 0.0 {
        return Err(Error::Domain("SNR undefined for silent signal".into()));
    }
    let segment: Vec<f64> = noise
        .samples()
        .iter()
        .copied()
        .cycle()
        .take(w.len())
        .collect();
    let noise_power = power_of(&segment).mean_square_power;
    if noise_power == 0.0 {
        return Err(Error::Domain("SNR undefined for silent noise".into()));
    }
    let target_noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let alpha = (target_noise_power / noise_power).sqrt();
    let out = w
        .samples()
        .iter()
        .zip(&segment)
        .map(|(s, n)| s + alpha * n)
        .collect();
    Ok(w.with_samples(out))
}

/// SNR of `noisy` against `clean`, treating their difference as the noise.
pub fn measured_snr_db(clean: &Waveform, noisy: &Waveform) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::arg("SNR measurement needs equal lengths"));
    }
    clean.ensure_non_empty()?;
    let residual: Vec<f64> = noisy
        .samples()
        .iter()
        .zip(clean.samples())
        .map(|(n, c)| n - c)
        .collect();
    let ps = power_of(clean.samples()).mean_square_power;
    let pn = power_of(&residual).mean_square_power;
    Ok(10.0 * (ps / pn).log10())
}

/// Named environmental noise recordings.
#[derive(Clone, Debug, Default)]
pub struct NoiseBank {
    entries: BTreeMap<String, Waveform>,
}

impl NoiseBank {
    pub fn insert(&mut self, id: impl Into<String>, noise: Waveform) -> Result<()> {
        let id = id.into();
        noise.ensure_non_empty()?;
        if self.entries.contains_key(&id) {
            return Err(Error::arg(format!("duplicate noise id '{id}'")));
        }
        self.entries.insert(id, noise);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Waveform> {
        self.entries
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("noise id '{id}' not in bank")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads every `<id>.wav` in `dir` as an entry named `id`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let mut bank = NoiseBank::default();
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::arg(format!("bad noise file name {}", path.display())))?
                .to_string();
            bank.insert(id, read_wav(&path)?)?;
        }
        Ok(bank)
    }

    /// Two seconds of synthetic texture for each of the seven categories.
    pub fn synthetic(sample_rate_hz: u32, seed: u64) -> Self {
        let mut bank = NoiseBank::default();
        for (i, id) in ENV_NOISE_IDS.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 7919));
            let samples = synth_texture(id, sample_rate_hz as f64, 2 * sample_rate_hz as usize, &mut rng);
            bank.insert(*id, Waveform::from_parts(samples, sample_rate_hz))
                .expect("synthetic ids are unique");
        }
        bank
    }
}

fn synth_texture(id: &str, sr: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut white = || -> f64 { rng.sample(StandardNormal) };
    let mut out = vec![0.0; len];
    match id {
        "wind" => {
            // low-passed noise with slow gusts
            let mut lp = 0.0;
            for (n, o) in out.iter_mut().enumerate() {
                lp = 0.995 * lp + 0.005 * white();
                let gust = 0.6 + 0.4 * (2.0 * PI * 0.4 * n as f64 / sr).sin();
                *o = lp * gust;
            }
        }
        "rain" => {
            // high-passed hiss plus sparse droplets
            let mut prev = 0.0;
            let mut drop = 0.0;
            for o in out.iter_mut() {
                let x = white();
                let hp = x - prev;
                prev = x;
                if (white().abs()) > 3.3 {
                    drop += white();
                }
                drop *= 0.97;
                *o = 0.2 * hp + drop;
            }
        }
        "footsteps" => {
            let period = (0.5 * sr) as usize;
            let mut lp = 0.0;
            for (n, o) in out.iter_mut().enumerate() {
                let t = (n % period) as f64 / sr;
                lp = 0.95 * lp + 0.05 * white();
                *o = lp * (-t / 0.04).exp();
            }
        }
        "breathing" => {
            let (mut a, mut b) = (0.0, 0.0);
            for (n, o) in out.iter_mut().enumerate() {
                let x = white();
                a = 0.9 * a + 0.1 * x;
                b = 0.99 * b + 0.01 * x;
                let env = (PI * 0.35 * n as f64 / sr).sin().powi(2);
                *o = (a - b) * env;
            }
        }
        "coughing" => {
            let onsets = [0.1, 0.45, 1.2];
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let env: f64 = onsets
                    .iter()
                    .filter(|&&s| t >= s)
                    .map(|&s| (-(t - s) / 0.12).exp() * (1.0 - (-(t - s) / 0.005).exp()))
                    .sum();
                *o = white() * env;
            }
        }
        "clock_tick" => {
            let period = (0.5 * sr) as usize;
            for (n, o) in out.iter_mut().enumerate() {
                let t = (n % period) as f64 / sr;
                *o = (2.0 * PI * 3000.0 * t).sin() * (-t / 0.003).exp() + 0.01 * white();
            }
        }
        "sneezing" => {
            for (n, o) in out.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let build = if t < 0.6 { 0.2 * (t / 0.6).powi(2) } else { 0.0 };
                let burst = if t >= 0.6 { (-(t - 0.6) / 0.15).exp() } else { 0.0 };
                *o = white() * (build + burst);
            }
        }
        _ => unreachable!("unknown synthetic noise id {id}"),
    }
    out
}
