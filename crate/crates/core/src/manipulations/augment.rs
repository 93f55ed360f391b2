use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply, step_seed, FadeShape, Family, ManipulationSpec, NoiseBank, DEFAULT_N_FFT, ENV_NOISE_IDS};
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Sampling ranges per family. Continuous parameters are drawn uniformly
/// from the closed interval; categorical ones uniformly from the list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterRanges {
    pub white_noise_snr_db: (f64, f64),
    pub env_noise_snr_db: (f64, f64),
    pub env_noise_ids: Vec<String>,
    pub volume_factor: (f64, f64),
    pub fade_ratio: (f64, f64),
    pub fade_shapes: Vec<FadeShape>,
    pub stretch_factor: (f64, f64),
    pub stretch_n_fft: usize,
    pub resample_rate_hz: (u32, u32),
    pub shift_samples: (i64, i64),
    pub echo_delay: (usize, usize),
    pub echo_attenuation: (f64, f64),
}

impl Default for ParameterRanges {
    /// The hull of each family's evaluation grid.
    fn default() -> Self {
        ParameterRanges {
            white_noise_snr_db: (15.0, 25.0),
            env_noise_snr_db: (20.0, 20.0),
            env_noise_ids: ENV_NOISE_IDS.iter().map(|s| s.to_string()).collect(),
            volume_factor: (0.1, 0.5),
            fade_ratio: (0.1, 0.5),
            fade_shapes: FadeShape::ALL.to_vec(),
            stretch_factor: (0.9, 1.1),
            stretch_n_fft: DEFAULT_N_FFT,
            resample_rate_hz: (15_000, 17_000),
            shift_samples: (1_600, 32_000),
            echo_delay: (1_000, 2_000),
            echo_attenuation: (0.2, 0.5),
        }
    }
}

/// How training views are manipulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub enabled_families: BTreeSet<Family>,
    pub parameter_ranges: ParameterRanges,
    /// Manipulations chained per view.
    pub chain_depth: usize,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            enabled_families: Family::ATTACKS.into_iter().collect(),
            parameter_ranges: ParameterRanges::default(),
            chain_depth: 1,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn only(families: impl IntoIterator<Item = Family>) -> Self {
        AugmentationPolicy {
            enabled_families: families.into_iter().collect(),
            ..Default::default()
        }
    }

    /// The default policy with one family removed.
    pub fn without(family: Family) -> Self {
        let mut p = AugmentationPolicy::default();
        p.enabled_families.remove(&family);
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled_families.is_empty() {
            return Err(Error::arg("augmentation policy enables no family"));
        }
        if self.chain_depth == 0 {
            return Err(Error::arg("chain depth must be at least 1"));
        }
        let r = &self.parameter_ranges;
        let ordered = |name: &str, lo: f64, hi: f64| {
            if lo <= hi && lo.is_finite() && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("range {name} = ({lo}, {hi}) is not ordered")))
            }
        };
        ordered("white_noise_snr_db", r.white_noise_snr_db.0, r.white_noise_snr_db.1)?;
        ordered("env_noise_snr_db", r.env_noise_snr_db.0, r.env_noise_snr_db.1)?;
        ordered("volume_factor", r.volume_factor.0, r.volume_factor.1)?;
        ordered("fade_ratio", r.fade_ratio.0, r.fade_ratio.1)?;
        ordered("stretch_factor", r.stretch_factor.0, r.stretch_factor.1)?;
        ordered("echo_attenuation", r.echo_attenuation.0, r.echo_attenuation.1)?;
        ordered("resample_rate_hz", r.resample_rate_hz.0 as f64, r.resample_rate_hz.1 as f64)?;
        ordered("shift_samples", r.shift_samples.0 as f64, r.shift_samples.1 as f64)?;
        ordered("echo_delay", r.echo_delay.0 as f64, r.echo_delay.1 as f64)?;
        // the extreme corners must be valid specs
        let corners = [
            ManipulationSpec::Volume { factor: r.volume_factor.0 },
            ManipulationSpec::Fade { ratio: r.fade_ratio.0, shape: FadeShape::Linear },
            ManipulationSpec::Fade { ratio: r.fade_ratio.1, shape: FadeShape::Linear },
            ManipulationSpec::TimeStretch { factor: r.stretch_factor.0, n_fft: r.stretch_n_fft },
            ManipulationSpec::Resample { target_rate_hz: r.resample_rate_hz.0 },
            ManipulationSpec::Echo { delay: r.echo_delay.0, attenuation: r.echo_attenuation.0 },
            ManipulationSpec::Echo { delay: r.echo_delay.1, attenuation: r.echo_attenuation.1 },
        ];
        for c in &corners {
            c.validate()?;
        }
        if self.enabled_families.contains(&Family::EnvNoise) && r.env_noise_ids.is_empty() {
            return Err(Error::arg("env_noise enabled but no noise ids configured"));
        }
        if self.enabled_families.contains(&Family::Fade) && r.fade_shapes.is_empty() {
            return Err(Error::arg("fade enabled but no fade shapes configured"));
        }
        Ok(())
    }

    /// Draws one manipulation (family uniform, then parameters uniform).
    pub fn draw_spec<R: Rng + ?Sized>(&self, rng: &mut R) -> ManipulationSpec {
        let families: Vec<Family> = self.enabled_families.iter().copied().collect();
        let family = families[rng.random_range(0..families.len())];
        let r = &self.parameter_ranges;
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        match family {
            Family::Identity => ManipulationSpec::Identity,
            Family::WhiteNoise => ManipulationSpec::WhiteNoise {
                snr_db: uniform(rng, r.white_noise_snr_db),
            },
            Family::EnvNoise => {
                let snr_db = uniform(rng, r.env_noise_snr_db);
                let noise_id = r.env_noise_ids[rng.random_range(0..r.env_noise_ids.len())].clone();
                ManipulationSpec::EnvNoise { snr_db, noise_id }
            }
            Family::Volume => ManipulationSpec::Volume {
                factor: uniform(rng, r.volume_factor),
            },
            Family::Fade => {
                let ratio = uniform(rng, r.fade_ratio);
                let shape = r.fade_shapes[rng.random_range(0..r.fade_shapes.len())];
                ManipulationSpec::Fade { ratio, shape }
            }
            Family::TimeStretch => ManipulationSpec::TimeStretch {
                factor: uniform(rng, r.stretch_factor),
                n_fft: r.stretch_n_fft,
            },
            Family::Resample => ManipulationSpec::Resample {
                target_rate_hz: rng.random_range(r.resample_rate_hz.0..=r.resample_rate_hz.1),
            },
            Family::TimeShift => ManipulationSpec::TimeShift {
                shift: rng.random_range(r.shift_samples.0..=r.shift_samples.1),
            },
            Family::Echo => ManipulationSpec::Echo {
                delay: rng.random_range(r.echo_delay.0..=r.echo_delay.1),
                attenuation: uniform(rng, r.echo_attenuation),
            },
        }
    }
}

/// Manipulates `w` with freshly drawn manipulations and returns the view
/// together with the specs that produced it (one per chain step).
pub fn sample_view<R: Rng + ?Sized>(
    policy: &AugmentationPolicy,
    w: &Waveform,
    bank: &NoiseBank,
    rng: &mut R,
) -> Result<(Waveform, Vec<ManipulationSpec>)> {
    let mut out = w.clone();
    let mut specs = Vec::with_capacity(policy.chain_depth);
    for step in 0..policy.chain_depth.max(1) {
        let spec = policy.draw_spec(rng);
        let seed: u64 = rng.random();
        out = apply(&spec, &out, bank, step_seed(seed, step))?;
        specs.push(spec);
    }
    Ok((out, specs))
}
