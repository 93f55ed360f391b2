//! The manipulation families used both as evasion attacks and as training
//! augmentations.
//!
//! Every operation maps a [`Waveform`] to a new waveform and never clamps the
//! result. Only [`time_stretch`] and [`resample`] change the length.

mod augment;
mod fade;
mod noise;
mod resample;
mod stretch;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use augment::{sample_view, AugmentationPolicy, ParameterRanges};
pub use fade::{fade, FadeShape};
pub use noise::{
    inject_noise, measured_snr_db, white_noise_source, NoiseBank, ENV_NOISE_IDS,
};
pub use resample::{resample, KAISER_BETA, ZERO_CROSSINGS};
pub use stretch::{stretch_hop, time_stretch, DEFAULT_N_FFT};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// A manipulation family, without parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    WhiteNoise,
    EnvNoise,
    Volume,
    Fade,
    TimeStretch,
    Resample,
    TimeShift,
    Echo,
    Identity,
}

impl Family {
    /// The eight attack families (everything except identity).
    pub const ATTACKS: [Family; 8] = [
        Family::WhiteNoise,
        Family::EnvNoise,
        Family::Volume,
        Family::Fade,
        Family::TimeStretch,
        Family::Resample,
        Family::TimeShift,
        Family::Echo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::WhiteNoise => "white_noise",
            Family::EnvNoise => "env_noise",
            Family::Volume => "volume",
            Family::Fade => "fade",
            Family::TimeStretch => "time_stretch",
            Family::Resample => "resample",
            Family::TimeShift => "time_shift",
            Family::Echo => "echo",
            Family::Identity => "identity",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ATTACKS
            .iter()
            .chain(std::iter::once(&Family::Identity))
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown manipulation family '{s}'")))
    }
}

/// One manipulation with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ManipulationSpec {
    Identity,
    WhiteNoise { snr_db: f64 },
    EnvNoise { snr_db: f64, noise_id: String },
    Volume { factor: f64 },
    Fade { ratio: f64, shape: FadeShape },
    TimeStretch { factor: f64, n_fft: usize },
    Resample { target_rate_hz: u32 },
    TimeShift { shift: i64 },
    Echo { delay: usize, attenuation: f64 },
}

impl ManipulationSpec {
    pub fn family(&self) -> Family {
        match self {
            ManipulationSpec::Identity => Family::Identity,
            ManipulationSpec::WhiteNoise { .. } => Family::WhiteNoise,
            ManipulationSpec::EnvNoise { .. } => Family::EnvNoise,
            ManipulationSpec::Volume { .. } => Family::Volume,
            ManipulationSpec::Fade { .. } => Family::Fade,
            ManipulationSpec::TimeStretch { .. } => Family::TimeStretch,
            ManipulationSpec::Resample { .. } => Family::Resample,
            ManipulationSpec::TimeShift { .. } => Family::TimeShift,
            ManipulationSpec::Echo { .. } => Family::Echo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::arg(msg));
        match *self {
            ManipulationSpec::WhiteNoise { snr_db } | ManipulationSpec::EnvNoise { snr_db, .. }
                if !snr_db.is_finite() =>
            {
                bad(format!("snr_db must be finite, got {snr_db}"))
            }
            ManipulationSpec::Volume { factor } if !(factor >= 0.0 && factor.is_finite()) => {
                bad(format!("volume factor must be finite and nonnegative, got {factor}"))
            }
            ManipulationSpec::Fade { ratio, .. } if !(0.0..=0.5).contains(&ratio) => {
                bad(format!("fade ratio must lie in [0, 0.5], got {ratio}"))
            }
            ManipulationSpec::TimeStretch { factor, n_fft } => {
                if !(factor > 0.0 && factor.is_finite()) {
                    bad(format!("stretch factor must be positive, got {factor}"))
                } else if n_fft == 0 || n_fft % 2 != 0 {
                    bad(format!("n_fft must be a positive even integer, got {n_fft}"))
                } else {
                    Ok(())
                }
            }
            ManipulationSpec::Resample { target_rate_hz: 0 } => {
                bad("target rate must be positive".into())
            }
            ManipulationSpec::Echo { delay, attenuation } => {
                if delay == 0 {
                    bad("echo delay must be positive".into())
                } else if !(0.0..=1.0).contains(&attenuation) {
                    bad(format!("echo attenuation must lie in [0, 1], got {attenuation}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Compact label used in reports and score files, e.g. `fade(0.5,half_sine)`.
    pub fn tag(&self) -> String {
        match self {
            ManipulationSpec::Identity => "identity".into(),
            ManipulationSpec::WhiteNoise { snr_db } => format!("white_noise({snr_db}dB)"),
            ManipulationSpec::EnvNoise { snr_db, noise_id } => {
                format!("env_noise({noise_id},{snr_db}dB)")
            }
            ManipulationSpec::Volume { factor } => format!("volume({factor})"),
            ManipulationSpec::Fade { ratio, shape } => format!("fade({ratio},{})", shape.name()),
            ManipulationSpec::TimeStretch { factor, n_fft } => {
                format!("time_stretch({factor},nfft={n_fft})")
            }
            ManipulationSpec::Resample { target_rate_hz } => format!("resample({target_rate_hz})"),
            ManipulationSpec::TimeShift { shift } => format!("time_shift({shift})"),
            ManipulationSpec::Echo { delay, attenuation } => {
                format!("echo({delay},{attenuation})")
            }
        }
    }
}

impl fmt::Display for ManipulationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

pub fn control_volume(w: &Waveform, factor: f64) -> Waveform {
    w.with_samples(w.samples().iter().map(|s| s * factor).collect())
}

/// Circular shift: `y[n] = x[(n - shift) mod L]`. Positive shifts delay.
pub fn time_shift(w: &Waveform, shift: i64) -> Waveform {
    let len = w.len();
    if len == 0 {
        return w.clone();
    }
    let k = shift.rem_euclid(len as i64) as usize;
    let mut out = w.samples().to_vec();
    out.rotate_right(k);
    w.with_samples(out)
}

/// `y[n] = x[n] + attenuation * x[n - delay]` for `n >= delay`.
pub fn add_echo(w: &Waveform, delay: usize, attenuation: f64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&attenuation) {
        return Err(Error::arg(format!(
            "echo attenuation must lie in [0, 1], got {attenuation}"
        )));
    }
    let x = w.samples();
    let mut y = x.to_vec();
    for n in delay..x.len() {
        y[n] += attenuation * x[n - delay];
    }
    Ok(w.with_samples(y))
}

/// Applies one manipulation. `seed` only feeds white-noise generation.
pub fn apply(spec: &ManipulationSpec, w: &Waveform, bank: &NoiseBank, seed: u64) -> Result<Waveform> {
    spec.validate()?;
    w.ensure_non_empty()?;
    match spec {
        ManipulationSpec::Identity => Ok(w.clone()),
        ManipulationSpec::WhiteNoise { snr_db } => {
            let noise = white_noise_source(w.len(), seed)?;
            inject_noise(w, *snr_db, &noise)
        }
        ManipulationSpec::EnvNoise { snr_db, noise_id } => {
            let noise = bank.get(noise_id)?;
            inject_noise(w, *snr_db, noise)
        }
        ManipulationSpec::Volume { factor } => Ok(control_volume(w, *factor)),
        ManipulationSpec::Fade { ratio, shape } => fade(w, *ratio, *shape),
        ManipulationSpec::TimeStretch { factor, n_fft } => time_stretch(w, *factor, *n_fft),
        ManipulationSpec::Resample { target_rate_hz } => resample(w, *target_rate_hz),
        ManipulationSpec::TimeShift { shift } => Ok(time_shift(w, *shift)),
        ManipulationSpec::Echo { delay, attenuation } => add_echo(w, *delay, *attenuation),
    }
}

/// Applies `specs` left to right. Step `i` receives a seed derived from
/// `seed` and `i` so two white-noise steps draw different noise.
pub fn compose(specs: &[ManipulationSpec], w: &Waveform, bank: &NoiseBank, seed: u64) -> Result<Waveform> {
    if specs.is_empty() {
        return Err(Error::arg("composition needs at least one manipulation"));
    }
    let mut out = w.clone();
    for (i, spec) in specs.iter().enumerate() {
        out = apply(spec, &out, bank, step_seed(seed, i))?;
    }
    Ok(out)
}

/// Seed for the `i`-th step of a composition; step 0 uses `seed` itself.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    if step == 0 {
        seed
    } else {
        splitmix64(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// The evaluation grid of single manipulations (volume, noise, stretch,
/// echo, shift, fade, resample), in that order.
pub fn default_eval_grid() -> Vec<ManipulationSpec> {
    use ManipulationSpec as M;
    let mut grid = vec![M::Volume { factor: 0.5 }, M::Volume { factor: 0.1 }];
    for snr_db in [15.0, 20.0, 25.0] {
        grid.push(M::WhiteNoise { snr_db });
    }
    for id in ENV_NOISE_IDS {
        grid.push(M::EnvNoise {
            snr_db: 20.0,
            noise_id: id.to_string(),
        });
    }
    for factor in [1.1, 1.05, 0.95, 0.9] {
        grid.push(M::TimeStretch {
            factor,
            n_fft: DEFAULT_N_FFT,
        });
    }
    for (delay, attenuation) in [(1000, 0.2), (1000, 0.5), (2000, 0.5)] {
        grid.push(M::Echo { delay, attenuation });
    }
    for shift in [1600, 16000, 32000] {
        grid.push(M::TimeShift { shift });
    }
    for ratio in [0.5, 0.3, 0.1] {
        grid.push(M::Fade {
            ratio,
            shape: FadeShape::Linear,
        });
    }
    for shape in [
        FadeShape::Exponential,
        FadeShape::QuarterSine,
        FadeShape::HalfSine,
        FadeShape::Logarithmic,
    ] {
        grid.push(M::Fade { ratio: 0.5, shape });
    }
    for target_rate_hz in [15_000, 15_500, 16_500, 17_000] {
        grid.push(M::Resample { target_rate_hz });
    }
    grid
}

/// The six-member representative set used for the combined-attack matrix:
/// VC 0.1, WN 15 dB, EN wind, TS 0.9, FD 0.5 half-sine, RS +1k.
pub fn representative_set() -> Vec<ManipulationSpec> {
    use ManipulationSpec as M;
    vec![
        M::Volume { factor: 0.1 },
        M::WhiteNoise { snr_db: 15.0 },
        M::EnvNoise {
            snr_db: 20.0,
            noise_id: "wind".into(),
        },
        M::TimeStretch {
            factor: 0.9,
            n_fft: DEFAULT_N_FFT,
        },
        M::Fade {
            ratio: 0.5,
            shape: FadeShape::HalfSine,
        },
        M::Resample {
            target_rate_hz: 17_000,
        },
    ]
}
