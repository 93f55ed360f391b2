//! Waveforms, 16-bit PCM WAV I/O, length normalization and power measurement.
//!
//! Amplitudes are `f64` throughout the signal-processing layer. Integer PCM
//! sample `v` maps to `v / 32768` on read; on write an amplitude `a` is stored
//! as `clamp(round(a * 32768), -32768, 32767)`. Nothing is clamped on read.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Project-wide default sample rate.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32768.0;

/// Mono audio with its sample rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    /// Validating constructor: non-empty, finite amplitudes, positive rate.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::arg("waveform must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::arg(format!("non-finite amplitude at index {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a waveform from samples produced by an operation that already
    /// preserves the invariants.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        debug_assert!(sample_rate_hz > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Waveform {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same rate, new samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Waveform::from_parts(samples, self.sample_rate_hz)
    }

    pub(crate) fn ensure_non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::arg("waveform is empty"))
        } else {
            Ok(())
        }
    }
}

/// Mean-square power and peak magnitude of a waveform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerStats {
    pub mean_square_power: f64,
    pub peak_abs: f64,
}

impl PowerStats {
    /// Power in decibels relative to full-scale; `-inf` for silence.
    pub fn db(&self) -> f64 {
        10.0 * self.mean_square_power.log10()
    }
}

pub fn measure_power(w: &Waveform) -> Result<PowerStats> {
    w.ensure_non_empty()?;
    Ok(power_of(w.samples()))
}

pub(crate) fn power_of(samples: &[f64]) -> PowerStats {
    let mut sum = 0.0;
    let mut peak = 0.0f64;
    for &s in samples {
        sum += s * s;
        peak = peak.max(s.abs());
    }
    PowerStats {
        mean_square_power: sum / samples.len() as f64,
        peak_abs: peak,
    }
}

/// Repeats short signals end-to-end and keeps the prefix of long ones so the
/// result has exactly `target_len` samples.
pub fn fix_length(w: &Waveform, target_len: usize) -> Result<Waveform> {
    if target_len == 0 {
        return Err(Error::arg("target length must be positive"));
    }
    w.ensure_non_empty()?;
    let samples = if w.len() >= target_len {
        w.samples()[..target_len].to_vec()
    } else {
        w.samples().iter().copied().cycle().take(target_len).collect()
    };
    Ok(w.with_samples(samples))
}

/// Reads a RIFF/WAVE file holding 16-bit signed PCM mono audio.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    match spec.channels {
        1 => {}
        2 => {
            return Err(Error::Format {
                field: "channels",
                message: "stereo unsupported".into(),
            })
        }
        n => {
            return Err(Error::Format {
                field: "channels",
                message: format!("{n} channels unsupported"),
            })
        }
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format {
            field: "format",
            message: "floating-point samples unsupported".into(),
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::Format {
            field: "bits_per_sample",
            message: format!("{}-bit samples unsupported", spec.bits_per_sample),
        });
    }
    if spec.sample_rate == 0 {
        return Err(Error::Format {
            field: "sample_rate",
            message: "sample rate is zero".into(),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    if samples.is_empty() {
        return Err(Error::Format {
            field: "data",
            message: "no samples".into(),
        });
    }
    Ok(Waveform::from_parts(samples, spec.sample_rate))
}

/// Writes `w` as 16-bit PCM mono, clamping at the integer rails.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = w.samples().iter().position(|s| !s.is_finite()) {
        return Err(Error::arg(format!("non-finite amplitude at index {i}")));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &a in w.samples() {
        writer
            .write_sample(quantize(a))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// The int16 code an amplitude is stored as.
pub fn quantize(a: f64) -> i16 {
    (a * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::FormatError(msg) => Error::Format {
            field: "header",
            message: msg.to_string(),
        },
        hound::Error::TooWide => Error::Format {
            field: "bits_per_sample",
            message: "sample too wide".into(),
        },
        hound::Error::UnfinishedSample => Error::Format {
            field: "data",
            message: "truncated sample".into(),
        },
        hound::Error::Unsupported => Error::Format {
            field: "format",
            message: "unsupported wave format".into(),
        },
        hound::Error::InvalidSampleFormat => Error::Format {
            field: "format",
            message: "invalid sample format".into(),
        },
    }
}
