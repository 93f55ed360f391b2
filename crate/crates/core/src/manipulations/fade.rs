use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Gain curve `g: [0, 1] -> [0, 1]` of a fade-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadeShape {
    Linear,
    Logarithmic,
    Exponential,
    QuarterSine,
    HalfSine,
}

impl FadeShape {
    pub const ALL: [FadeShape; 5] = [
        FadeShape::Linear,
        FadeShape::Logarithmic,
        FadeShape::Exponential,
        FadeShape::QuarterSine,
        FadeShape::HalfSine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FadeShape::Linear => "linear",
            FadeShape::Logarithmic => "logarithmic",
            FadeShape::Exponential => "exponential",
            FadeShape::QuarterSine => "quarter_sine",
            FadeShape::HalfSine => "half_sine",
        }
    }

    pub fn gain(self, t: f64) -> f64 {
        match self {
            FadeShape::Linear => t,
            FadeShape::Exponential => t * 2f64.powf(t - 1.0),
            FadeShape::Logarithmic => ((0.1 + t).log10() + 1.0).min(1.0),
            FadeShape::QuarterSine => (t * PI / 2.0).sin(),
            FadeShape::HalfSine => (t * PI - PI / 2.0).sin() / 2.0 + 0.5,
        }
    }

    /// Fade-in mask over `len` samples at `t_i = i / (len - 1)`.
    pub fn fade_in_mask(self, len: usize) -> Vec<f64> {
        match len {
            0 => Vec::new(),
            1 => vec![self.gain(0.0)],
            _ => {
                let denom = (len - 1) as f64;
                (0..len).map(|i| self.gain(i as f64 / denom)).collect()
            }
        }
    }
}

impl std::str::FromStr for FadeShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FadeShape::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown fade shape '{s}'")))
    }
}

/// Fades in the first and out the last `floor(ratio * L)` samples.
pub fn fade(w: &Waveform, ratio: f64, shape: FadeShape) -> Result<Waveform> {
    if !(0.0..=0.5).contains(&ratio) {
        return Err(Error::arg(format!("fade ratio must lie in [0, 0.5], got {ratio}")));
    }
    let len = w.len();
    let fade_len = (ratio * len as f64).floor() as usize;
    let mask = shape.fade_in_mask(fade_len);
    let mut out = w.samples().to_vec();
    for (i, g) in mask.iter().enumerate() {
        out[i] *= g;
        out[len - 1 - i] *= g;
    }
    Ok(w.with_samples(out))
}
