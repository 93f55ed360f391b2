//! Labeled audio collections shared by training and evaluation.

use serde::{Deserialize, Serialize};

use crate::audio::{fix_length, Waveform};
use crate::error::{Error, Result};

/// Ground-truth class. Serialized as `1` (real) and `0` (fake).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Fake,
    Real,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Fake => 0.0,
            Label::Real => 1.0,
        }
    }

    pub fn is_real(self) -> bool {
        self == Label::Real
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Fake),
            1 => Ok(Label::Real),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: Label,
    pub waveform: Waveform,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn waveforms(&self) -> Vec<&Waveform> {
        self.samples.iter().map(|s| &s.waveform).collect()
    }

    /// Errors unless both classes are present.
    pub fn ensure_both_classes(&self) -> Result<()> {
        if self.count(Label::Real) == 0 || self.count(Label::Fake) == 0 {
            return Err(Error::arg(format!(
                "dataset needs both classes, has {} real and {} fake",
                self.count(Label::Real),
                self.count(Label::Fake)
            )));
        }
        Ok(())
    }

    /// Tiles or truncates every waveform to `len` samples.
    pub fn fixed_length(&self, len: usize) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    waveform: fix_length(&s.waveform, len)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }
}
