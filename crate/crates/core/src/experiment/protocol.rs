//! ASVspoof-style protocol files.
//!
//! Each line has five whitespace-separated columns: speaker id, utterance
//! id, an unused column, system id, and `bonafide` or `spoof`. Audio for an
//! utterance is looked up as `<dir>/wav/<utt>.wav`, then `<dir>/<utt>.wav`.
//! FLAC corpora must be converted first, for example with
//! `for f in *.flac; do ffmpeg -i "$f" "${f%.flac}.wav"; done`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::data::{Dataset, Label, Sample};
use crate::error::{Error, Result};

pub const PROTOCOL_FILE: &str = "protocol.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKey {
    Bonafide,
    Spoof,
}

impl ProtocolKey {
    pub fn label(self) -> Label {
        match self {
            ProtocolKey::Bonafide => Label::Real,
            ProtocolKey::Spoof => Label::Fake,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ProtocolKey::Bonafide => "bonafide",
            ProtocolKey::Spoof => "spoof",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolEntry {
    pub speaker_id: String,
    pub utterance_id: String,
    pub system_id: String,
    pub key: ProtocolKey,
}

/// Parses protocol text; errors carry 1-based line numbers.
pub fn parse_protocol_text(text: &str) -> Result<Vec<ProtocolEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 5 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 5 columns, found {}", cols.len()),
            });
        }
        let key = match cols[4] {
            "bonafide" => ProtocolKey::Bonafide,
            "spoof" => ProtocolKey::Spoof,
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unknown key {other:?} (expected bonafide or spoof)"),
                })
            }
        };
        out.push(ProtocolEntry {
            speaker_id: cols[0].to_string(),
            utterance_id: cols[1].to_string(),
            system_id: cols[3].to_string(),
            key,
        });
    }
    Ok(out)
}

pub fn format_protocol(entries: &[ProtocolEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{} {} - {} {}", e.speaker_id, e.utterance_id, e.system_id, e.key.token()).expect("string write");
    }
    s
}

pub fn write_protocol(path: &Path, entries: &[ProtocolEntry]) -> Result<()> {
    crate::evaluation::write_text(path, &format_protocol(entries))
}

/// `protocol.txt` if present, otherwise the only `.txt` file in `dir`.
pub fn find_protocol_file(dir: &Path) -> Result<PathBuf> {
    let direct = dir.join(PROTOCOL_FILE);
    if direct.is_file() {
        return Ok(direct);
    }
    let mut txt: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    txt.sort();
    match txt.len() {
        1 => Ok(txt.remove(0)),
        0 => Err(Error::Resolution(vec![format!("{}/{PROTOCOL_FILE}", dir.display())])),
        _ => Err(Error::Resolution(
            txt.iter().map(|p| format!("ambiguous protocol file {}", p.display())).collect(),
        )),
    }
}

fn audio_path(dir: &Path, utt: &str) -> Option<PathBuf> {
    [dir.join("wav").join(format!("{utt}.wav")), dir.join(format!("{utt}.wav"))]
        .into_iter()
        .find(|p| p.is_file())
}

/// Reads the protocol in `dir` and loads every referenced WAV file.
pub fn parse_protocol(dir: &Path) -> Result<Dataset> {
    let path = find_protocol_file(dir)?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries = parse_protocol_text(&text)?;
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| audio_path(dir, &e.utterance_id).is_none())
        .map(|e| e.utterance_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Resolution(missing));
    }
    let samples = entries
        .into_iter()
        .map(|e| {
            let p = audio_path(dir, &e.utterance_id).expect("checked above");
            Ok(Sample {
                label: e.key.label(),
                waveform: read_wav(&p)?,
                id: e.utterance_id,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset::new(samples))
}
