//! Detection metrics and the manipulation-attack protocol.
//!
//! A score is the probability of being real. A sample is accepted as real
//! when its score is strictly greater than the threshold, so a score equal
//! to the threshold counts as fake. The threshold is fixed once per model at
//! the equal-error point of the clean evaluation scores and reused for every
//! manipulated cell; only fake samples are manipulated.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::fix_length;
use crate::data::{Dataset, Label};
use crate::downstream::{score_batch, score_dataset, Classifier, ScoreRecord, Variant};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::experiment::{train_classifier, ExperimentConfig};
use crate::manipulations::{compose, splitmix64, Family, ManipulationSpec, NoiseBank};

/// Real and fake score populations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub real_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(real_scores: Vec<f64>, fake_scores: Vec<f64>) -> Self {
        ScoreSet {
            real_scores,
            fake_scores,
        }
    }

    pub fn from_records(records: &[ScoreRecord]) -> Self {
        let mut s = ScoreSet::default();
        for r in records {
            match r.label {
                Label::Real => s.real_scores.push(r.p),
                Label::Fake => s.fake_scores.push(r.p),
            }
        }
        s
    }

    fn ensure_populated(&self) -> Result<()> {
        if self.real_scores.is_empty() || self.fake_scores.is_empty() {
            return Err(Error::arg(format!(
                "need real and fake scores, have {} real and {} fake",
                self.real_scores.len(),
                self.fake_scores.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    EerOnClean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub source: ThresholdSource,
}

/// Fraction of fake scores strictly above `t` (accepted as real).
pub fn far(fake_scores: &[f64], t: f64) -> Result<f64> {
    if fake_scores.is_empty() {
        return Err(Error::arg("FAR needs at least one fake score"));
    }
    Ok(fake_scores.iter().filter(|&&s| s > t).count() as f64 / fake_scores.len() as f64)
}

/// Fraction of real scores at or below `t` (rejected).
pub fn frr(real_scores: &[f64], t: f64) -> Result<f64> {
    if real_scores.is_empty() {
        return Err(Error::arg("FRR needs at least one real score"));
    }
    Ok(real_scores.iter().filter(|&&s| s <= t).count() as f64 / real_scores.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    #[default]
    Real,
    Fake,
}

/// F1 with real as the positive class.
pub fn f1(scores: &ScoreSet, t: f64) -> Result<f64> {
    f1_with(scores, t, PositiveClass::Real)
}

pub fn f1_with(scores: &ScoreSet, t: f64, positive: PositiveClass) -> Result<f64> {
    scores.ensure_populated()?;
    let accepted_real = scores.real_scores.iter().filter(|&&s| s > t).count();
    let accepted_fake = scores.fake_scores.iter().filter(|&&s| s > t).count();
    let (tp, fp, fn_) = match positive {
        PositiveClass::Real => (
            accepted_real,
            accepted_fake,
            scores.real_scores.len() - accepted_real,
        ),
        PositiveClass::Fake => (
            scores.fake_scores.len() - accepted_fake,
            scores.real_scores.len() - accepted_real,
            accepted_fake,
        ),
    };
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Candidate thresholds: `min - 1`, midpoints between consecutive distinct
/// pooled scores, `max + 1`. The outer two stand in for ∓∞.
pub fn candidate_thresholds(scores: &ScoreSet) -> Result<Vec<f64>> {
    scores.ensure_populated()?;
    let mut pooled: Vec<f64> = scores.real_scores.iter().chain(&scores.fake_scores).copied().collect();
    if pooled.iter().any(|s| !s.is_finite()) {
        return Err(Error::arg("scores must be finite"));
    }
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut out = Vec::with_capacity(pooled.len() + 1);
    out.push(pooled[0] - 1.0);
    out.extend(pooled.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(pooled[pooled.len() - 1] + 1.0);
    Ok(out)
}

/// `(threshold, FAR, FRR)` at every candidate threshold, ascending.
fn sweep(scores: &ScoreSet) -> Result<Vec<(f64, f64, f64)>> {
    let thresholds = candidate_thresholds(scores)?;
    let mut reals = scores.real_scores.clone();
    let mut fakes = scores.fake_scores.clone();
    reals.sort_by(f64::total_cmp);
    fakes.sort_by(f64::total_cmp);
    let (nr, nf) = (reals.len(), fakes.len());
    let (mut ri, mut fi) = (0, 0);
    Ok(thresholds
        .into_iter()
        .map(|t| {
            while ri < nr && reals[ri] <= t {
                ri += 1;
            }
            while fi < nf && fakes[fi] <= t {
                fi += 1;
            }
            (t, (nf - fi) as f64 / nf as f64, ri as f64 / nr as f64)
        })
        .collect())
}

/// Equal error rate and its threshold. Between the two candidates that
/// bracket the sign change of FAR − FRR both the rate and the threshold are
/// interpolated linearly.
pub fn eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let pts = sweep(scores)?;
    let j = pts
        .iter()
        .position(|&(_, fa, fr)| fa - fr <= 0.0)
        .expect("the last candidate rejects everything");
    let (t1, fa1, fr1) = pts[j];
    let d1 = fa1 - fr1;
    if d1 == 0.0 {
        return Ok((fa1, t1));
    }
    let (t0, fa0, fr0) = pts[j - 1];
    let d0 = fa0 - fr0;
    let alpha = d0 / (d0 - d1);
    Ok((fa0 + alpha * (fa1 - fa0), t0 + alpha * (t1 - t0)))
}

/// `(FAR, FRR)` at every candidate threshold, ordered by threshold.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    Ok(sweep(scores)?.into_iter().map(|(_, fa, fr)| (fa, fr)).collect())
}

/// One row of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    /// Tags of the manipulations applied to fakes, in order; empty when clean.
    pub manipulations: Vec<String>,
    pub far: f64,
    pub frr: f64,
    pub f1: f64,
    pub n_real: usize,
    pub n_fake: usize,
    #[serde(skip)]
    pub scores: Vec<ScoreRecord>,
    #[serde(skip)]
    pub det: Vec<(f64, f64)>,
}

impl CellRecord {
    pub fn label(&self) -> String {
        if self.manipulations.is_empty() {
            "clean".into()
        } else {
            self.manipulations.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean_eer: f64,
    pub threshold: Threshold,
    pub cells: Vec<CellRecord>,
    pub clean_det: Vec<(f64, f64)>,
    #[serde(skip)]
    pub clean_scores: Vec<ScoreRecord>,
}

/// Seeds and metric switches for the attack protocol.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Base seed for stochastic manipulations; each sample gets its own
    /// stream derived from this and its index.
    pub seed: u64,
    pub positive_class: PositiveClass,
}

fn sample_seed(base: u64, index: usize) -> u64 {
    splitmix64(base ^ (index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Scores the fakes of `data` after applying `specs` in order.
fn manipulated_fake_scores<E: Encoder>(
    classifier: &Classifier<E>,
    data: &Dataset,
    specs: &[ManipulationSpec],
    bank: &NoiseBank,
    cfg: &EvalConfig,
) -> Result<Vec<ScoreRecord>> {
    let input_len = classifier.encoder.input_len();
    let tag = specs.iter().map(|s| s.tag()).collect::<Vec<_>>().join("+");
    let fakes: Vec<(usize, _)> = data
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == Label::Fake)
        .collect();
    let mut out = Vec::with_capacity(fakes.len());
    const CHUNK: usize = 64;
    for chunk in fakes.chunks(CHUNK) {
        let views = chunk
            .iter()
            .map(|(i, s)| fix_length(&compose(specs, &s.waveform, bank, sample_seed(cfg.seed, *i))?, input_len))
            .collect::<Result<Vec<_>>>()?;
        let p = score_batch(classifier, &views)?;
        out.extend(chunk.iter().zip(p).map(|((_, s), p)| ScoreRecord {
            sample_id: s.id.clone(),
            label: Label::Fake,
            manipulation: Some(tag.clone()),
            p,
        }));
    }
    Ok(out)
}

fn cell_from(
    manipulations: Vec<String>,
    reals: &[ScoreRecord],
    fakes: Vec<ScoreRecord>,
    t: f64,
    cfg: &EvalConfig,
) -> Result<CellRecord> {
    let set = ScoreSet::new(
        reals.iter().map(|r| r.p).collect(),
        fakes.iter().map(|r| r.p).collect(),
    );
    let mut scores = reals.to_vec();
    scores.extend(fakes);
    Ok(CellRecord {
        manipulations,
        far: far(&set.fake_scores, t)?,
        frr: frr(&set.real_scores, t)?,
        f1: f1_with(&set, t, cfg.positive_class)?,
        n_real: set.real_scores.len(),
        n_fake: set.fake_scores.len(),
        det: det_points(&set)?,
        scores,
    })
}

struct CleanBaseline {
    reals: Vec<ScoreRecord>,
    all: Vec<ScoreRecord>,
    eer: f64,
    threshold: Threshold,
    det: Vec<(f64, f64)>,
}

fn clean_baseline<E: Encoder>(classifier: &Classifier<E>, data: &Dataset) -> Result<CleanBaseline> {
    data.ensure_both_classes()?;
    let all = score_dataset(classifier, data)?;
    let set = ScoreSet::from_records(&all);
    let (eer, t) = eer(&set)?;
    Ok(CleanBaseline {
        reals: all.iter().filter(|r| r.label == Label::Real).cloned().collect(),
        det: det_points(&set)?,
        all,
        eer,
        threshold: Threshold {
            value: t,
            source: ThresholdSource::EerOnClean,
        },
    })
}

/// Runs every manipulation of `grid` on the fakes of `data` under the clean
/// threshold; one cell per grid entry.
pub fn attack_sweep<E: Encoder>(
    classifier: &Classifier<E>,
    data: &Dataset,
    grid: &[ManipulationSpec],
    bank: &NoiseBank,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let base = clean_baseline(classifier, data)?;
    let t = base.threshold.value;
    let cells = grid
        .iter()
        .map(|spec| {
            let fakes = manipulated_fake_scores(classifier, data, std::slice::from_ref(spec), bank, cfg)?;
            cell_from(vec![spec.tag()], &base.reals, fakes, t, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        clean_eer: base.eer,
        threshold: base.threshold,
        cells,
        clean_det: base.det,
        clean_scores: base.all,
    })
}

/// Row-major `|specs|²` cells: cell `(i, j)` applies `specs[i]` then
/// `specs[j]`; diagonal cells apply `specs[i]` once, as a single attack.
pub fn combined_attack_matrix<E: Encoder>(
    classifier: &Classifier<E>,
    data: &Dataset,
    specs: &[ManipulationSpec],
    bank: &NoiseBank,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if specs.is_empty() {
        return Err(Error::arg("combined attack matrix needs at least one manipulation"));
    }
    let base = clean_baseline(classifier, data)?;
    let t = base.threshold.value;
    let mut cells = Vec::with_capacity(specs.len() * specs.len());
    for (i, first) in specs.iter().enumerate() {
        for (j, second) in specs.iter().enumerate() {
            let chain: Vec<ManipulationSpec> = if i == j {
                vec![first.clone()]
            } else {
                vec![first.clone(), second.clone()]
            };
            let fakes = manipulated_fake_scores(classifier, data, &chain, bank, cfg)?;
            cells.push(cell_from(chain.iter().map(|s| s.tag()).collect(), &base.reals, fakes, t, cfg)?);
        }
    }
    Ok(EvalReport {
        clean_eer: base.eer,
        threshold: base.threshold,
        cells,
        clean_det: base.det,
        clean_scores: base.all,
    })
}

/// Retrains the CLAD pipeline once per family with that family removed
/// from the augmentation policy, and evaluates each model on the full grid.
pub fn leave_one_out_study(
    train: &Dataset,
    eval: &Dataset,
    cfg: &ExperimentConfig,
    families: &[Family],
    bank: &NoiseBank,
    seed: u64,
) -> Result<Vec<(Family, EvalReport)>> {
    if families.len() < 2 {
        return Err(Error::arg("leave-one-out needs at least two families"));
    }
    families
        .iter()
        .map(|&family| {
            let mut policy = cfg.augmentation.clone();
            policy.enabled_families.remove(&family);
            policy.validate()?;
            let model = train_classifier(
                train,
                &cfg.encoder,
                &cfg.training,
                Variant::Clad.config(),
                &policy,
                bank,
                seed,
                None,
            )?;
            Ok((family, attack_sweep(&model.classifier, eval, &cfg.eval_grid, bank, &cfg.eval)?))
        })
        .collect()
}

/// Flat row of report files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub manipulation: String,
    pub far: f64,
    pub frr: f64,
    pub f1: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub threshold: f64,
    pub clean_eer: f64,
}

impl EvalReport {
    pub fn rows(&self) -> impl Iterator<Item = ReportRow> + '_ {
        self.cells.iter().map(|c| ReportRow {
            manipulation: c.label(),
            far: c.far,
            frr: c.frr,
            f1: c.f1,
            n_real: c.n_real,
            n_fake: c.n_fake,
            threshold: self.threshold.value,
            clean_eer: self.clean_eer,
        })
    }

    /// One JSON record per cell.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for row in self.rows() {
            text.push_str(&serde_json::to_string(&row)?);
            text.push('\n');
        }
        write_text(path, &text)
    }

    /// `manipulation,far,frr,f1,n_real,n_fake,threshold,clean_eer`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(&row).map_err(csv_err)?;
        }
        write_text(path, &String::from_utf8(w.into_inner().map_err(|e| Error::Format {
            field: "csv",
            message: e.to_string(),
        })?)
        .expect("csv output is UTF-8"))
    }

    /// Every score behind the report: clean scores, then each cell's fakes.
    pub fn all_scores(&self) -> Vec<ScoreRecord> {
        let mut out = self.clean_scores.clone();
        for c in &self.cells {
            out.extend(c.scores.iter().filter(|r| r.label == Label::Fake).cloned());
        }
        out
    }

    pub fn cell(&self, label: &str) -> Option<&CellRecord> {
        self.cells.iter().find(|c| c.label() == label)
    }
}

/// Reads the rows written by [`EvalReport::write_jsonl`].
pub fn read_report_jsonl(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_det_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut text = String::from("far,frr\n");
    for (fa, fr) in points {
        text.push_str(&format!("{fa},{fr}\n"));
    }
    write_text(path, &text)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        field: "csv",
        message: e.to_string(),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
