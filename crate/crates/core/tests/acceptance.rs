//! Acceptance report. Prints one PASS/FAIL line per criterion, then fails
//! if any criterion failed.
//!
//! The end-to-end experiment trains three variants for three seeds on the
//! desk-scale synthetic corpus and dominates the runtime (about half an
//! hour on one core).

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use clad_core::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use clad_core::contrastive::{
    contrastive_loss, contrastive_loss_grad, length_loss, length_loss_grad, NegativeQueue, TrainingConfig,
};
use clad_core::downstream::{downstream_loss_from_logits, Classifier, Variant};
use clad_core::encoder::{momentum_update_params, Checkpoint, TinyEncoder, TinyEncoderConfig};
use clad_core::evaluation::{attack_sweep, combined_attack_matrix, eer, EvalReport};
use clad_core::experiment::{
    load_noise_bank, load_splits, run_experiment, DatasetSource, ExperimentConfig, ExperimentOutcome, SynthConfig,
    VariantChoice,
};
use clad_core::manipulations::{
    apply, fade, representative_set, resample, stretch_hop, time_shift, time_stretch, FadeShape, ManipulationSpec,
    NoiseBank, DEFAULT_N_FFT,
};
use clad_core::nn::Param;
use rand::Rng;
use rand_distr::StandardNormal;

mod common;
use common::*;

const E2E_BUDGET_SECS: f64 = 45.0 * 60.0;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs a check, turning a panic into a failure.
fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        }
    }
}

/// Written straight to stderr so the lines survive output capture.
fn emit(name: &str, v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{tag} {name}: {}", v.detail);
}

fn loss_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(1..=4);
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=8);
        let tau = rng.random_range(0.05..1.0);
        let q = gaussian(&mut rng, n, d);
        let kp = gaussian(&mut rng, n, d);
        let mut queue = NegativeQueue::new(k, d, case).unwrap();
        let pushed = rng.random_range(0..=k);
        queue.push(unit_rows(&mut rng, pushed, d).view()).unwrap();
        let got = contrastive_loss(q.view(), kp.view(), &queue, tau).unwrap();
        worst = worst.max((got - contrastive_oracle(&q, &kp, queue.storage(), tau)).abs());

        let y = labels(&mut rng, n);
        let w = rng.random_range(0.1..10.0);
        let margin = rng.random_range(0.0..5.0);
        let got = length_loss(q.view(), &y, w, margin).unwrap();
        worst = worst.max((got - length_oracle(&q, &y, w, margin)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        worst <= 1e-6 && secs < 10.0,
        format!("200 instances, max |Δ| {worst:.1e} (tol 1e-6), {secs:.2}s (limit 10s)"),
    )
}

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded(7);
    let (mut w_cl, mut w_len, mut w_ce) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..50 {
        let n = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let k = rng.random_range(1..=8);
        let tau = rng.random_range(0.07..1.0);
        let q = gaussian(&mut rng, n, d);
        let kp = gaussian(&mut rng, n, d);
        let negs = unit_rows(&mut rng, k, d);
        let include = case % 2 == 0;
        let analytic = contrastive_loss_grad(q.view(), kp.view(), negs.view(), tau, include).unwrap().grad;
        let numeric = numeric_grad(&q, 1e-6, |x| {
            contrastive_loss_grad(x.view(), kp.view(), negs.view(), tau, include).unwrap().loss
        });
        w_cl = w_cl.max(relative_error(&analytic, &numeric));
    }
    let mut done = 0;
    while done < 50 {
        let n = rng.random_range(1..=4);
        let d = rng.random_range(1..=8);
        let w = rng.random_range(0.5..10.0);
        let margin = rng.random_range(0.5..5.0);
        let q = gaussian(&mut rng, n, d) * rng.random_range(0.2..2.0);
        let y = labels(&mut rng, n);
        let clear = q.rows().into_iter().all(|r| {
            let norm = r.dot(&r).sqrt();
            norm > 1e-2 && (norm - margin).abs() > 1e-2
        });
        if !clear {
            continue;
        }
        let analytic = length_loss_grad(q.view(), &y, w, margin).unwrap().grad;
        let numeric = numeric_grad(&q, 1e-6, |x| length_loss(x.view(), &y, w, margin).unwrap());
        w_len = w_len.max(relative_error(&analytic, &numeric));
        done += 1;
    }
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let logits = gaussian(&mut rng, n, 2) * 1.5;
        let y = labels(&mut rng, n);
        let (loss, analytic) = downstream_loss_from_logits(&logits, &y).unwrap();
        assert!((loss - cross_entropy_oracle(&logits, &y)).abs() <= 1e-9);
        let numeric = numeric_grad(&logits, 1e-6, |x| downstream_loss_from_logits(x, &y).unwrap().0);
        w_ce = w_ce.max(relative_error(&analytic, &numeric));
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = w_cl.max(w_len).max(w_ce);
    Verdict::new(
        worst <= 1e-4 && secs < 60.0,
        format!(
            "max relative error contrastive {w_cl:.1e}, length {w_len:.1e}, cross-entropy {w_ce:.1e} (tol 1e-4), {secs:.2}s (limit 60s)"
        ),
    )
}

fn random_param(rng: &mut rand_chacha::ChaCha8Rng, name: &str, len: usize) -> Param {
    Param::new(name, vec![len], (0..len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
}

fn momentum_and_queue() -> Verdict {
    let mut rng = seeded(3);
    let mut mismatches = 0usize;
    for mu in [0.0, 0.5, 0.999, 1.0] {
        for _ in 0..20 {
            let lens: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(1..200)).collect();
            let query: Vec<Param> =
                lens.iter().enumerate().map(|(i, &n)| random_param(&mut rng, &format!("p{i}"), n)).collect();
            let mut key: Vec<Param> =
                lens.iter().enumerate().map(|(i, &n)| random_param(&mut rng, &format!("p{i}"), n)).collect();
            let before = key.clone();
            momentum_update_params(key.iter_mut().collect(), query.iter().collect(), mu).unwrap();
            for ((k, k0), q) in key.iter().zip(&before).zip(&query) {
                for ((&got, &old), &qv) in k.value.iter().zip(&k0.value).zip(&q.value) {
                    let want = (mu * old as f64 + (1.0 - mu) * qv as f64) as f32;
                    mismatches += (got.to_bits() != want.to_bits()) as usize;
                }
            }
        }
    }
    let mut rng = seeded(17);
    let mut queue_errors = 0usize;
    for sequence in 0..10_000u64 {
        let k = rng.random_range(1..=12);
        let d = rng.random_range(1..=4);
        let mut queue = NegativeQueue::new(k, d, sequence).unwrap();
        let mut ring = Ring {
            rows: queue.storage().rows().into_iter().map(|r| r.to_vec()).collect(),
            head: 0,
        };
        for _ in 0..rng.random_range(1..=6) {
            let b = rng.random_range(0..=k);
            let keys = unit_rows(&mut rng, b, d);
            queue.push(keys.view()).unwrap();
            for r in keys.rows() {
                ring.push(r.to_vec());
            }
            let same = queue.cursor() == ring.head
                && queue.fill() == k
                && queue.storage().rows().into_iter().zip(&ring.rows).all(|(a, b)| a.to_vec() == *b);
            queue_errors += (!same) as usize;
        }
    }
    Verdict::new(
        mismatches == 0 && queue_errors == 0,
        format!(
            "momentum bit mismatches {mismatches} over mu in {{0, 0.5, 0.999, 1}}; queue divergences {queue_errors} over 10000 sequences"
        ),
    )
}

fn manipulation_suite() -> Verdict {
    let mut problems = Vec::new();

    let mut rng = seeded(5);
    let bank = NoiseBank::default();
    let mut worst_snr: f64 = 0.0;
    for case in 0..100 {
        let len = rng.random_range(500..20_000);
        let f = rng.random_range(50.0..4000.0);
        let amp = rng.random_range(0.01..1.0);
        let x: Vec<f64> = (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * f * n as f64 / SR).sin() + 0.1 * amp * rng.random_range(-1.0..1.0))
            .collect();
        let w = Waveform::new(x, DEFAULT_SAMPLE_RATE).unwrap();
        let target = rng.random_range(0.0..40.0);
        let out = apply(&ManipulationSpec::WhiteNoise { snr_db: target }, &w, &bank, case).unwrap();
        worst_snr = worst_snr.max((snr_db(w.samples(), out.samples()) - target).abs());
    }
    if worst_snr > 0.1 {
        problems.push(format!("white-noise SNR off by {worst_snr:.3} dB"));
    }

    let mut fade_bad = 0;
    for shape in FadeShape::ALL {
        for len in [2, 3, 10, 257, 8000] {
            let m = shape.fade_in_mask(len);
            let ok = m[0].abs() <= 1e-6
                && (m[len - 1] - 1.0).abs() <= 1e-6
                && m.windows(2).all(|w| w[1] >= w[0] - 1e-6);
            fade_bad += (!ok) as usize;
        }
        let s = fade(&Waveform::new(vec![1.0; 4000], DEFAULT_SAMPLE_RATE).unwrap(), 0.5, shape).unwrap();
        let s = s.samples();
        let ok = s[0].abs() <= 1e-6
            && s[3999].abs() <= 1e-6
            && (0..1999).all(|i| s[i + 1] >= s[i] - 1e-6 && s[3998 - i] >= s[3999 - i] - 1e-6);
        fade_bad += (!ok) as usize;
    }
    if fade_bad > 0 {
        problems.push(format!("{fade_bad} fade mask checks failed"));
    }

    let mut worst_rs: f64 = 0.0;
    for (freq, target) in [(440.0, 15_000u32), (440.0, 15_500), (1000.0, 16_500), (1000.0, 17_000), (300.0, 15_331)] {
        let out = resample(&tone(freq, 16_000), target).unwrap();
        if out.len() != (16_000.0 * target as f64 / SR).round() as usize {
            problems.push(format!("resample to {target} Hz has length {}", out.len()));
        }
        worst_rs = worst_rs.max((dominant_freq(out.samples()) - freq * SR / target as f64).abs());
    }
    if worst_rs > 2.0 {
        problems.push(format!("resampled tone off by {worst_rs:.2} Hz"));
    }

    let hop = stretch_hop(DEFAULT_N_FFT) as f64;
    let (mut worst_len, mut worst_pitch) = (0.0f64, 0.0f64);
    for factor in [0.9, 0.95, 1.05, 1.1, 1.25] {
        for freq in [300.0, 1000.0] {
            let out = time_stretch(&tone(freq, 16_000), factor, DEFAULT_N_FFT).unwrap();
            worst_len = worst_len.max((out.len() as f64 - (16_000.0 * factor).round()).abs());
            worst_pitch = worst_pitch.max((dominant_freq(out.samples()) - freq).abs());
        }
    }
    if worst_len > hop || worst_pitch > 5.0 {
        problems.push(format!("stretch length off by {worst_len} (hop {hop}), pitch off by {worst_pitch:.2} Hz"));
    }

    let mut rng = seeded(9);
    let shift_ok = (0..200).all(|_| {
        let len = rng.random_range(1..2000);
        let w = Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), DEFAULT_SAMPLE_RATE).unwrap();
        let s = rng.random_range(-50_000i64..50_000);
        time_shift(&time_shift(&w, s), -s) == w
    });
    if !shift_ok {
        problems.push("time_shift round trip changed a signal".into());
    }

    let summary = format!(
        "SNR max err {worst_snr:.3} dB; fades ok; resample max err {worst_rs:.2} Hz; stretch max len err {worst_len} (hop {hop}), pitch err {worst_pitch:.2} Hz; shift inverse {}",
        if shift_ok { "ok" } else { "broken" }
    );
    if problems.is_empty() {
        Verdict::new(true, summary)
    } else {
        Verdict::new(false, format!("{}; {summary}", problems.join("; ")))
    }
}

fn eer_oracle(e2e: Option<&E2e>) -> Verdict {
    let mut rng = seeded(99);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let set = random_score_set(&mut rng);
        let (e, t) = eer(&set).unwrap();
        let (oe, ot) = brute_force_eer(&set.real_scores, &set.fake_scores);
        worst = worst.max((e - oe).abs()).max((t - ot).abs());
    }
    let mut detail = format!("1000 sets, max |Δ| {worst:.1e} (tol 1e-9)");
    let mut pass = worst <= 1e-9;
    match e2e {
        Some(e2e) => {
            let mut unequal = Vec::new();
            let mut models = 0;
            for (variant, outcome) in &e2e.runs {
                for r in &outcome.results {
                    models += 1;
                    let id = r.report.cell("identity").expect("identity cell");
                    if id.far != r.report.clean_eer {
                        unequal.push(format!("{variant}/seed {}: FAR {} vs EER {}", r.seed, id.far, r.report.clean_eer));
                    }
                }
            }
            pass &= unequal.is_empty() && models > 0;
            detail += &format!("; identity FAR == clean EER on {}/{models} trained models", models - unequal.len());
            if !unequal.is_empty() {
                detail += &format!(" ({})", unequal.join(", "));
            }
        }
        None => {
            pass = false;
            detail += "; identity FAR check skipped (end-to-end run failed)";
        }
    }
    Verdict::new(pass, detail)
}

struct E2e {
    runs: Vec<(Variant, ExperimentOutcome)>,
    secs: f64,
    root: tempfile::TempDir,
}

impl E2e {
    fn outcome(&self, v: Variant) -> &ExperimentOutcome {
        &self.runs.iter().find(|(x, _)| *x == v).expect("variant ran").1
    }

    fn mean_far(&self, v: Variant, cell: &str) -> f64 {
        self.outcome(v).summary.row(cell).expect("summary row").mean_far
    }
}

fn e2e_grid() -> Vec<ManipulationSpec> {
    vec![
        ManipulationSpec::Identity,
        ManipulationSpec::Volume { factor: 0.1 },
        ManipulationSpec::Fade {
            ratio: 0.5,
            shape: FadeShape::HalfSine,
        },
        ManipulationSpec::WhiteNoise { snr_db: 15.0 },
    ]
}

fn e2e_config(variant: Variant, dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![0, 1, 2],
        output_dir: dir.join(variant.name()),
        variant: VariantChoice::Preset(variant),
        dataset: DatasetSource::Synthetic(SynthConfig {
            n_train: 2000,
            n_eval: 500,
            real_fraction: 0.1,
            ..SynthConfig::default()
        }),
        encoder: TinyEncoderConfig {
            channels: vec![8, 16, 32],
            ..TinyEncoderConfig::default()
        },
        training: TrainingConfig::desk(),
        eval_grid: e2e_grid(),
        ..ExperimentConfig::default()
    }
}

fn run_e2e() -> E2e {
    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let runs = [Variant::Vanilla, Variant::Cl, Variant::Clad]
        .into_iter()
        .map(|v| (v, run_experiment(&e2e_config(v, root.path())).unwrap()))
        .collect();
    E2e {
        runs,
        secs: start.elapsed().as_secs_f64(),
        root,
    }
}

fn end_to_end(e2e: Option<&E2e>) -> Verdict {
    let Some(e2e) = e2e else {
        return Verdict::new(false, "experiment did not complete");
    };
    let mut lines = Vec::new();
    for (v, o) in &e2e.runs {
        let s = &o.summary;
        let mut row = format!("{v}: clean EER {:?} mean {:.4}", s.clean_eer, s.mean_clean_eer);
        for r in s.rows.iter().filter(|r| r.manipulation != "identity") {
            row += &format!(", {} {:.4}", r.manipulation, r.mean_far);
        }
        if !s.failures.is_empty() {
            row += &format!(", {} failed seeds", s.failures.len());
        }
        lines.push(row);
    }
    let clad = e2e.outcome(Variant::Clad).summary.mean_clean_eer;
    let cl = e2e.outcome(Variant::Cl).summary.mean_clean_eer;
    let a = clad <= 0.10;
    let mut b_parts = Vec::new();
    let mut b = true;
    for cell in ["volume(0.1)", "fade(0.5,half_sine)", "white_noise(15dB)"] {
        let (c, v) = (e2e.mean_far(Variant::Clad, cell), e2e.mean_far(Variant::Vanilla, cell));
        b &= c <= v;
        b_parts.push(format!("{cell} {c:.4} vs {v:.4}"));
    }
    let c = clad <= cl;
    let t = e2e.secs <= E2E_BUDGET_SECS;
    let failures: usize = e2e.runs.iter().map(|(_, o)| o.summary.failures.len()).sum();
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    let detail = format!(
        "(a) CLAD clean EER {clad:.4} <= 0.10 {}; (b) CLAD vs Vanilla mean FAR {} {}; (c) CLAD EER {clad:.4} <= CL {cl:.4} {}; runtime {:.0}s <= {E2E_BUDGET_SECS:.0}s {}\n    {}",
        mark(a),
        b_parts.join(", "),
        mark(b),
        mark(c),
        e2e.secs,
        mark(t),
        lines.join("\n    ")
    );
    Verdict::new(a && b && c && t && failures == 0, detail)
}

fn tiny_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![0, 1],
        output_dir: dir.to_path_buf(),
        dataset: DatasetSource::Synthetic(SynthConfig {
            n_train: 48,
            n_eval: 24,
            real_fraction: 0.25,
            duration_samples: 4000,
            ..SynthConfig::default()
        }),
        encoder: TinyEncoderConfig {
            input_len: 4000,
            channels: vec![4, 8, 16],
            ..TinyEncoderConfig::default()
        },
        training: TrainingConfig {
            input_len: 4000,
            queue_size: 256,
            pretrain_epochs: 1,
            downstream_epochs: 1,
            ..TrainingConfig::desk()
        },
        eval_grid: e2e_grid(),
        ..ExperimentConfig::default()
    }
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&tiny_config(a.path())).unwrap();
    let rb = run_experiment(&tiny_config(b.path())).unwrap();
    let same_table = ra.summary == rb.summary;
    let same_files = ["summary.csv", "summary.json"]
        .iter()
        .all(|f| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap());
    Verdict::new(
        same_table && same_files,
        format!(
            "two CLAD runs over seeds {:?}: summary tables {}, summary files {}",
            ra.summary.seeds,
            if same_table { "identical" } else { "differ" },
            if same_files { "byte-identical" } else { "differ" }
        ),
    )
}

fn combined_matrix(e2e: Option<&E2e>) -> Verdict {
    let Some(e2e) = e2e else {
        return Verdict::new(false, "no trained classifier (end-to-end run failed)");
    };
    let cfg = e2e_config(Variant::Clad, e2e.root.path());
    let ckpt = Checkpoint::read(cfg.output_dir.join("seed_0/classifier.ckpt")).unwrap();
    let classifier = Classifier::<TinyEncoder>::from_checkpoint(&ckpt).unwrap();
    let eval = load_splits(&cfg.dataset, cfg.encoder.input_len).unwrap().eval;
    let bank = load_noise_bank(None).unwrap();
    let specs = representative_set();
    let start = Instant::now();
    let matrix: EvalReport = combined_attack_matrix(&classifier, &eval, &specs, &bank, &cfg.eval).unwrap();
    let single = attack_sweep(&classifier, &eval, &specs, &bank, &cfg.eval).unwrap();
    let n = specs.len();
    let matching = (0..n)
        .filter(|&i| {
            let (d, s) = (&matrix.cells[i * n + i], &single.cells[i]);
            d.manipulations == s.manipulations && (d.far, d.frr, d.f1) == (s.far, s.frr, s.f1)
        })
        .count();
    Verdict::new(
        matrix.cells.len() == n * n && n == 6 && matching == n,
        format!(
            "{n}x{n} matrix with {} cells in {:.0}s; {matching}/{n} diagonal cells equal the single sweep",
            matrix.cells.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();
    let mut record = |name: &str, v: Verdict| {
        emit(name, &v);
        verdicts.push(v.pass);
    };
    record("loss oracles", guarded(loss_oracles));
    record("gradient checks", guarded(gradient_checks));
    record("momentum/queue mechanics", guarded(momentum_and_queue));
    record("manipulation suite", guarded(manipulation_suite));
    record("determinism", guarded(determinism));

    let e2e = catch_unwind(run_e2e).ok();
    record("EER oracle", guarded(|| eer_oracle(e2e.as_ref())));
    record("end-to-end desk experiment", guarded(|| end_to_end(e2e.as_ref())));
    record("combined-attack matrix", guarded(|| combined_matrix(e2e.as_ref())));

    let failed = verdicts.iter().filter(|p| !**p).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
