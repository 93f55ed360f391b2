//! Algebraic invariants of the losses, metrics, momentum update and the
//! synthetic corpus.

use clad_core::contrastive::{contrastive_loss_grad, length_loss, pretrain_loss, NegativeQueue};
use clad_core::data::Label;
use clad_core::downstream::{downstream_loss, real_probability, Classifier};
use clad_core::encoder::{momentum_update_params, TinyEncoder, TinyEncoderConfig};
use clad_core::evaluation::{attack_sweep, far, frr, EvalConfig};
use clad_core::experiment::{generate_synthetic, SynthConfig};
use clad_core::manipulations::{ManipulationSpec, NoiseBank};
use clad_core::nn::Param;
use proptest::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

mod common;
use common::*;

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrastive_loss_ignores_row_scale(seed in any::<u64>(), row in 0usize..8, c in 1e-3f64..1e3) {
        let mut rng = seeded(seed);
        let q = gaussian(&mut rng, 8, 16);
        let k = gaussian(&mut rng, 8, 16);
        let queue = NegativeQueue::new(32, 16, seed).unwrap();
        let base = contrastive_loss_grad(q.view(), k.view(), queue.storage(), 0.07, true).unwrap().loss;
        let mut scaled = q.clone();
        scaled.row_mut(row).mapv_inplace(|v| v * c);
        let got = contrastive_loss_grad(scaled.view(), k.view(), queue.storage(), 0.07, true).unwrap().loss;
        prop_assert!((got - base).abs() <= 1e-6, "{got} vs {base}");
    }

    #[test]
    fn real_length_term_is_linear_in_norm(seed in any::<u64>(), w in 0.1f64..20.0) {
        let mut rng = seeded(seed);
        let q = gaussian(&mut rng, 1, 12);
        let one = length_loss(q.view(), &[Label::Real], w, 4.0).unwrap();
        let two = length_loss((&q * 2.0).view(), &[Label::Real], w, 4.0).unwrap();
        prop_assert!((two - 2.0 * one).abs() <= 1e-12 * one.max(1.0));
    }

    #[test]
    fn breakdown_total_decomposes(cl in 0.0f64..20.0, len in 0.0f64..20.0, lambda in 0.0f64..10.0) {
        let b = pretrain_loss(cl, len, lambda);
        prop_assert!((b.total - (b.contrastive + lambda * b.length)).abs() <= 1e-9);
        prop_assert_eq!((b.contrastive, b.length), (cl, len));
    }

    #[test]
    fn far_falls_and_frr_rises_with_threshold(
        reals in scores(60),
        fakes in scores(60),
        t0 in -4.0f64..4.0,
        dt in 0.0f64..4.0,
    ) {
        let t1 = t0 + dt;
        prop_assert!(far(&fakes, t1).unwrap() <= far(&fakes, t0).unwrap());
        prop_assert!(frr(&reals, t1).unwrap() >= frr(&reals, t0).unwrap());
    }

    #[test]
    fn a_score_at_the_threshold_counts_as_fake(t in -3.0f64..3.0, n in 1usize..20) {
        let at = vec![t; n];
        prop_assert_eq!(far(&at, t).unwrap(), 0.0);
        prop_assert_eq!(frr(&at, t).unwrap(), 1.0);
    }

    #[test]
    fn class_probabilities_sum_to_one(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let real = real_probability(a, b);
        let fake = real_probability(b, a);
        prop_assert!((real + fake - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&real));
    }

    #[test]
    fn momentum_blend_stays_between_key_and_query(seed in any::<u64>(), mu in 0.0f64..=1.0) {
        let mut rng = seeded(seed);
        let q = gaussian(&mut rng, 1, 64);
        let k = gaussian(&mut rng, 1, 64);
        let query = Param::new("w", vec![64], q.iter().map(|&v| v as f32).collect());
        let mut key = Param::new("w", vec![64], k.iter().map(|&v| v as f32).collect());
        let before = key.value.clone();
        momentum_update_params(vec![&mut key], vec![&query], mu).unwrap();
        for ((&got, &old), &qv) in key.value.iter().zip(&before).zip(&query.value) {
            let (lo, hi) = if old <= qv { (old, qv) } else { (qv, old) };
            prop_assert!(lo <= got && got <= hi, "{got} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn repeated_momentum_updates_converge_geometrically() {
    let mut rng = seeded(11);
    let q = gaussian(&mut rng, 1, 128);
    let k = gaussian(&mut rng, 1, 128);
    let query = Param::new("w", vec![128], q.iter().map(|&v| v as f32).collect());
    let mut key = Param::new("w", vec![128], k.iter().map(|&v| v as f32).collect());
    let start = key.value.clone();
    let mu: f64 = 0.9;
    for n in 1..=60 {
        momentum_update_params(vec![&mut key], vec![&query], mu).unwrap();
        let m = mu.powi(n);
        for ((&got, &k0), &qv) in key.value.iter().zip(&start).zip(&query.value) {
            let want = m * k0 as f64 + (1.0 - m) * qv as f64;
            assert!((got as f64 - want).abs() <= 1e-6 * (1.0 + want.abs()) * n as f64, "step {n}");
        }
    }
    let gap = key.value.iter().zip(&query.value).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
    assert!(gap < 1e-2);
}

#[test]
fn downstream_loss_vanishes_as_probabilities_approach_labels() {
    let y = [Label::Real, Label::Fake, Label::Real, Label::Fake];
    let mut last = f64::INFINITY;
    // probabilities are clamped at 1e-7, so stop short of the clamp
    for k in 1..=6 {
        let d = 10f64.powi(-k);
        let p: Vec<f64> = y.iter().map(|l| if l.is_real() { 1.0 - d } else { d }).collect();
        let loss = downstream_loss(&p, &y).unwrap();
        assert!(loss < last);
        last = loss;
    }
    assert!(last < 2e-6);
    let exact: Vec<f64> = y.iter().map(|l| if l.is_real() { 1.0 } else { 0.0 }).collect();
    assert!(downstream_loss(&exact, &y).unwrap() < 1e-6);
}

#[test]
fn attack_cells_share_the_real_scores() {
    let synth = SynthConfig {
        n_train: 8,
        n_eval: 24,
        real_fraction: 0.25,
        duration_samples: 2000,
        ..SynthConfig::default()
    };
    let eval = generate_synthetic(&synth).unwrap().eval;
    let encoder = TinyEncoder::new(
        TinyEncoderConfig {
            input_len: 2000,
            channels: vec![4, 8],
            feature_dim: 8,
            ..TinyEncoderConfig::default()
        },
        0,
    )
    .unwrap();
    let classifier = Classifier::new(encoder, 1);
    let grid = [
        ManipulationSpec::Identity,
        ManipulationSpec::Volume { factor: 0.1 },
        ManipulationSpec::WhiteNoise { snr_db: 15.0 },
    ];
    let report = attack_sweep(&classifier, &eval, &grid, &NoiseBank::synthetic(16_000, 0), &EvalConfig::default()).unwrap();
    let reals = |i: usize| -> Vec<(String, u64)> {
        report.cells[i]
            .scores
            .iter()
            .filter(|r| r.label == Label::Real)
            .map(|r| (r.sample_id.clone(), r.p.to_bits()))
            .collect()
    };
    assert_eq!(reals(0).len(), 6);
    for i in 1..report.cells.len() {
        assert_eq!(reals(i), reals(0));
        assert_eq!(report.cells[i].frr, report.cells[0].frr);
    }
}

/// Mean over 512-sample Hann frames of geometric / arithmetic mean power.
fn spectral_flatness(x: &[f64]) -> f64 {
    const N: usize = 512;
    let fft = FftPlanner::new().plan_fft_forward(N);
    let mut total = 0.0;
    let mut frames = 0;
    let mut start = 0;
    while start + N <= x.len() {
        let mut buf: Vec<Complex64> = (0..N)
            .map(|i| {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / N as f64).cos();
                Complex64::new(x[start + i] * w, 0.0)
            })
            .collect();
        fft.process(&mut buf);
        let power: Vec<f64> = buf[1..N / 2].iter().map(|c| c.norm_sqr() + 1e-20).collect();
        let geo = (power.iter().map(|p| p.ln()).sum::<f64>() / power.len() as f64).exp();
        let arith = power.iter().sum::<f64>() / power.len() as f64;
        total += geo / arith;
        frames += 1;
        start += N / 2;
    }
    total / frames as f64
}

#[test]
fn synthetic_classes_differ_in_spectral_flatness() {
    let synth = SynthConfig {
        n_train: 100,
        n_eval: 2,
        real_fraction: 0.5,
        duration_samples: 8000,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth).unwrap().train;
    let (mut real, mut fake) = (Vec::new(), Vec::new());
    for s in &data.samples {
        let f = spectral_flatness(s.waveform.samples());
        if s.label == Label::Real { real.push(f) } else { fake.push(f) }
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let ((mr, sr), (mf, sf)) = (stats(&real), stats(&fake));
    let z = (mf - mr).abs() / (sr + sf).sqrt();
    assert!(z > 4.0, "real {mr:.4} fake {mf:.4} z {z:.2}");
}

#[test]
fn synthetic_corpus_is_seeded_and_balanced_as_configured() {
    let cfg = SynthConfig {
        n_train: 1000,
        n_eval: 20,
        real_fraction: 0.1,
        duration_samples: 400,
        ..SynthConfig::default()
    };
    let a = generate_synthetic(&cfg).unwrap();
    let b = generate_synthetic(&cfg).unwrap();
    let reals = a.train.samples.iter().filter(|s| s.label == Label::Real).count();
    assert_eq!((reals, a.train.len() - reals), (100, 900));
    for (x, y) in a.train.samples.iter().chain(&a.eval.samples).zip(b.train.samples.iter().chain(&b.eval.samples)) {
        assert_eq!((&x.id, x.label), (&y.id, y.label));
        let bits = |w: &[f64]| w.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x.waveform.samples()), bits(y.waveform.samples()));
    }
    let other = generate_synthetic(&SynthConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(other.train.samples[0].waveform.samples(), a.train.samples[0].waveform.samples());
}
