//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use clad_core::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use clad_core::data::Label;
use clad_core::evaluation::ScoreSet;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub const SR: f64 = DEFAULT_SAMPLE_RATE as f64;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut x = gaussian(rng, n, d);
    for mut r in x.rows_mut() {
        let norm = r.dot(&r).sqrt();
        r /= norm;
    }
    x
}

pub fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
    (0..n).map(|_| if rng.random_bool(0.5) { Label::Real } else { Label::Fake }).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `-log(exp(s⁺/τ) / (exp(s⁺/τ) + Σ exp(s⁻/τ)))`, averaged, written out
/// term by term.
pub fn contrastive_oracle(q: &Array2<f64>, k: &Array2<f64>, negatives: ArrayView2<f64>, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..q.nrows() {
        let qi = q.row(i).to_vec();
        let pos = (cosine(&qi, &k.row(i).to_vec()) / tau).exp();
        let mut denom = pos;
        for neg in negatives.rows() {
            denom += (cosine(&qi, &neg.to_vec()) / tau).exp();
        }
        total += -(pos / denom).ln();
    }
    total / q.nrows() as f64
}

pub fn length_oracle(q: &Array2<f64>, y: &[Label], w: f64, margin: f64) -> f64 {
    let mut total = 0.0;
    for (row, label) in q.rows().into_iter().zip(y) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += match label {
            Label::Real => w * norm,
            Label::Fake => (margin - norm).max(0.0),
        };
    }
    total / y.len() as f64
}

/// Mean of `-log softmax` at the true class over rows of `[fake, real]`
/// logits.
pub fn cross_entropy_oracle(logits: &Array2<f64>, y: &[Label]) -> f64 {
    logits
        .rows()
        .into_iter()
        .zip(y)
        .map(|(r, &label)| {
            let lse = (r[0].exp() + r[1].exp()).ln();
            lse - if label.is_real() { r[1] } else { r[0] }
        })
        .sum::<f64>()
        / y.len() as f64
}

pub fn numeric_grad(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += h;
        let mut minus = x.clone();
        minus[[r, c]] -= h;
        g[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both vanish.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Plain ring buffer: a vector of rows and a write index.
pub struct Ring {
    pub rows: Vec<Vec<f64>>,
    pub head: usize,
}

impl Ring {
    pub fn push(&mut self, row: Vec<f64>) {
        let k = self.rows.len();
        self.rows[self.head] = row;
        self.head = (self.head + 1) % k;
    }
}

/// Counts FAR and FRR directly at every midpoint threshold (plus one
/// threshold below and one above all scores), then interpolates linearly at
/// the first candidate where FAR no longer exceeds FRR.
pub fn brute_force_eer(reals: &[f64], fakes: &[f64]) -> (f64, f64) {
    let mut pooled: Vec<f64> = reals.iter().chain(fakes).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut thresholds = vec![pooled[0] - 1.0];
    for w in pooled.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(pooled[pooled.len() - 1] + 1.0);
    let rates: Vec<(f64, f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let fa = fakes.iter().filter(|&&s| s > t).count() as f64 / fakes.len() as f64;
            let fr = reals.iter().filter(|&&s| s <= t).count() as f64 / reals.len() as f64;
            (t, fa, fr)
        })
        .collect();
    let j = rates.iter().position(|&(_, fa, fr)| fa <= fr).unwrap();
    let (t1, fa1, fr1) = rates[j];
    if fa1 == fr1 {
        return (fa1, t1);
    }
    let (t0, fa0, fr0) = rates[j - 1];
    let (d0, d1) = (fa0 - fr0, fa1 - fr1);
    let a = d0 / (d0 - d1);
    (fa0 + a * (fa1 - fa0), t0 + a * (t1 - t0))
}

pub fn random_score_set(rng: &mut ChaCha8Rng) -> ScoreSet {
    let nr = rng.random_range(1..=500);
    let nf = rng.random_range(1..=500);
    let shift = rng.random_range(0.0..3.0);
    // half of the sets are coarsely quantized so ties are common
    let quant = if rng.random_bool(0.5) { Some(rng.random_range(2..20) as f64) } else { None };
    let mut draw = |mu: f64| {
        let v: f64 = mu + rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0);
        quant.map_or(v, |q| (v * q).round() / q)
    };
    ScoreSet {
        real_scores: (0..nr).map(|_| draw(shift)).collect(),
        fake_scores: (0..nf).map(|_| draw(0.0)).collect(),
    }
}

pub fn tone(freq: f64, len: usize) -> Waveform {
    Waveform::new((0..len).map(|n| 0.5 * (2.0 * PI * freq * n as f64 / SR).sin()).collect(), DEFAULT_SAMPLE_RATE)
        .unwrap()
}

/// Dominant frequency of the middle of `x`: Hann window, 8× zero padding,
/// parabolic interpolation of the log magnitude peak.
pub fn dominant_freq(x: &[f64]) -> f64 {
    let trim = x.len() / 8;
    let seg = &x[trim..x.len() - trim];
    let n = seg.len() * 8;
    let mut buf: Vec<Complex64> = seg
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (seg.len() - 1) as f64).cos();
            Complex64::new(v * w, 0.0)
        })
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm().max(1e-300).ln()).collect();
    let k = (1..mag.len() - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    let offset = 0.5 * (a - c) / (a - 2.0 * b + c);
    (k as f64 + offset) * SR / n as f64
}

pub fn snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let ps: f64 = clean.iter().map(|v| v * v).sum();
    let pn: f64 = clean.iter().zip(noisy).map(|(c, y)| (y - c).powi(2)).sum();
    10.0 * (ps / pn).log10()
}
