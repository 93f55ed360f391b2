//! Phase-vocoder time stretching.
//!
//! Analysis is a centred STFT (reflect padding, periodic Hann window, hop
//! `n_fft / 4`). A half-window hop is too coarse for the phase recurrence:
//! bins more than one bin away from a partial alias to a different
//! frequency, and once the rate leaves 1 they no longer cancel. Synthesis frames are read at fractional positions spaced by
//! `rate = 1 / factor`: magnitudes are interpolated linearly between the two
//! neighbouring analysis frames and phases are accumulated from the wrapped
//! inter-frame phase difference. The inverse STFT normalizes by the summed
//! squared window.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const DEFAULT_N_FFT: usize = 128;

/// Stretches duration by `factor` (output length ≈ `factor * len`) without
/// changing pitch.
pub fn time_stretch(w: &Waveform, factor: f64, n_fft: usize) -> Result<Waveform> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::arg(format!("stretch factor must be positive, got {factor}")));
    }
    if n_fft < 2 || n_fft & 1 == 1 {
        return Err(Error::arg(format!("n_fft must be a positive even integer, got {n_fft}")));
    }
    if w.len() < n_fft {
        return Err(Error::arg(format!(
            "input of {} samples is shorter than n_fft = {n_fft}",
            w.len()
        )));
    }
    let hop = stretch_hop(n_fft);
    let mut stft = Stft::new(n_fft, hop);
    let frames = stft.analyze(w.samples());
    let stretched = phase_vocoder(&frames, 1.0 / factor, hop, n_fft);
    let out = stft.synthesize(&stretched);
    Ok(w.with_samples(out))
}

/// STFT hop used by [`time_stretch`] for a given window length.
pub fn stretch_hop(n_fft: usize) -> usize {
    (n_fft / 4).max(1)
}

fn phase_vocoder(frames: &[Vec<Complex64>], rate: f64, hop: usize, n_fft: usize) -> Vec<Vec<Complex64>> {
    let n_bins = n_fft / 2 + 1;
    let n_frames = frames.len();
    let advance: Vec<f64> = (0..n_bins)
        .map(|k| PI * hop as f64 * k as f64 / (n_bins - 1) as f64)
        .collect();
    let zero = vec![Complex64::new(0.0, 0.0); n_bins];
    let frame = |i: usize| if i < n_frames { &frames[i] } else { &zero };

    let n_out = (n_frames as f64 / rate).ceil() as usize;
    let mut phase: Vec<f64> = frames[0].iter().map(|c| c.arg()).collect();
    let mut out = Vec::with_capacity(n_out);
    for step in 0..n_out {
        let t = step as f64 * rate;
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let (a, b) = (frame(i), frame(i + 1));
        let mut spec = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let mag = (1.0 - alpha) * a[k].norm() + alpha * b[k].norm();
            spec.push(Complex64::from_polar(mag, phase[k]));
            let mut dphi = b[k].arg() - a[k].arg() - advance[k];
            dphi -= 2.0 * PI * (dphi / (2.0 * PI)).round();
            phase[k] += dphi + advance[k];
        }
        out.push(spec);
    }
    out
}

struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    planner: FftPlanner<f64>,
}

impl Stft {
    fn new(n_fft: usize, hop: usize) -> Self {
        // periodic Hann
        let window = (0..n_fft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos())
            .collect();
        Stft {
            n_fft,
            hop,
            window,
            planner: FftPlanner::new(),
        }
    }

    fn analyze(&mut self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let pad = self.n_fft / 2;
        let padded = reflect_pad(x, pad);
        let n_frames = 1 + (padded.len() - self.n_fft) / self.hop;
        let fft = self.planner.plan_fft_forward(self.n_fft);
        let n_bins = self.n_fft / 2 + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        (0..n_frames)
            .map(|f| {
                let start = f * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(padded[start + i] * self.window[i], 0.0);
                }
                fft.process(&mut buf);
                buf[..n_bins].to_vec()
            })
            .collect()
    }

    /// Inverse of a centred STFT; output length is `hop * (frames - 1)`.
    fn synthesize(&mut self, frames: &[Vec<Complex64>]) -> Vec<f64> {
        let n = self.n_fft;
        let n_frames = frames.len();
        let total = n + self.hop * (n_frames - 1);
        let mut acc = vec![0.0; total];
        let mut env = vec![0.0; total];
        let ifft = self.planner.plan_fft_inverse(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (f, spec) in frames.iter().enumerate() {
            // rebuild the Hermitian spectrum; DC and Nyquist bins must be real
            for (k, c) in spec.iter().enumerate() {
                buf[k] = *c;
            }
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            for k in 1..n / 2 {
                buf[n - k] = spec[k].conj();
            }
            ifft.process(&mut buf);
            let start = f * self.hop;
            for i in 0..n {
                let w = self.window[i];
                acc[start + i] += buf[i].re / n as f64 * w;
                env[start + i] += w * w;
            }
        }
        let pad = n / 2;
        let len = self.hop * (n_frames - 1);
        (pad..pad + len)
            .map(|i| if env[i] > 1e-11 { acc[i] / env[i] } else { acc[i] })
            .collect()
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i.min(n - 1)]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i.min(n - 1)]));
    out
}
