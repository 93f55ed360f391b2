//! Polyphase windowed-sinc resampling.
//!
//! The rate ratio is reduced by the gcd to `orig : new`. Output sample `n`
//! sits at input position `n * orig / new`; its value is the dot product of
//! the surrounding input with a Kaiser-windowed sinc low-passed at
//! `min(orig, new) * ROLLOFF`, whose taps depend only on `n * orig mod new`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const KAISER_BETA: f64 = 14.769_656_459_379_492;
/// Half-width of the sinc kernel in zero crossings.
pub const ZERO_CROSSINGS: usize = 64;
const ROLLOFF: f64 = 0.947_593_716_739_959_6;

/// Resamples to `target_rate_hz` and returns the samples tagged with the
/// *source* rate, so downstream consumers play them at the original rate.
///
/// Output length is `round(len * target / source)`.
pub fn resample(w: &Waveform, target_rate_hz: u32) -> Result<Waveform> {
    if target_rate_hz == 0 {
        return Err(Error::arg("target rate must be positive"));
    }
    w.ensure_non_empty()?;
    let source = w.sample_rate_hz();
    if source == target_rate_hz {
        return Ok(w.clone());
    }
    let g = gcd(source as u64, target_rate_hz as u64);
    let orig = source as u64 / g;
    let new = target_rate_hz as u64 / g;
    let filter = SincFilter::new(orig, new);

    let x = w.samples();
    let out_len = (x.len() as f64 * new as f64 / orig as f64).round() as usize;
    // kernels depend only on the phase; with few phases they are computed
    // exactly once, otherwise read off a shared table per output
    let mut cache: Vec<Option<Vec<f64>>> = if new <= MAX_CACHED_PHASES { vec![None; new as usize] } else { Vec::new() };
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * orig;
        let (center, phase) = ((pos / new) as i64, pos % new);
        let first = center - filter.width as i64;
        let lo = (-first).max(0) as usize;
        let hi = (2 * filter.width + 2).min((x.len() as i64 - first).max(0) as usize);
        let at = |d: usize| x[(first + d as i64) as usize];
        let mut acc = 0.0;
        match cache.get_mut(phase as usize) {
            Some(slot) => {
                let kernel = slot.get_or_insert_with(|| filter.kernel(phase));
                for (d, k) in kernel.iter().enumerate().take(hi).skip(lo) {
                    acc += k * at(d);
                }
            }
            None => {
                let table = sinc_table();
                let scale = filter.base / filter.orig;
                let max_u = (ZERO_CROSSINGS * TABLE_OVERSAMPLE) as f64;
                let step = scale * TABLE_OVERSAMPLE as f64;
                let u0 = -(filter.width as f64 + phase as f64 / filter.new) * step;
                for d in lo..hi {
                    let u = (u0 + d as f64 * step).abs().min(max_u);
                    let i = u as usize;
                    acc += scale * (table[i] + (u - i as f64) * (table[i + 1] - table[i])) * at(d);
                }
            }
        }
        out.push(acc);
    }
    Ok(w.with_samples(out))
}

const MAX_CACHED_PHASES: u64 = 160;
/// Table points per zero crossing; linear interpolation error is below 2e-6
/// of the kernel peak.
const TABLE_OVERSAMPLE: usize = 512;

/// Kaiser-windowed sinc low-passed at `min(orig, new) * ROLLOFF`, sampled
/// on the input grid around each output position.
struct SincFilter {
    orig: f64,
    new: f64,
    base: f64,
    width: usize,
}

impl SincFilter {
    fn new(orig: u64, new: u64) -> Self {
        let base = orig.min(new) as f64 * ROLLOFF;
        SincFilter {
            orig: orig as f64,
            new: new as f64,
            base,
            width: (ZERO_CROSSINGS as f64 * orig as f64 / base).ceil() as usize,
        }
    }

    /// Taps for input offsets `-width..=width + 1` from the output
    /// position's floor, for a position `phase / new` past that floor.
    fn kernel(&self, phase: u64) -> Vec<f64> {
        self.offsets(phase).map(|t| self.value(t)).collect()
    }

    /// Filter arguments `t` of each tap, clamped to the support.
    fn offsets(&self, phase: u64) -> impl Iterator<Item = f64> + '_ {
        let lpw = ZERO_CROSSINGS as f64;
        let frac = phase as f64 / self.new;
        let scale = self.base / self.orig;
        (0..2 * self.width + 2).map(move |j| ((j as f64 - self.width as f64 - frac) * scale).clamp(-lpw, lpw))
    }

    fn value(&self, t: f64) -> f64 {
        windowed_sinc(t) * self.base / self.orig
    }
}

fn windowed_sinc(t: f64) -> f64 {
    let r = t / ZERO_CROSSINGS as f64;
    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA);
    let arg = t * PI;
    let sinc = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
    sinc * window
}

/// `windowed_sinc` at `t = i / TABLE_OVERSAMPLE` over `[0, ZERO_CROSSINGS]`.
fn sinc_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=ZERO_CROSSINGS * TABLE_OVERSAMPLE + 1)
            .map(|i| windowed_sinc((i as f64 / TABLE_OVERSAMPLE as f64).min(ZERO_CROSSINGS as f64)))
            .collect()
    })
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::DEFAULT_SAMPLE_RATE;

    #[test]
    fn bessel_reference_values() {
        // I0(1) and I0(5) from standard tables
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
        assert_eq!(bessel_i0(0.0), 1.0);
    }

    #[test]
    fn identity_rate_is_exact() {
        let w = Waveform::new((0..1000).map(|i| (i as f64 * 0.01).sin()).collect(), DEFAULT_SAMPLE_RATE).unwrap();
        let out = resample(&w, DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn output_lengths() {
        let w = Waveform::new(vec![0.1; 16_000], DEFAULT_SAMPLE_RATE).unwrap();
        for (rate, expected) in [(15_000, 15_000), (15_500, 15_500), (16_500, 16_500), (17_000, 17_000)] {
            let out = resample(&w, rate).unwrap();
            assert_eq!(out.len(), expected);
            assert_eq!(out.sample_rate_hz(), DEFAULT_SAMPLE_RATE);
        }
        let odd = Waveform::new(vec![0.1; 1001], DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(resample(&odd, 17_000).unwrap().len(), 1064); // 1063.5625 rounds up
        assert!(resample(&odd, 0).is_err());
    }

    #[test]
    fn dc_gain_is_unity_in_the_interior() {
        let w = Waveform::new(vec![0.5; 8000], DEFAULT_SAMPLE_RATE).unwrap();
        let out = resample(&w, 17_000).unwrap();
        for &v in &out.samples()[500..8000] {
            assert!((v - 0.5).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn tabulated_kernel_tracks_exact_kernel() {
        // 16000:15331 has too many phases to cache, so outputs use the table
        let x: Vec<f64> = (0..600).map(|i| (i as f64 * 0.07).sin() + 0.3 * (i as f64 * 0.31).cos()).collect();
        let w = Waveform::new(x.clone(), DEFAULT_SAMPLE_RATE).unwrap();
        let out = resample(&w, 15_331).unwrap();
        let filter = SincFilter::new(16_000, 15_331);
        for (n, &y) in out.samples().iter().enumerate() {
            let pos = n as u64 * 16_000;
            let first = (pos / 15_331) as i64 - filter.width as i64;
            let exact: f64 = filter
                .kernel(pos % 15_331)
                .iter()
                .enumerate()
                .filter_map(|(d, k)| x.get(usize::try_from(first + d as i64).ok()?).map(|v| k * v))
                .sum();
            assert!((y - exact).abs() < 1e-5, "n={n}: {y} vs {exact}");
        }
    }
}
