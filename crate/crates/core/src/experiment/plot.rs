//! Static SVG renderings of DET curves and score histograms. The CSV files
//! written next to them hold the exact data.

use std::fmt::Write as _;

const W: f64 = 420.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
<text x="{cx}" y="18" text-anchor="middle" font-size="13">{title}</text>
<rect x="{PAD}" y="{PAD}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>
<text x="{cx}" y="{xl}" text-anchor="middle">{x_label}</text>
<text x="14" y="{cy}" text-anchor="middle" transform="rotate(-90 14 {cy})">{y_label}</text>
"##,
        cx = W / 2.0,
        cy = H / 2.0,
        pw = W - 2.0 * PAD,
        ph = H - 2.0 * PAD,
        xl = H - 12.0,
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = PAD + f * (W - 2.0 * PAD);
        let y = H - PAD - f * (H - 2.0 * PAD);
        let _ = writeln!(
            s,
            r##"<text x="{x}" y="{ty}" text-anchor="middle">{f}</text><text x="{lx}" y="{y}" text-anchor="end">{f}</text>"##,
            ty = H - PAD + 14.0,
            lx = PAD - 4.0,
        );
    }
    s
}

fn xy(fx: f64, fy: f64) -> (f64, f64) {
    (PAD + fx * (W - 2.0 * PAD), H - PAD - fy * (H - 2.0 * PAD))
}

/// DET curve on linear axes (FAR horizontal, FRR vertical).
pub fn det_svg(title: &str, points: &[(f64, f64)]) -> String {
    let mut s = frame(title, "FAR", "FRR");
    let pts: Vec<String> = points
        .iter()
        .map(|&(fa, fr)| {
            let (x, y) = xy(fa, fr);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        pts.join(" ")
    );
    let (x0, y0) = xy(0.0, 0.0);
    let (x1, y1) = xy(1.0, 1.0);
    let _ = writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#bbb" stroke-dasharray="4 3"/>"##);
    s.push_str("</svg>\n");
    s
}

/// Normalized histograms of real and fake scores over [0, 1].
pub fn histogram_svg(title: &str, real: &[f64], fake: &[f64], bins: usize) -> String {
    let mut s = frame(title, "score", "fraction");
    let hist = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in v {
            let b = ((x * bins as f64) as usize).min(bins - 1);
            h[b] += 1.0 / v.len().max(1) as f64;
        }
        h
    };
    let (hr, hf) = (hist(real), hist(fake));
    let top = hr.iter().chain(&hf).fold(0.0f64, |m, &v| m.max(v)).max(1e-12);
    for (h, color, offset) in [(&hf, "#d62728", 0.0), (&hr, "#2ca02c", 0.5)] {
        for (b, &v) in h.iter().enumerate() {
            let bw = 1.0 / bins as f64;
            let (x, y) = xy(b as f64 * bw + offset * bw, v / top);
            let (_, y0) = xy(0.0, 0.0);
            let width = (W - 2.0 * PAD) * bw / 2.0;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{width:.2}" height="{:.2}" fill="{color}" fill-opacity="0.8"/>"##,
                y0 - y
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" fill="#2ca02c">real</text><text x="{}" y="{}" fill="#d62728">fake</text>"##,
        W - PAD - 60.0,
        PAD + 14.0,
        W - PAD - 30.0,
        PAD + 14.0
    );
    s.push_str("</svg>\n");
    s
}

/// `bin_start,real_fraction,fake_fraction` rows backing [`histogram_svg`].
pub fn histogram_csv(real: &[f64], fake: &[f64], bins: usize) -> String {
    let count = |v: &[f64], b: usize| {
        v.iter()
            .filter(|&&x| ((x * bins as f64) as usize).min(bins - 1) == b)
            .count() as f64
            / v.len().max(1) as f64
    };
    let mut s = String::from("bin_start,real_fraction,fake_fraction\n");
    for b in 0..bins {
        let _ = writeln!(s, "{},{},{}", b as f64 / bins as f64, count(real, b), count(fake, b));
    }
    s
}
