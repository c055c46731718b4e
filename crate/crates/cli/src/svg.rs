//! Minimal SVG line and stacked-area charts.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1b6ca8", "#e07a1f", "#3a9a48", "#c0392b", "#7d5ba6", "#8c6d31",
];

pub struct Series<'a> {
    pub name: &'a str,
    pub values: Vec<f64>,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 {
            self.x1 - self.x0
        } else {
            1.0
        };
        LEFT + (x - self.x0) / span * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 {
            self.y1 - self.y0
        } else {
            1.0
        };
        H - BOTTOM - (y - self.y0) / span * (H - TOP - BOTTOM)
    }
}

/// Rounds `v` up to 1, 2 or 5 times a power of ten.
fn nice_ceil(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|c| *c >= v * (1.0 - 1e-12))
        .unwrap_or(10.0 * mag)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Axis bounds widened to whole multiples of a 1-2-5 step, and that step.
fn nice_axis(lo: f64, hi: f64) -> (f64, f64, f64) {
    let step = nice_ceil((hi - lo).max(1e-12) / 5.0);
    let a = (lo / step + 1e-9).floor() * step;
    let b = (hi / step - 1e-9).ceil() * step;
    (a, if b > a { b } else { a + step }, step)
}

fn ticks(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(move |k| lo + step * k as f64)
}

fn open(out: &mut String, chart: &Chart<'_>, f: &Frame, x_step: f64, y_step: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(chart.title)
    );
    for y in ticks(f.y0, f.y1, y_step) {
        let py = f.py(y);
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"#ddd\"/>",
            W - RIGHT
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    for x in ticks(f.x0, f.x1, x_step) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            f.px(x),
            H - BOTTOM + 16.0,
            fmt_tick(x)
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(chart.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        escape(chart.y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * k as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}"/>"#,
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            x + 18.0,
            y + 10.0,
            escape(name)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn x_axis(xs: &[f64]) -> (f64, f64, f64) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() {
        nice_axis(lo, hi)
    } else {
        (0.0, 1.0, 0.2)
    }
}

/// One polyline per series over shared x values. The y axis spans the data.
pub fn line_chart(chart: &Chart<'_>, xs: &[f64], series: &[Series<'_>]) -> String {
    let all = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.1).max(1e-3);
    let (x0, x1, xs_step) = x_axis(xs);
    let (y0, y1, ys_step) = nice_axis(lo - pad, hi + pad);
    let f = Frame { x0, x1, y0, y1 };
    let mut out = String::new();
    open(&mut out, chart, &f, xs_step, ys_step);
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(&s.values)
            .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            PALETTE[k % PALETTE.len()]
        );
    }
    legend(&mut out, &series.iter().map(|s| s.name).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Series stacked bottom-up in the given order, from a zero baseline.
pub fn stacked_area(chart: &Chart<'_>, xs: &[f64], series: &[Series<'_>]) -> String {
    let mut tops = vec![vec![0.0; xs.len()]; series.len() + 1];
    for (k, s) in series.iter().enumerate() {
        for i in 0..xs.len() {
            tops[k + 1][i] = tops[k][i] + s.values.get(i).copied().unwrap_or(0.0).max(0.0);
        }
    }
    let peak = tops
        .last()
        .map_or(0.0, |t| t.iter().copied().fold(0.0, f64::max));
    let (x0, x1, xs_step) = x_axis(xs);
    let (_, y1, ys_step) = nice_axis(0.0, peak.max(1e-12));
    let f = Frame {
        x0,
        x1,
        y0: 0.0,
        y1,
    };
    let mut out = String::new();
    open(&mut out, chart, &f, xs_step, ys_step);
    for k in 0..series.len() {
        let mut pts: Vec<String> = xs
            .iter()
            .zip(&tops[k + 1])
            .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
            .collect();
        pts.extend(
            xs.iter()
                .zip(&tops[k])
                .rev()
                .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))),
        );
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{}" fill-opacity="0.85" stroke="none"/>"#,
            pts.join(" "),
            PALETTE[k % PALETTE.len()]
        );
    }
    legend(&mut out, &series.iter().map(|s| s.name).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
