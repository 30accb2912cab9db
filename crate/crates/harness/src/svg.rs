//! Minimal SVG 1.1 bar and line charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];

pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
    /// Half-height of an error bar per value.
    pub errors: Option<Vec<f64>>,
}

pub struct LineSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    )
    .unwrap();
    s
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) || !v.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= v {
            return m * mag;
        }
    }
    10.0 * mag
}

fn axes(s: &mut String, ymin: f64, ymax: f64, ylabel: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            fmt_tick(v)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    )
    .unwrap();
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let x = W - RIGHT + 12.0;
        writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y + 9.0,
            escape(n)
        )
        .unwrap();
    }
}

/// Grouped bars: one group per label, one bar per series.
pub fn bar_chart(title: &str, ylabel: &str, labels: &[String], series: &[Series]) -> String {
    let mut s = header(title);
    let top = series
        .iter()
        .flat_map(|se| {
            se.values.iter().enumerate().map(move |(i, v)| v + se.errors.as_ref().map_or(0.0, |e| e[i]))
        })
        .fold(0.0, f64::max);
    let ymax = nice_max(top);
    axes(&mut s, 0.0, ymax, ylabel);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let group = (x1 - x0) / labels.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    let scale = |v: f64| y0 - (y0 - y1) * (v / ymax).clamp(0.0, 1.0);
    for (g, label) in labels.iter().enumerate() {
        let gx = x0 + group * g as f64 + group * 0.1;
        for (k, se) in series.iter().enumerate() {
            let v = se.values.get(g).copied().unwrap_or(0.0);
            let x = gx + bar * k as f64;
            let y = scale(v);
            writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                y0 - y,
                PALETTE[k % PALETTE.len()]
            )
            .unwrap();
            if let Some(e) = se.errors.as_ref().and_then(|e| e.get(g)) {
                let cx = x + bar / 2.0;
                writeln!(
                    s,
                    r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                    scale(v - e),
                    scale(v + e)
                )
                .unwrap();
            }
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            gx + group * 0.4,
            y0 + 16.0,
            escape(label)
        )
        .unwrap();
    }
    let names: Vec<&str> = series.iter().map(|se| se.name.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[LineSeries]) -> String {
    let mut s = header(title);
    let pts = || series.iter().flat_map(|se| se.points.iter().copied());
    let xmax = pts().map(|p| p.0).fold(0.0, f64::max).max(1.0);
    let ylo = pts().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let yhi = pts().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (ymin, ymax) = if ylo >= 0.0 && yhi <= 1.0 {
        (0.0, 1.0)
    } else if ylo.is_finite() && yhi > ylo {
        (ylo.min(0.0), nice_max(yhi))
    } else {
        (0.0, 1.0)
    };
    axes(&mut s, ymin, ymax, ylabel);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let sx = |x: f64| x0 + (x1 - x0) * x / xmax;
    let sy = |y: f64| y0 - (y0 - y1) * ((y - ymin) / (ymax - ymin)).clamp(0.0, 1.0);
    for i in 0..=4 {
        let v = xmax * i as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            sx(v),
            y0 + 16.0,
            fmt_tick(v)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    )
    .unwrap();
    for (k, se) in series.iter().enumerate() {
        let path: Vec<String> = se
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            path.join(" ")
        )
        .unwrap();
    }
    let names: Vec<&str> = series.iter().map(|se| se.name.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}
