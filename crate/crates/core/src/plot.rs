//! Minimal deterministic SVG charts: category scatter, scree lines and
//! grouped bars. Coordinates are printed with two decimals so output is
//! byte-stable across runs.

use std::fmt::Write as _;

use crate::homals::CategoryPoint;
use crate::psychometrics::ParallelAnalysis;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Maps data ranges onto the plotting area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: (f64, f64), ys: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if (hi - lo).abs() < 1e-12 {
                (lo - 1.0, hi + 1.0)
            } else {
                let d = 0.05 * (hi - lo);
                (lo - d, hi + d)
            }
        };
        let (x0, x1) = pad(xs);
        let (y0, y1) = pad(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for i in 0..=4 {
        let v = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            l - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

/// Scatter of category points on the first two homals dimensions. Uncertain
/// categories are drawn in red, flagged ones ringed.
pub fn category_plot(title: &str, points: &[CategoryPoint]) -> String {
    let coord = |p: &CategoryPoint, d: usize| p.coordinates.get(d).copied().unwrap_or(0.0);
    let f = Frame::new(
        range(points.iter().map(|p| coord(p, 0)).chain([0.0])),
        range(points.iter().map(|p| coord(p, 1)).chain([0.0])),
    );
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, "Dimension 1", "Dimension 2");
    let (ox, oy) = (f.px(0.0), f.py(0.0));
    let _ = writeln!(
        out,
        r##"<line x1="{:.2}" y1="{oy:.2}" x2="{:.2}" y2="{oy:.2}" stroke="#bbbbbb"/>"##,
        MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        out,
        r##"<line x1="{ox:.2}" y1="{:.2}" x2="{ox:.2}" y2="{:.2}" stroke="#bbbbbb"/>"##,
        MARGIN,
        HEIGHT - MARGIN
    );
    for p in points {
        let (x, y) = (f.px(coord(p, 0)), f.py(coord(p, 1)));
        let colour = if p.uncertain { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{colour}"/>"#);
        if p.flagged {
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="7" fill="none" stroke="{colour}"/>"#
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{colour}">{}</text>"#,
            x + 5.0,
            y - 4.0,
            escape(&format!("{}: {}", p.variable, p.category))
        );
    }
    out.push_str("</svg>\n");
    out
}

fn polyline(out: &mut String, f: &Frame, ys: &[f64], colour: &str, dashed: bool) {
    let pts: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| format!("{:.2},{:.2}", f.px((i + 1) as f64), f.py(y)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#,
        pts.join(" ")
    );
    for (i, &y) in ys.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#,
            f.px((i + 1) as f64),
            f.py(y)
        );
    }
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, colour)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN - 170.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="10" fill="{colour}"/>"#,
            y - 9.0
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 18.0, escape(label));
    }
}

/// Observed eigenvalues against the random-data reference curves.
pub fn scree_plot(title: &str, pa: &ParallelAnalysis) -> String {
    let p = pa.observed.len();
    let all = pa
        .observed
        .iter()
        .chain(&pa.random_mean)
        .chain(&pa.random_percentile)
        .copied()
        .chain([0.0, 1.0]);
    let f = Frame::new((1.0, p.max(2) as f64), range(all));
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, "Factor number", "Eigenvalue");
    let one = f.py(1.0);
    let _ = writeln!(
        out,
        r##"<line x1="{:.2}" y1="{one:.2}" x2="{:.2}" y2="{one:.2}" stroke="#999999" stroke-dasharray="2 3"/>"##,
        MARGIN,
        WIDTH - MARGIN
    );
    for k in 1..=p {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#,
            f.px(k as f64),
            HEIGHT - MARGIN + 14.0
        );
    }
    polyline(&mut out, &f, &pa.observed, PALETTE[0], false);
    polyline(&mut out, &f, &pa.random_mean, PALETTE[1], true);
    polyline(&mut out, &f, &pa.random_percentile, PALETTE[3], true);
    let pct = format!("Random {:.0}th percentile", pa.percentile);
    legend(
        &mut out,
        &[("Observed", PALETTE[0]), ("Random mean", PALETTE[1]), (pct.as_str(), PALETTE[3])],
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}">Retained: {}</text>"#,
        WIDTH - MARGIN - 170.0,
        MARGIN + 68.0,
        pa.retained
    );
    out.push_str("</svg>\n");
    out
}

/// Bars for `values[series][group]`, one cluster per group.
pub fn grouped_bars(title: &str, ylabel: &str, groups: &[String], series: &[String], values: &[Vec<f64>]) -> String {
    let top = values.iter().flatten().copied().fold(0.0f64, f64::max).max(1e-9);
    let f = Frame {
        x0: 0.0,
        x1: groups.len().max(1) as f64,
        y0: 0.0,
        y1: top * 1.15,
    };
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, "", ylabel);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let left = MARGIN + slot * g as f64 + slot * 0.1;
        for (s, row) in values.iter().enumerate() {
            let v = row.get(g).copied().unwrap_or(0.0);
            let (y, base) = (f.py(v), f.py(0.0));
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}</title></rect>"#,
                left + bar * s as f64,
                bar - 1.0,
                base - y,
                PALETTE[s % PALETTE.len()],
                escape(&format!("{}, {}: {v:.4}", name, series.get(s).map_or("", String::as_str)))
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN + slot * (g as f64 + 0.5),
            HEIGHT - MARGIN + 14.0,
            escape(name)
        );
    }
    let entries: Vec<(&str, &str)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), PALETTE[i % PALETTE.len()]))
        .collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
