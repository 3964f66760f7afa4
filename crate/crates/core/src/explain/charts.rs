//! Inline SVG for the report. Every chart is a pure function of its data.

use std::fmt::Write;

use crate::cvi::{Histogram, COLOR_RAMP};
use crate::lvi::SectorLine;

pub const SECTOR_COLORS: [&str; 6] = ["#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn sector_color(i: usize) -> &'static str {
    SECTOR_COLORS[i % SECTOR_COLORS.len()]
}

fn open(out: &mut String, w: f64, h: f64, label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" role="img" aria-label="{}">"#,
        escape(label)
    );
}

pub fn histogram(h: &Histogram) -> String {
    let (w, ht, pad) = (480.0, 220.0, 30.0);
    let mut s = String::new();
    open(&mut s, w, ht, "CVI histogram");
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (w - 2.0 * pad) / h.counts.len() as f64;
    for (i, &c) in h.counts.iter().enumerate() {
        let bh = (ht - 2.0 * pad) * c as f64 / max;
        let x = pad + i as f64 * bw;
        let y = ht - pad - bh;
        let _ = write!(
            s,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{bh:.1}" fill="{}" stroke="#333"><title>{:.3} to {:.3}: {c}</title></rect>"##,
            bw - 2.0,
            COLOR_RAMP[i],
            h.edges[i],
            h.edges[i + 1]
        );
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{c}</text>"#,
            x + bw / 2.0,
            y - 3.0
        );
    }
    let _ = write!(
        s,
        r#"<text x="{pad}" y="{:.1}" font-size="10">{:.3}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.3}</text></svg>"#,
        ht - 10.0,
        h.min,
        w - pad,
        ht - 10.0,
        h.max
    );
    s
}

/// Horizontal bars, one per `(label, value)`, scaled to the largest value.
pub fn bars(items: &[(String, f64)], color: &str, label: &str) -> String {
    let (w, row, left) = (520.0, 18.0, 200.0);
    let h = row * items.len() as f64 + 10.0;
    let mut s = String::new();
    open(&mut s, w, h, label);
    let max = items.iter().map(|i| i.1).fold(0.0, f64::max);
    for (i, (name, v)) in items.iter().enumerate() {
        let y = 5.0 + i as f64 * row;
        let bw = if max > 0.0 { (w - left - 60.0) * v / max } else { 0.0 };
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text><rect x="{left}" y="{y:.1}" width="{bw:.1}" height="{:.1}" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="10">{v:.4}</text>"#,
            left - 5.0,
            y + row * 0.7,
            escape(name),
            row - 4.0,
            left + bw + 4.0,
            y + row * 0.7
        );
    }
    s.push_str("</svg>");
    s
}

/// Strip plot per feature: one dot per sample at its attribution, colored
/// by the feature value from blue (low) to red (high).
pub fn strips(features: &[(String, Vec<f64>, Vec<f64>)], label: &str) -> String {
    let (w, row, left) = (560.0, 26.0, 200.0);
    let h = row * features.len() as f64 + 30.0;
    let mut s = String::new();
    open(&mut s, w, h, label);
    let span = features
        .iter()
        .flat_map(|f| f.1.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let plot = w - left - 20.0;
    let zero = left + plot / 2.0;
    let _ = write!(
        s,
        r##"<line x1="{zero:.1}" y1="0" x2="{zero:.1}" y2="{:.1}" stroke="#999"/>"##,
        h - 20.0
    );
    for (i, (name, shap, values)) in features.iter().enumerate() {
        let y = 10.0 + i as f64 * row;
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
            left - 5.0,
            y + row / 2.0,
            escape(name)
        );
        for (k, (phi, v)) in shap.iter().zip(values).enumerate() {
            let jitter = ((k * 7919) % 97) as f64 / 97.0 - 0.5;
            let cx = zero + phi / span * plot / 2.0;
            let cy = y + row / 2.0 + jitter * (row - 8.0);
            let t = v.clamp(0.0, 1.0);
            let r = (40.0 + 215.0 * t).round();
            let b = (40.0 + 215.0 * (1.0 - t)).round();
            let _ = write!(
                s,
                r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="2" fill="rgb({r},60,{b})" fill-opacity="0.7"/>"#
            );
        }
    }
    let _ = write!(
        s,
        r#"<text x="{left}" y="{:.1}" font-size="10">-{span:.3}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">+{span:.3}</text></svg>"#,
        h - 5.0,
        w - 20.0,
        h - 5.0
    );
    s
}

fn radar_point(cx: f64, cy: f64, r: f64, axis: usize, n: usize, v: f64) -> (f64, f64) {
    let angle = -std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * axis as f64 / n as f64;
    (cx + r * v * angle.cos(), cy + r * v * angle.sin())
}

fn polygon(cx: f64, cy: f64, r: f64, values: &[f64]) -> String {
    values
        .iter()
        .enumerate()
        .map(|(a, &v)| {
            let (x, y) = radar_point(cx, cy, r, a, values.len(), v.clamp(0.0, 1.0));
            format!("{x:.1},{y:.1}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn radar(axes: &[String], members: &[Vec<f64>], centroid: &[f64], color: &str, label: &str) -> String {
    let (w, h, r) = (300.0, 280.0, 100.0);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let mut s = String::new();
    open(&mut s, w, h, label);
    let ring = vec![1.0; axes.len()];
    let _ = write!(
        s,
        r##"<polygon points="{}" fill="none" stroke="#ccc"/>"##,
        polygon(cx, cy, r, &ring)
    );
    for (a, name) in axes.iter().enumerate() {
        let (x, y) = radar_point(cx, cy, r + 14.0, a, axes.len(), 1.0);
        let _ = write!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            escape(name)
        );
    }
    for m in members {
        let _ = write!(
            s,
            r#"<polygon points="{}" fill="none" stroke="{color}" stroke-opacity="0.25"/>"#,
            polygon(cx, cy, r, m)
        );
    }
    let _ = write!(
        s,
        r##"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="#000" stroke-width="2"/></svg>"##,
        polygon(cx, cy, r, centroid)
    );
    s
}

/// Silhouette values per sector, each sorted, drawn as adjacent vertical bars.
pub fn silhouette_strip(per_cluster: &[Vec<f64>], names: &[String]) -> String {
    let n: usize = per_cluster.iter().map(Vec::len).sum::<usize>() + per_cluster.len();
    let (h, mid) = (200.0, 100.0);
    let bw = 4.0;
    let w = (n as f64 * bw + 20.0).max(200.0);
    let mut s = String::new();
    open(&mut s, w, h, "Silhouette values by sector");
    let _ = write!(s, r##"<line x1="0" y1="{mid}" x2="{w}" y2="{mid}" stroke="#999"/>"##);
    let mut x = 10.0;
    for (c, values) in per_cluster.iter().enumerate() {
        let color = sector_color(c);
        let name = names.get(c).map_or("", String::as_str);
        for &v in values {
            let bh = v.abs() * (mid - 10.0);
            let y = if v >= 0.0 { mid - bh } else { mid };
            let _ = write!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{bh:.1}" fill="{color}"><title>{} {v:.3}</title></rect>"#,
                bw - 1.0,
                escape(name)
            );
            x += bw;
        }
        x += bw;
    }
    s.push_str("</svg>");
    s
}

/// Observed LVI as solid lines, forecast segment dashed.
pub fn lvi_lines(lines: &[SectorLine]) -> String {
    let (w, h, pad) = (520.0, 260.0, 40.0);
    let mut s = String::new();
    open(&mut s, w, h, "LVI time series");
    let years: Vec<u16> = lines.iter().flat_map(|l| l.points.iter().map(|p| p.year)).collect();
    let (y0, y1) = (
        years.iter().copied().min().unwrap_or(0) as f64,
        years.iter().copied().max().unwrap_or(1) as f64,
    );
    let values: Vec<f64> = lines.iter().flat_map(|l| l.points.iter().map(|p| p.lvi)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let (lo, hi) = if hi > lo { (lo - 0.02, hi + 0.02) } else { (lo - 0.1, hi + 0.1) };
    let px = |yr: u16| pad + (yr as f64 - y0) / (y1 - y0).max(1.0) * (w - 2.0 * pad);
    let py = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
    for yr in years.iter().copied().collect::<std::collections::BTreeSet<_>>() {
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{yr}</text>"#,
            px(yr),
            h - pad + 14.0
        );
    }
    for (i, line) in lines.iter().enumerate() {
        let color = sector_color(i);
        let (observed, predicted): (Vec<_>, Vec<_>) = line.points.iter().partition(|p| !p.predicted);
        let pts: Vec<String> = observed
            .iter()
            .map(|p| format!("{:.1},{:.1}", px(p.year), py(p.lvi)))
            .collect();
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        if let (Some(last), Some(next)) = (observed.last(), predicted.first()) {
            let _ = write!(
                s,
                r#"<line class="forecast" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2" stroke-dasharray="5,4"/>"#,
                px(last.year),
                py(last.lvi),
                px(next.year),
                py(next.lvi)
            );
        }
        for p in &line.points {
            let _ = write!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"><title>{} {} {:.3}</title></circle>"#,
                px(p.year),
                py(p.lvi),
                escape(&line.sector),
                p.year,
                p.lvi
            );
        }
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{} ({} MSE {:.2e})</text>"#,
            pad + 5.0,
            14.0 + 14.0 * i as f64,
            escape(&line.sector),
            line.selected_model.name(),
            line.mse
        );
    }
    s.push_str("</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("<a href='x'>&</a>"), "&lt;a href=&#39;x&#39;&gt;&amp;&lt;/a&gt;");
    }

    #[test]
    fn histogram_has_eight_bars() {
        let h = crate::cvi::histogram8(&[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(histogram(&h).matches("<rect").count(), 8);
    }
}
