//! Self-contained SVG figures. Every figure has a CSV/JSON twin written next
//! to it; these are presentation only.
//!
//! Heatmap colors interpolate linearly in RGB from `#f7fbff` at 0 to `#08306b`
//! at 1 (values are clamped to `[0, 1]`).

use std::fmt::Write as _;

use ndarray::Array2;

use crate::similarity::CategoryMatrix;

const FONT: &str = "font-family=\"sans-serif\"";
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn color_scale(value: f64) -> String {
    let t = value.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(247.0, 8.0),
        lerp(251.0, 48.0),
        lerp(255.0, 107.0)
    )
}

fn open(width: u32, height: u32, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(s, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" {FONT}>{}</text>",
        width / 2,
        escape(title)
    );
    s
}

pub fn heatmap_svg(m: &CategoryMatrix) -> String {
    let n = m.categories.len() as u32;
    let cell = 80;
    let (left, top) = (110, 50);
    let width = left + n * cell + 30;
    let height = top + n * cell + 40;
    let mut s = open(width, height, "Routing signature similarity by category");
    for (i, row) in m.values.iter().enumerate() {
        let y = top + i as u32 * cell;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"13\" {FONT}>{}</text>",
            left - 8,
            y + cell / 2 + 5,
            escape(&m.categories[i])
        );
        for (j, v) in row.iter().enumerate() {
            let x = left + j as u32 * cell;
            let (fill, label, ink) = match v {
                Some(v) => (
                    color_scale(*v),
                    format!("{v:.3}"),
                    if *v > 0.6 { "white" } else { "black" },
                ),
                None => ("#dddddd".to_string(), "NA".to_string(), "black"),
            };
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"white\"/>"
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" fill=\"{ink}\" {FONT}>{label}</text>",
                x + cell / 2,
                y + cell / 2 + 5
            );
        }
    }
    for (j, c) in m.categories.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" {FONT}>{}</text>",
            left + j as u32 * cell + cell / 2,
            top + n * cell + 20,
            escape(c)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bars with +-1 std whiskers on a fixed `[0, 1]` axis.
pub fn bars_svg(bars: &[(String, f64, f64)]) -> String {
    let (left, top, plot_h, bar_w, gap) = (60u32, 50u32, 260u32, 70u32, 40u32);
    let width = left + bars.len() as u32 * (bar_w + gap) + gap;
    let height = top + plot_h + 50;
    let mut s = open(width, height, "Similarity versus load-balance baseline");
    let y_of = |v: f64| top as f64 + plot_h as f64 * (1.0 - v.clamp(0.0, 1.0));
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#eeeeee\"/>",
            width - 10
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\" {FONT}>{v:.1}</text>",
            left - 6,
            y + 4.0
        );
    }
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let x = left + gap + i as u32 * (bar_w + gap);
        let y = y_of(*mean);
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{y:.1}\" width=\"{bar_w}\" height=\"{:.1}\" fill=\"{}\"/>",
            (top + plot_h) as f64 - y,
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + bar_w / 2;
        let _ = writeln!(
            s,
            "<line x1=\"{cx}\" y1=\"{:.1}\" x2=\"{cx}\" y2=\"{:.1}\" stroke=\"black\"/>",
            y_of(mean + std),
            y_of(mean - std)
        );
        let _ = writeln!(
            s,
            "<text x=\"{cx}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\" {FONT}>{mean:.3}</text>",
            y_of(mean + std) - 6.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" {FONT}>{}</text>",
            top + plot_h + 20,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-layer effect size as a polyline; undefined layers are skipped.
pub fn layer_signal_svg(per_layer_d: &[Option<f64>]) -> String {
    let (left, top, plot_w, plot_h) = (60.0, 50.0, 480.0, 260.0);
    let mut s = open(600, 360, "Layer-wise task signal (Cohen's d)");
    let defined: Vec<f64> = per_layer_d.iter().flatten().copied().collect();
    let max = defined.iter().fold(0.0f64, |m, &v| m.max(v)).max(1e-9);
    let min = defined.iter().fold(0.0f64, |m, &v| m.min(v));
    let n = per_layer_d.len().max(2) - 1;
    let x_of = |l: usize| left + plot_w * l as f64 / n as f64;
    let y_of = |v: f64| top + plot_h * (max - v) / (max - min);
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{}\" y2=\"{:.1}\" stroke=\"#999999\"/>",
        y_of(0.0),
        left + plot_w,
        y_of(0.0)
    );
    let points: Vec<String> = per_layer_d
        .iter()
        .enumerate()
        .filter_map(|(l, d)| d.map(|d| format!("{:.1},{:.1}", x_of(l), y_of(d))))
        .collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
        points.join(" "),
        PALETTE[0]
    );
    for (l, d) in per_layer_d.iter().enumerate() {
        if let Some(d) = d {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>",
                x_of(l),
                y_of(*d),
                PALETTE[0]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\" {FONT}>{l}</text>",
            x_of(l),
            top + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" {FONT}>layer</text>",
        left + plot_w / 2.0,
        top + plot_h + 36.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\" {FONT}>{max:.2}</text>",
        left - 6.0,
        top + 4.0
    );
    s.push_str("</svg>\n");
    s
}

/// Scatter of the first two coordinates, one color/glyph per category.
pub fn scatter_svg(categories: &[String], coords: &Array2<f64>, explained: &[f64]) -> String {
    let (left, top, plot) = (60.0, 50.0, 400.0);
    let mut s = open(620, 500, "PCA projection of routing signatures");
    let mut order: Vec<&String> = Vec::new();
    for c in categories {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    let bound = coords
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12)
        * 1.05;
    let at = |v: f64| plot * (v + bound) / (2.0 * bound);
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{plot}\" height=\"{plot}\" fill=\"none\" stroke=\"#999999\"/>"
    );
    for (cat, row) in categories.iter().zip(coords.rows()) {
        let k = order.iter().position(|c| *c == cat).unwrap();
        let color = PALETTE[k % PALETTE.len()];
        let x = left + at(row[0]);
        let y = top + plot - at(if row.len() > 1 { row[1] } else { 0.0 });
        let glyph = match k % 4 {
            0 => format!("<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"4\" fill=\"{color}\"/>"),
            1 => format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"8\" height=\"8\" fill=\"{color}\"/>",
                x - 4.0,
                y - 4.0
            ),
            2 => format!(
                "<polygon points=\"{x:.1},{:.1} {:.1},{:.1} {:.1},{:.1}\" fill=\"{color}\"/>",
                y - 5.0,
                x - 5.0,
                y + 4.0,
                x + 5.0,
                y + 4.0
            ),
            _ => format!(
                "<polygon points=\"{x:.1},{:.1} {:.1},{y:.1} {x:.1},{:.1} {:.1},{y:.1}\" fill=\"{color}\"/>",
                y - 5.0,
                x + 5.0,
                y + 5.0,
                x - 5.0
            ),
        };
        s.push_str(&glyph);
        s.push('\n');
    }
    for (k, c) in order.iter().enumerate() {
        let y = top + 10.0 + k as f64 * 20.0;
        let _ = writeln!(
            s,
            "<rect x=\"480\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>",
            y - 9.0,
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            "<text x=\"496\" y=\"{y:.1}\" font-size=\"12\" {FONT}>{}</text>",
            escape(c)
        );
    }
    let pct = |i: usize| explained.get(i).copied().unwrap_or(0.0) * 100.0;
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" {FONT}>PC1 ({:.1}%)</text>",
        left + plot / 2.0,
        top + plot + 24.0,
        pct(0)
    );
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 20 {})\" {FONT}>PC2 ({:.1}%)</text>",
        top + plot / 2.0,
        top + plot / 2.0,
        pct(1)
    );
    s.push_str("</svg>\n");
    s
}
