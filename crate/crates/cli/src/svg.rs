//! Hand-rolled SVG rendering for explanation matrices, score bars, and
//! flipping curves.
//!
//! Every coordinate is printed with fixed precision and colors are
//! computed in integer channels, so identical inputs produce byte-identical
//! files.

use std::fmt::Write as _;
use std::path::Path;

use covxplain_core::linalg::Matrix;

use crate::{CliError, Result};

const FONT: &str = "font-family=\"monospace\"";

/// Positive values blend white to red, negative values white to blue,
/// scaled by `vmax` (the largest magnitude in the plot).
fn diverging_color(v: f64, vmax: f64) -> String {
    if !(vmax > 0.0) || !v.is_finite() {
        return String::from("#ffffff");
    }
    let t = (v.abs() / vmax).min(1.0);
    let (er, eg, eb) = if v >= 0.0 {
        (178.0, 24.0, 43.0)
    } else {
        (33.0, 102.0, 172.0)
    };
    let ch = |end: f64| (255.0 + (end - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(er), ch(eg), ch(eb))
}

/// Distinct line colors, cycled when a chart has more series than entries.
const PALETTE: [&str; 9] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
    "#1f78b4",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(
        0.0,
        |acc, v| if v.is_finite() { acc.max(v.abs()) } else { acc },
    )
}

/// A d×d matrix as a diverging heatmap with a color scale legend.
pub fn heatmap(matrix: &Matrix, labels: &[String], title: &str) -> String {
    let d = matrix.rows();
    let cell = if d == 0 {
        16.0
    } else {
        (480.0 / d as f64).clamp(4.0, 28.0)
    };
    let show_labels = !labels.is_empty() && d <= 24;
    let left = if show_labels { 110.0 } else { 50.0 };
    let top = 60.0;
    let grid = cell * d as f64;
    let width = left + grid + 130.0;
    let height = top + grid.max(170.0) + 60.0;
    let vmax = max_abs(matrix.as_slice().iter().copied());

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{left:.1}\" y=\"28\" {FONT} font-size=\"15\">{}</text>",
        xml_escape(title)
    );
    for i in 0..d {
        for j in 0..d {
            let color = diverging_color(matrix.get(i, j), vmax);
            let x = left + j as f64 * cell;
            let y = top + i as f64 * cell;
            let _ = writeln!(
                out,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{color}\" stroke=\"#dddddd\" stroke-width=\"0.3\"/>"
            );
        }
    }
    if show_labels {
        for (i, label) in labels.iter().enumerate().take(d) {
            let y = top + (i as f64 + 0.7) * cell;
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{y:.1}\" {FONT} font-size=\"10\" text-anchor=\"end\">{}</text>",
                left - 6.0,
                xml_escape(label)
            );
            let x = left + (i as f64 + 0.7) * cell;
            let _ = writeln!(
                out,
                "<text x=\"{x:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" transform=\"rotate(-60 {x:.1} {:.1})\">{}</text>",
                top + grid + 14.0,
                top + grid + 14.0,
                xml_escape(label)
            );
        }
    }

    let lx = left + grid + 30.0;
    let lh = 160.0;
    let _ = writeln!(
        out,
        "<defs><linearGradient id=\"scale\" x1=\"0\" y1=\"0\" x2=\"0\" y2=\"1\">"
    );
    let _ = writeln!(out, "<stop offset=\"0\" stop-color=\"#b2182b\"/>");
    let _ = writeln!(out, "<stop offset=\"0.5\" stop-color=\"#ffffff\"/>");
    let _ = writeln!(out, "<stop offset=\"1\" stop-color=\"#2166ac\"/>");
    let _ = writeln!(out, "</linearGradient></defs>");
    let _ = writeln!(
        out,
        "<rect x=\"{lx:.1}\" y=\"{top:.1}\" width=\"16\" height=\"{lh:.1}\" fill=\"url(#scale)\" stroke=\"#999999\" stroke-width=\"0.5\"/>"
    );
    for (frac, value) in [(0.0, vmax), (0.5, 0.0), (1.0, -vmax)] {
        let y = top + frac * lh;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\">{value:.3e}</text>",
            lx + 22.0,
            y + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Per-feature scores as signed vertical bars around a zero baseline.
pub fn bar_chart(scores: &[f64], labels: &[String], title: &str) -> String {
    let d = scores.len();
    let left = 60.0;
    let top = 50.0;
    let plot_w = 540.0;
    let plot_h = 260.0;
    let width = left + plot_w + 30.0;
    let height = top + plot_h + 70.0;
    let vmax = max_abs(scores.iter().copied()).max(f64::MIN_POSITIVE);
    let slot = if d == 0 { plot_w } else { plot_w / d as f64 };
    let bar_w = (slot * 0.7).min(40.0);
    let zero_y = top + plot_h / 2.0;
    let scale = plot_h / 2.0 / vmax;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{left:.1}\" y=\"26\" {FONT} font-size=\"15\">{}</text>",
        xml_escape(title)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{left:.1}\" y1=\"{zero_y:.1}\" x2=\"{:.1}\" y2=\"{zero_y:.1}\" stroke=\"#333333\" stroke-width=\"1\"/>",
        left + plot_w
    );
    for (i, &v) in scores.iter().enumerate() {
        let x = left + (i as f64 + 0.5) * slot - bar_w / 2.0;
        let h = (v.abs() * scale).min(plot_h / 2.0);
        let y = if v >= 0.0 { zero_y - h } else { zero_y };
        let color = if v >= 0.0 { "#b2182b" } else { "#2166ac" };
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{color}\"/>"
        );
        if d <= 24 {
            let lx = left + (i as f64 + 0.5) * slot;
            let ly = top + plot_h + 16.0;
            let label = labels.get(i).map(String::as_str).unwrap_or("");
            let _ = writeln!(
                out,
                "<text x=\"{lx:.1}\" y=\"{ly:.1}\" {FONT} font-size=\"10\" text-anchor=\"middle\" transform=\"rotate(-45 {lx:.1} {ly:.1})\">{}</text>",
                xml_escape(label)
            );
        }
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" text-anchor=\"end\">{vmax:.3e}</text>",
        left - 6.0,
        top + 10.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" text-anchor=\"end\">0</text>",
        left - 6.0,
        zero_y + 4.0
    );
    out.push_str("</svg>\n");
    out
}

/// One curve per method: relative uncertainty against the fraction of
/// features flipped, with a legend.
pub fn curves_chart(series: &[(String, Vec<f64>, Vec<f64>)], title: &str) -> String {
    let left = 70.0;
    let top = 50.0;
    let plot_w = 480.0;
    let plot_h = 300.0;
    let width = left + plot_w + 170.0;
    let height = top + plot_h + 60.0;
    let ymax = series
        .iter()
        .flat_map(|(_, _, values)| values.iter().copied())
        .fold(
            1.0_f64,
            |acc, v| if v.is_finite() { acc.max(v) } else { acc },
        )
        * 1.05;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{left:.1}\" y=\"26\" {FONT} font-size=\"15\">{}</text>",
        xml_escape(title)
    );
    for step in 0..=4 {
        let frac = step as f64 / 4.0;
        let x = left + frac * plot_w;
        let y = top + plot_h - frac * plot_h;
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{top:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#eeeeee\" stroke-width=\"1\"/>",
            top + plot_h
        );
        let _ = writeln!(
            out,
            "<line x1=\"{left:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#eeeeee\" stroke-width=\"1\"/>",
            left + plot_w
        );
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" text-anchor=\"middle\">{frac:.2}</text>",
            top + plot_h + 16.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"10\" text-anchor=\"end\">{:.2}</text>",
            left - 6.0,
            y + 4.0,
            frac * ymax
        );
    }
    let _ = writeln!(
        out,
        "<rect x=\"{left:.1}\" y=\"{top:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} font-size=\"11\" text-anchor=\"middle\">fraction of features flipped</text>",
        left + plot_w / 2.0,
        top + plot_h + 38.0
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.1}\" {FONT} font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">relative uncertainty</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );

    for (k, (name, fractions, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut points = String::new();
        for (f, v) in fractions.iter().zip(values) {
            if !v.is_finite() {
                continue;
            }
            let x = left + f.clamp(0.0, 1.0) * plot_w;
            let y = top + plot_h - (v / ymax).clamp(0.0, 1.0) * plot_h;
            let _ = write!(points, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
            points.trim_end()
        );
        let ly = top + 14.0 + k as f64 * 16.0;
        let lx = left + plot_w + 20.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{ly:.1}\" {FONT} font-size=\"11\">{}</text>",
            lx + 24.0,
            xml_escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
