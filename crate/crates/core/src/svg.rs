//! Minimal SVG 1.1 charts: bar charts, heat maps and labelled scatter plots.
//!
//! Layout is fixed and numbers are printed with a fixed number of decimals, so
//! identical inputs give byte-identical files.

use std::fmt::Write;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" {FONT} font-size=\"13\">{}</text>",
        width / 2.0,
        escape(title)
    );
}

/// Vertical bars, one per `(label, value)`, labels rotated under the axis.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let slot = 28.0;
    let (left, top, plot_h, bottom) = (50.0, 30.0, 200.0, 90.0);
    let width = left + slot * bars.len().max(1) as f64 + 20.0;
    let height = top + plot_h + bottom;
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let min = bars.iter().map(|b| b.1).fold(0.0, f64::min);
    let span = if max - min > 0.0 { max - min } else { 1.0 };
    let y_of = |v: f64| top + plot_h * (max - v) / span;
    let zero = y_of(0.0);

    let mut out = String::new();
    header(&mut out, width, height, title);
    let _ = writeln!(
        out,
        "<line x1=\"{left:.1}\" y1=\"{zero:.2}\" x2=\"{:.1}\" y2=\"{zero:.2}\" stroke=\"black\"/>",
        width - 20.0
    );
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\" {FONT}>{max:.3}</text>", left - 4.0, top + 4.0);
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\" {FONT}>{min:.3}</text>", left - 4.0, top + plot_h);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = left + slot * i as f64 + 4.0;
        let (y0, y1) = if *v >= 0.0 { (y_of(*v), zero) } else { (zero, y_of(*v)) };
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{y0:.2}\" width=\"{:.1}\" height=\"{:.2}\" fill=\"#4477aa\"><title>{} {v:.4}</title></rect>",
            slot - 8.0,
            y1 - y0,
            escape(label)
        );
        let lx = x + (slot - 8.0) / 2.0;
        let ly = top + plot_h + 12.0;
        let _ = writeln!(
            out,
            "<text x=\"{lx:.1}\" y=\"{ly:.1}\" transform=\"rotate(-60 {lx:.1} {ly:.1})\" text-anchor=\"end\" {FONT}>{}</text>",
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grayscale heat map, black = 0 and white = the matrix maximum.
pub fn heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> String {
    let cell = 18.0;
    let (left, top, bottom) = (70.0, 30.0, 90.0);
    let width = left + cell * col_labels.len().max(1) as f64 + 20.0;
    let height = top + cell * row_labels.len().max(1) as f64 + bottom;
    let max = values.iter().flatten().copied().fold(0.0, f64::max);
    let mut out = String::new();
    header(&mut out, width, height, title);
    for (r, label) in row_labels.iter().enumerate() {
        let y = top + cell * r as f64;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            left - 4.0,
            y + cell * 0.7,
            escape(label)
        );
        for (c, v) in values[r].iter().enumerate() {
            let level = if max > 0.0 { (255.0 * v.max(0.0) / max).round() as u8 } else { 0 };
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"#{level:02x}{level:02x}{level:02x}\"><title>{v:.4}</title></rect>",
                left + cell * c as f64
            );
        }
    }
    let ly = top + cell * row_labels.len() as f64 + 10.0;
    for (c, label) in col_labels.iter().enumerate() {
        let lx = left + cell * c as f64 + cell / 2.0;
        let _ = writeln!(
            out,
            "<text x=\"{lx:.1}\" y=\"{ly:.1}\" transform=\"rotate(-60 {lx:.1} {ly:.1})\" text-anchor=\"end\" {FONT}>{}</text>",
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Labelled 2-D scatter plot with equal axis scaling.
pub fn scatter(title: &str, points: &[(String, [f64; 2])]) -> String {
    let (size, margin) = (420.0, 40.0);
    let extent = points
        .iter()
        .flat_map(|p| p.1)
        .map(f64::abs)
        .fold(0.0, f64::max)
        .max(1e-12);
    let to_px = |v: f64, flip: bool| {
        let u = if flip { -v } else { v };
        margin + (size - 2.0 * margin) * (u / extent + 1.0) / 2.0
    };
    let mut out = String::new();
    header(&mut out, size, size, title);
    let mid = size / 2.0;
    let _ = writeln!(
        out,
        "<line x1=\"{margin:.1}\" y1=\"{mid:.1}\" x2=\"{:.1}\" y2=\"{mid:.1}\" stroke=\"#cccccc\"/>",
        size - margin
    );
    let _ = writeln!(
        out,
        "<line x1=\"{mid:.1}\" y1=\"{margin:.1}\" x2=\"{mid:.1}\" y2=\"{:.1}\" stroke=\"#cccccc\"/>",
        size - margin
    );
    for (label, [x, y]) in points {
        let (px, py) = (to_px(*x, false), to_px(*y, true));
        let _ = writeln!(out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"#cc3311\"/>");
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" {FONT}>{}</text>", px + 5.0, py - 4.0, escape(label));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_deterministic_and_escaped() {
        let bars = vec![("she".to_string(), 0.8), ("he".to_string(), 0.0), ("a<b".to_string(), -0.1)];
        let a = bar_chart("female", &bars);
        assert_eq!(a, bar_chart("female", &bars));
        assert!(a.starts_with("<?xml"));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches("<rect").count(), 4);
    }

    #[test]
    fn heatmap_cells() {
        let s = heatmap("g", &["f1".into(), "f2".into()], &["x".into()], &[vec![1.0], vec![0.0]]);
        assert!(s.contains("#ffffff"));
        assert!(s.contains("#000000"));
        let p = scatter("pca", &[("a".into(), [1.0, 0.0]), ("b".into(), [-1.0, 0.0])]);
        assert_eq!(p.matches("<circle").count(), 2);
    }
}
