//! Self-contained SVG line plots. Presentation only: plots are always
//! rendered from the same rows that go into the CSVs.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f32, f32)>,
}

const W: f32 = 640.0;
const H: f32 = 400.0;
const ML: f32 = 60.0; // left margin
const MR: f32 = 20.0;
const MT: f32 = 36.0;
const MB: f32 = 48.0;

/// Renders a line plot with axes, ticks, and a legend.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let pts: Vec<(f32, f32)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1) = bounds(pts.iter().map(|p| p.0));
    let (mut y0, mut y1) = bounds(pts.iter().map(|p| p.1));
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y0 == y1 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f32| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f32| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        W / 2.0,
        escape(title)
    );

    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    // ticks
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f32 / 4.0;
        let px = sx(fx);
        let _ = writeln!(
            svg,
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>",
            H - MB,
            H - MB + 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            H - MB + 16.0,
            trim_float(fx)
        );
        let fy = y0 + (y1 - y0) * i as f32 / 4.0;
        let py = sy(fy);
        let _ = writeln!(svg, "<line x1=\"{}\" y1=\"{py}\" x2=\"{ML}\" y2=\"{py}\" stroke=\"black\"/>", ML - 4.0);
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            ML - 7.0,
            py + 3.0,
            trim_float(fy)
        );
    }
    // axis labels
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        (W + ML - MR) / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{}</text>",
        (H + MT - MB) / 2.0,
        (H + MT - MB) / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            s.color,
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\"/>", sx(x), sy(y), s.color);
        }
        // legend
        let ly = MT + 14.0 * i as f32;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>",
            W - MR - 130.0,
            W - MR - 110.0,
            s.color
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            W - MR - 105.0,
            ly + 3.5,
            escape(s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(vals: impl Iterator<Item = f32>) -> (f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn trim_float(v: f32) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_contains_series_and_labels() {
        let svg = line_plot(
            "demo",
            "step",
            "rate",
            &[
                Series { name: "asr", color: "#d62728", points: vec![(0.0, 0.0), (100.0, 0.9)] },
                Series { name: "acc", color: "#1f77b4", points: vec![(0.0, 0.1), (100.0, 0.92)] },
            ],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("asr") && svg.contains("acc"));
        assert!(svg.ends_with("</svg>\n"));
        // self-contained: no external references
        assert!(!svg.contains("href"));
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let svg = line_plot("flat", "x", "y", &[Series { name: "s", color: "green", points: vec![(1.0, 0.5), (1.0, 0.5)] }]);
        assert!(!svg.contains("NaN"));
    }
}
