//! Plain-text report artifacts: CSV helpers and a dependency-free SVG bar chart.

use std::fmt::Write;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart, one `<rect class="bar">` per entry in the given
/// order. An optional reference value is drawn as a dashed vertical line.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)], reference: Option<f64>) -> String {
    const ROW: f64 = 22.0;
    const LABEL_W: f64 = 180.0;
    const PLOT_W: f64 = 480.0;
    const TOP: f64 = 40.0;
    let max = bars
        .iter()
        .map(|(_, v)| *v)
        .chain(reference)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { PLOT_W / max } else { 0.0 };
    let width = LABEL_W + PLOT_W + 90.0;
    let height = TOP + ROW * bars.len() as f64 + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="22" font-size="15">{}</text>"#, escape(title));
    for (i, (name, value)) in bars.iter().enumerate() {
        let y = TOP + ROW * i as f64;
        let w = if value.is_finite() {
            (value.max(0.0) * scale).max(0.0)
        } else {
            0.0
        };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 6.0,
            y + 15.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{LABEL_W}" y="{}" width="{w:.2}" height="{}" fill="#4878a8"/>"##,
            y + 3.0,
            ROW - 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}">{}</text>"#,
            LABEL_W + w + 4.0,
            y + 15.0,
            format_value(*value)
        );
    }
    if let Some(r) = reference {
        let x = LABEL_W + r * scale;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#c03030" stroke-dasharray="4 3"/>"##,
            TOP - 4.0,
            height - 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

/// Square matrix as CSV with a header row and a leading name column. NaN
/// entries are written as `NaN`.
pub fn matrix_csv(names: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("feature");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (name, row) in names.iter().zip(matrix) {
        out.push_str(name);
        for v in row {
            out.push(',');
            if v.is_nan() {
                out.push_str("NaN");
            } else {
                let _ = write!(out, "{v:.6}");
            }
        }
        out.push('\n');
    }
    out
}
