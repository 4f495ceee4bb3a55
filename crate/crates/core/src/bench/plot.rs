//! Static SVG charts rendered from the emitted CSV data.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Finite range padded so a flat series still spans some height.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        lo.abs().max(1.0) * 0.05
    };
    (lo - pad, hi + pad)
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y: (f64, f64), log_y: bool) {
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    let _ = writeln!(
        out,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let v = y.0 + t * (y.1 - y.0);
        let label = if log_y { 10f64.powf(v) } else { v };
        let py = y0 + t * (y1 - y0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{label:.3e}</text>"#,
            x0 - 6.0,
            py + 4.0
        );
        let _ = writeln!(
            out,
            r##"<path d="M{x0} {py:.1} L{x1} {py:.1}" stroke="#ddd"/>"##
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Bars for each `(label, value)`; `log_y` plots log10 of positive values.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)], log_y: bool) -> String {
    let tf = |v: f64| {
        if log_y {
            v.max(f64::MIN_POSITIVE).log10()
        } else {
            v
        }
    };
    let mut y = range(bars.iter().map(|b| tf(b.1)));
    if !log_y {
        y.0 = y.0.min(0.0);
    }
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "", y_label, y, log_y);
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / bars.len().max(1) as f64;
    let base = HEIGHT - MARGIN_B;
    let scale = (HEIGHT - MARGIN_T - MARGIN_B) / (y.1 - y.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let top = base - (tf(*v) - y.0) * scale;
        let x = MARGIN_L + slot * (i as f64 + 0.2);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            slot * 0.6,
            (base - top).max(0.0),
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.3,
            base + 16.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{v:.4e}</text>"#,
            x + slot * 0.3,
            top - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Polylines with a legend on the right; `log_y` plots log10 of positive
/// values and drops the rest.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
) -> String {
    let tf = |v: f64| {
        if log_y {
            if v > 0.0 {
                v.log10()
            } else {
                f64::NAN
            }
        } else {
            v
        }
    };
    let x = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y = range(series.iter().flat_map(|s| s.points.iter().map(|p| tf(p.1))));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, x_label, y_label, y, log_y);
    let sx = (WIDTH - MARGIN_L - MARGIN_R) / (x.1 - x.0);
    let sy = (HEIGHT - MARGIN_T - MARGIN_B) / (y.1 - y.0);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (px, py) in &s.points {
            let v = tf(*py);
            if !v.is_finite() || !px.is_finite() {
                continue;
            }
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            let _ = write!(
                d,
                "{cmd}{:.1} {:.1} ",
                MARGIN_L + (px - x.0) * sx,
                HEIGHT - MARGIN_B - (v - y.0) * sy
            );
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            out,
            r#"<path d="M{lx} {ly} L{} {ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}
