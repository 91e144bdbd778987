//! SVG precision-recall and F-threshold curves.

use std::fmt::Write;

use crate::metrics::PrSweep;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Axes {
    title: &'static str,
    x_label: &'static str,
    y_label: &'static str,
    x_max: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN + x / self.x_max * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - y.clamp(0.0, 1.0) * (H - 2.0 * MARGIN)
    }
}

fn render(axes: &Axes, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, axes.title);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (x, y) = (axes.px(f * axes.x_max), axes.py(f));
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, axes.py(0.0), axes.py(1.0));
        let _ = writeln!(s, r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, axes.px(0.0), axes.px(axes.x_max));
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - MARGIN + 14.0, fmt_tick(f * axes.x_max));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{f:.1}</text>"#, MARGIN - 4.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, axes.x_label);
    let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, axes.y_label);
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = MARGIN + 14.0 + 14.0 * i as f64;
        let lx = W - MARGIN - 110.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 18.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 22.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Precision against recall, one polyline per labelled sweep.
pub fn pr_curve_svg(curves: &[(String, PrSweep)]) -> String {
    let axes = Axes { title: "Precision-recall", x_label: "recall", y_label: "precision", x_max: 1.0 };
    let pts: Vec<_> = curves
        .iter()
        .map(|(l, c)| (l.clone(), c.recall.iter().copied().zip(c.precision.iter().copied()).collect()))
        .collect();
    render(&axes, &pts)
}

/// F-measure against the 8-bit binarization threshold.
pub fn f_curve_svg(curves: &[(String, PrSweep)]) -> String {
    let axes = Axes { title: "F-measure by threshold", x_label: "threshold", y_label: "F", x_max: 255.0 };
    let pts: Vec<_> = curves
        .iter()
        .map(|(l, c)| (l.clone(), c.thresholds.iter().map(|&t| t as f64).zip(c.f_beta.iter().copied()).collect()))
        .collect();
    render(&axes, &pts)
}
