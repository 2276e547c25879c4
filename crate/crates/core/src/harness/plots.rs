//! Static SVG charts for reports.

use std::fmt::Write;

use super::ExperimentReport;

const W: f64 = 560.0;
const H: f64 = 360.0;
const PAD: f64 = 56.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" y1="{y}" x2="{x}" y2="{y}" stroke="#000"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{y}" stroke="#000"/>"##,
        x = W - PAD / 2.0,
        y = H - PAD
    );
    s
}

fn fmt(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Median test loss and median bound (both `ε̂` variants) per grid point.
fn bound_chart(rep: &ExperimentReport) -> Option<String> {
    let pts: Vec<(f64, f64, f64, f64)> = rep
        .points
        .iter()
        .filter_map(|p| Some((p.n as f64, p.median_lhs?, p.median_rhs_eps0?, p.median_rhs_epshat?)))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let ymax = pts.iter().map(|p| p.1.max(p.2).max(p.3)).fold(0.0, f64::max).max(1e-300) * 1.1;
    let m = pts.len();
    let xs = |i: usize| PAD + (W - 1.5 * PAD) * if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
    let ys = |v: f64| H - PAD - (H - 2.0 * PAD) * v / ymax;
    let mut s = header(&format!("{}: test loss vs bound", rep.experiment));
    for (series, color, label) in [(1usize, "#1f77b4", "test loss"), (2, "#d62728", "bound, eps=0"), (3, "#2ca02c", "bound, eps-hat")] {
        let mut path = String::new();
        for (i, p) in pts.iter().enumerate() {
            let v = [p.0, p.1, p.2, p.3][series];
            let _ = write!(path, "{}{:.1},{:.1} ", if i == 0 { "M" } else { "L" }, xs(i), ys(v));
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, xs(i), ys(v));
        }
        let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let ly = PAD + 16.0 * series as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            W - 170.0,
            ly - 9.0,
            W - 155.0,
            ly
        );
    }
    for (i, p) in pts.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n={}</text>"#, xs(i), H - PAD + 18.0, p.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 4.0, PAD + 4.0, fmt(ymax));
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">0</text>"#, PAD - 4.0, H - PAD);
    s.push_str("</svg>\n");
    Some(s)
}

fn moment_chart(rep: &ExperimentReport) -> Option<String> {
    let bars = [
        ("E[h^4]", *rep.summary.get("moment_h4")?),
        ("E[h^2]^2", *rep.summary.get("moment_h2_sq")?),
        ("gap", *rep.summary.get("moment_gap")?),
    ];
    let ymax = bars.iter().map(|b| b.1).fold(0.0, f64::max) * 1.15;
    let mut s = header("moment gap");
    let bw = (W - 1.5 * PAD) / 4.0;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (H - 2.0 * PAD) * v / ymax;
        let x = PAD + bw * (0.5 + i as f64 * 1.1);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="#4c72b0"/>"##,
            H - PAD - h,
            bw * 0.8
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, x + bw * 0.4, H - PAD + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x + bw * 0.4, H - PAD - h - 4.0, fmt(*v));
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// `(file name, svg)` pairs applicable to the report.
pub fn render(rep: &ExperimentReport) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if rep.experiment != "concentration" {
        if let Some(s) = bound_chart(rep) {
            out.push(("bound_vs_loss.svg".to_string(), s));
        }
    }
    if let Some(s) = moment_chart(rep) {
        out.push(("moment_gap.svg".to_string(), s));
    }
    out
}
