//! Minimal SVG line charts with shaded confidence bands.

use std::fmt::Write;

use super::ExperimentReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Win-fraction chart: one line per controller, CI band around it.
pub fn win_chart(report: &ExperimentReport, x_label: &str) -> String {
    let xs: Vec<f64> = report.points.iter().map(|p| p.sweep_point as f64).collect();
    let (x0, x1) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let y_max = report
        .points
        .iter()
        .flat_map(|p| p.controllers.iter().map(|c| c.win_ci_hi))
        .fold(0.0_f64, f64::max)
        .clamp(0.05, 1.0);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (1.0 - y.clamp(0.0, y_max) / y_max) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (bx, by) = (H - BOTTOM, W - RIGHT);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{bx}" x2="{by}" y2="{bx}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bx}" stroke="black"/>"#);
    for &x in &xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            px(x),
            bx + 16.0
        );
    }
    for k in 0..=4 {
        let y = y_max * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}%</text>"#,
            LEFT - 6.0,
            py(y) + 4.0,
            100.0 * y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">win percentage</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (ci, name) in report.controllers.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let stats: Vec<(f64, f64, f64, f64)> = report
            .points
            .iter()
            .filter_map(|p| {
                p.stats(name)
                    .map(|c| (p.sweep_point as f64, c.win_mean, c.win_ci_lo, c.win_ci_hi))
            })
            .collect();
        let mut band: Vec<String> = stats.iter().map(|&(x, _, _, hi)| format!("{:.1},{:.1}", px(x), py(hi))).collect();
        band.extend(stats.iter().rev().map(|&(x, _, lo, _)| format!("{:.1},{:.1}", px(x), py(lo))));
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = stats.iter().map(|&(x, m, _, _)| format!("{:.1},{:.1}", px(x), py(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = TOP + 10.0 + 18.0 * ci as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
