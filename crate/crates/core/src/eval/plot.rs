//! Static SVG line charts of RMSE against node count.

use std::fmt::Write;

use super::report::{EvalReport, Task};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

/// One series per scenario (solid) plus its zero baseline (dashed).
pub fn rmse_plot(report: &EvalReport, task: Task) -> String {
    let ds = report.node_counts();
    let scenarios = report.scenarios();
    let points = |f: &dyn Fn(&super::report::Aggregate) -> f64, s| -> Vec<(usize, f64)> {
        ds.iter()
            .enumerate()
            .filter_map(|(k, &d)| report.aggregate(task, s, d).map(|a| (k, f(a))))
            .collect()
    };
    let y_max = report
        .aggregates
        .iter()
        .filter(|a| a.task == task)
        .flat_map(|a| [a.mean, a.baseline_mean])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x_of = |k: usize| MARGIN + if ds.len() > 1 { plot_w * k as f64 / (ds.len() - 1) as f64 } else { plot_w / 2.0 };
    let y_of = |v: f64| HEIGHT - MARGIN - plot_h * (v / y_max);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{} RMSE</text>"#, WIDTH / 2.0, task.name());
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for (k, d) in ds.iter().enumerate() {
        let x = x_of(k);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#, y0 + 18.0);
    }
    for t in 0..=4 {
        let v = y_max * t as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, x0 - 6.0, y + 4.0);
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/>"##);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">nodes</text>"#, WIDTH / 2.0, HEIGHT - 16.0);
    for (i, &s) in scenarios.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (pts, dash) in [(points(&|a| a.mean, s), ""), (points(&|a| a.baseline_mean, s), r#" stroke-dasharray="5,4""#)] {
            let path: Vec<String> = pts.iter().map(|&(k, v)| format!("{:.1},{:.1}", x_of(k), y_of(v))).collect();
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#, path.join(" "));
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, x1 - 110.0, x1 - 90.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x1 - 84.0, ly + 4.0, s.name());
    }
    svg.push_str("</svg>\n");
    svg
}
