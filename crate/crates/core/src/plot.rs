//! SVG learning-curve plots.

use std::fmt::Write as _;

use crate::crossover::LearningCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// mAP@0.5 against training samples (log scale) for every curve, with the
/// zero-shot score as a dashed horizontal line.
pub fn learning_curve_svg(title: &str, curves: &[&LearningCurve], zero_shot_map50: f64) -> String {
    let samples: Vec<u32> = curves
        .iter()
        .flat_map(|c| c.points.keys().copied())
        .collect();
    let lo = samples.iter().copied().min().unwrap_or(1).max(1) as f64;
    let hi = (samples.iter().copied().max().unwrap_or(2) as f64).max(lo * 2.0);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |s: f64| MARGIN_LEFT + (s.ln() - lo.ln()) / (hi.ln() - lo.ln()) * plot_w;
    let sy = |m: f64| MARGIN_TOP + (1.0 - m.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    // axes
    let (x0, x1, y0, y1) = (
        MARGIN_LEFT,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP,
        MARGIN_TOP + plot_h,
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y0} V{y1} H{x1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let m = i as f64 / 5.0;
        let y = sy(m);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{m:.1}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    let mut ticks: Vec<u32> = samples.clone();
    ticks.sort_unstable();
    ticks.dedup();
    for t in ticks {
        let x = sx(t as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.1}" y1="{y1}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{t}</text>"#,
            y1 + 5.0,
            y1 + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">training samples</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mAP@0.5</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    let zy = sy(zero_shot_map50);
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{zy:.1}" x2="{x1}" y2="{zy:.1}" stroke="black" stroke-dasharray="6 4"/>"#
    );
    let legend_x = x1 + 12.0;
    let _ = writeln!(
        svg,
        r#"<line x1="{legend_x}" y1="{y0}" x2="{}" y2="{y0}" stroke="black" stroke-dasharray="6 4"/><text x="{}" y="{}">zero-shot ({zero_shot_map50:.3})</text>"#,
        legend_x + 20.0,
        legend_x + 26.0,
        y0 + 4.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|(&s, &m)| format!("{:.1},{:.1}", sx(s as f64), sy(m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for (&s, &m) in &c.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(s as f64),
                sy(m)
            );
        }
        let ly = y0 + 20.0 * (i as f64 + 1.0);
        let _ = writeln!(
            svg,
            r#"<line x1="{legend_x}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            legend_x + 20.0,
            legend_x + 26.0,
            ly + 4.0,
            escape(&c.model)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
