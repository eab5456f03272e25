//! Static SVG line plots of rejection rates against `Δ`.

use std::fmt::Write as _;

use crate::report::SimulationSection;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = [
    "#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#566573",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One series per statistic; returns `None` with fewer than two `Δ` values.
pub fn power_curves(sim: &SimulationSection) -> Option<String> {
    let mut names: Vec<&str> = Vec::new();
    for r in &sim.rejection {
        if !names.contains(&r.statistic.as_str()) {
            names.push(&r.statistic);
        }
    }
    let deltas: Vec<f64> = sim.rejection.iter().map(|r| r.delta).collect();
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let px = |d: f64| MARGIN + (d - lo) / (hi - lo) * (WIDTH - 2.0 * MARGIN);
    let py = |r: f64| HEIGHT - MARGIN - r * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{} (N reps = {})</text>"#,
        WIDTH / 2.0,
        escape(&sim.design),
        sim.reps
    );
    for k in 0..=5 {
        let r = k as f64 / 5.0;
        let y = py(r);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e5e5e5"/><text x="{:.1}" y="{:.1}" text-anchor="end">{r:.1}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y + 4.0
        );
    }
    for k in 0..=4 {
        let d = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{d:.2}</text>"#,
            px(d),
            HEIGHT - MARGIN + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">delta</text><text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">rejection rate</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (k, name) in names.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts: Vec<(f64, f64)> = sim
            .rejection
            .iter()
            .filter(|r| r.statistic == *name)
            .filter_map(|r| r.rate.map(|v| (r.delta, v)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts
            .iter()
            .map(|&(d, r)| format!("{:.1},{:.1}", px(d), py(r)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let y = MARGIN + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            MARGIN + 10.0,
            MARGIN + 30.0,
            MARGIN + 36.0,
            y + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}
