//! CMC curves as a standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;

use crate::ConfigError;

pub struct Curve {
    pub label: String,
    /// `(rank, accuracy)` in file order.
    pub points: Vec<(usize, f64)>,
}

/// Parses a `rank,accuracy` CSV as written by `eval`.
pub fn read_cmc(path: &Path, label: String) -> Result<Curve> {
    let bad = |why: String| ConfigError(format!("{}: {why}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("rank,accuracy") {
        return Err(bad("expected header `rank,accuracy`".into()).into());
    }
    let mut points = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed = line.split_once(',').and_then(|(r, a)| Some((r.trim().parse().ok()?, a.trim().parse().ok()?)));
        match parsed {
            Some((r, a)) if r >= 1 && (0.0..=1.0).contains(&a) => points.push((r, a)),
            _ => return Err(bad(format!("line {}: cannot read {line:?}", n + 2)).into()),
        }
    }
    if points.is_empty() {
        return Err(bad("no data rows".into()).into());
    }
    Ok(Curve { label, points })
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(curves: &[Curve]) -> String {
    let max_rank = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).max().unwrap_or(1).max(2);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let x = |r: usize| LEFT + pw * (r - 1) as f64 / (max_rank - 1) as f64;
    let y = |a: f64| TOP + ph * (1.0 - a);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{x2:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="end">{a:.1}</text>"##,
            yy = y(a),
            x2 = LEFT + pw,
            tx = LEFT - 6.0,
            ty = y(a) + 4.0
        );
    }
    let step = (max_rank / 5).max(1);
    for r in (1..=max_rank).filter(|r| r == &1 || r % step == 0) {
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{ty:.2}" text-anchor="middle">{r}</text>"#,
            xx = x(r),
            ty = TOP + ph + 18.0
        );
    }
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{cx:.2}" y="{by:.2}" text-anchor="middle">Rank</text><text x="16" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 16 {cy:.2})">Matching rate</text>"#,
        cx = LEFT + pw / 2.0,
        by = HEIGHT - 10.0,
        cy = TOP + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.points.iter().map(|&(r, a)| format!("{:.2},{:.2}", x(r), y(a))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{lx2:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{tx:.2}" y="{ty:.2}">{}</text></g>"#,
            escape(&c.label),
            lx2 = lx + 20.0,
            tx = lx + 26.0,
            ty = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
