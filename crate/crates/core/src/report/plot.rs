//! Static SVG 1.1 figures, written by hand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::export::MetricsRow;
use crate::error::Result;
use crate::marl::Trajectory;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(svg: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x1 - self.x0).max(f64::MIN_POSITIVE);
        LEFT + (x - self.x0) / span * (self.width - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y1 - self.y0).max(f64::MIN_POSITIVE);
        self.height - BOTTOM - (y - self.y0) / span * (self.height - TOP - BOTTOM)
    }

    fn axes(&self, svg: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r) = (LEFT, self.width - RIGHT);
        let (t, b) = (TOP, self.height - BOTTOM);
        let _ = writeln!(svg, r#"<g stroke="black" stroke-width="1"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#);
        let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="11">"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let (x, y) = (self.px(xv), self.py(yv));
            let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{}" stroke="black"/>"#, b + 4.0);
            let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, b + 17.0, fmt_tick(xv));
            let _ = writeln!(svg, r#"<line x1="{}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="black"/>"#, l - 4.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 7.0, y + 4.0, fmt_tick(yv));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, self.height - 12.0, escape(xlabel));
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (t + b) / 2.0,
            escape(ylabel)
        );
        let _ = writeln!(svg, "</g>");
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, lo + 0.5);
    }
    (lo, hi)
}

/// Line chart of `y` against episode; the polyline has one point per row.
pub fn line_chart(rows: &[MetricsRow], title: &str, ylabel: &str, y: impl Fn(&MetricsRow) -> f64) -> String {
    let (x0, x1) = range(rows.iter().map(|r| r.episode as f64));
    let (lo, hi) = rows.iter().map(&y).fold((0.0f64, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let y1 = if hi > lo { hi } else { lo + 1.0 };
    let frame = Frame { x0, x1, y0: lo, y1, width: W, height: H };
    let mut svg = String::new();
    open(&mut svg, W, H, title);
    frame.axes(&mut svg, "episode", ylabel);
    let pts: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", frame.px(r.episode as f64), frame.py(y(r)))).collect();
    let _ = writeln!(svg, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##, pts.join(" "));
    svg.push_str("</svg>\n");
    svg
}

/// x–y projection of each trajectory, one polyline per agent.
pub fn trajectory_chart(trajectories: &[Trajectory], dims: [usize; 2], title: &str) -> String {
    let side = 560.0;
    let frame = Frame {
        x0: 0.0,
        x1: dims[0].saturating_sub(1).max(1) as f64,
        y0: 0.0,
        y1: dims[1].saturating_sub(1).max(1) as f64,
        width: side + LEFT + RIGHT - 60.0,
        height: side,
    };
    let mut svg = String::new();
    open(&mut svg, frame.width, frame.height, title);
    frame.axes(&mut svg, "x", "y");
    for t in trajectories {
        let color = PALETTE[t.agent % PALETTE.len()];
        let pts: Vec<String> = t.path.iter().map(|p| format!("{:.2},{:.2}", frame.px(p[0] as f64), frame.py(p[1] as f64))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-agent="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            t.agent,
            pts.join(" ")
        );
        if let Some(p) = t.path.first() {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, frame.px(p[0] as f64), frame.py(p[1] as f64));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Shade for `count` out of `max`: white at zero, darkening monotonically.
pub fn heat_fill(count: u32, max: u32) -> String {
    let f = if max == 0 { 0.0 } else { f64::from(count) / f64::from(max) };
    let gb = (255.0 * (1.0 - f)).round() as u8;
    let r = (255.0 - 75.0 * f).round() as u8;
    format!("rgb({r},{gb},{gb})")
}

/// Visit-count grid indexed `[x][y]`, drawn with y increasing upwards.
pub fn heatmap_chart(heat: &[Vec<u32>], title: &str) -> String {
    let nx = heat.len().max(1);
    let ny = heat.first().map_or(1, Vec::len).max(1);
    let cell = (480.0 / nx.max(ny) as f64).max(2.0);
    let width = LEFT + RIGHT + cell * nx as f64;
    let height = TOP + BOTTOM + cell * ny as f64;
    let max = heat.iter().flatten().copied().max().unwrap_or(0);
    let mut svg = String::new();
    open(&mut svg, width, height, title);
    let _ = writeln!(svg, r#"<g stroke="none">"#);
    for (x, col) in heat.iter().enumerate() {
        for (y, &c) in col.iter().enumerate() {
            let px = LEFT + cell * x as f64;
            let py = height - BOTTOM - cell * (y + 1) as f64;
            let _ = writeln!(
                svg,
                r#"<rect x="{px:.2}" y="{py:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}" data-count="{c}"/>"#,
                heat_fill(c, max)
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    let frame = Frame { x0: 0.0, x1: nx as f64, y0: 0.0, y1: ny as f64, width, height };
    frame.axes(&mut svg, "x", "y");
    svg.push_str("</svg>\n");
    svg
}

/// Accumulates `[x][y]` visit counts from trajectory paths.
pub fn visit_heatmap(trajectories: &[Trajectory], dims: [usize; 2]) -> Vec<Vec<u32>> {
    let mut heat = vec![vec![0u32; dims[1]]; dims[0]];
    for p in trajectories.iter().flat_map(|t| &t.path) {
        if let (Ok(x), Ok(y)) = (usize::try_from(p[0]), usize::try_from(p[1])) {
            if x < dims[0] && y < dims[1] {
                heat[x][y] += 1;
            }
        }
    }
    heat
}

/// Names of the five figures, in emission order.
pub const PLOT_FILES: [&str; 5] = ["kl.svg", "violations.svg", "entropy.svg", "trajectories.svg", "heatmap.svg"];

/// Writes the figures into `dir`. Returns the paths written; nothing is
/// written when `rows` is empty. The trajectory and heatmap figures are
/// skipped when `trajectories` is empty.
pub fn emit_plots(dir: &Path, rows: &[MetricsRow], trajectories: &[Trajectory], heat: &[Vec<u32>]) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("kl.svg", line_chart(rows, "KL divergence of plan distribution to prior", "KL (nats)", |r| r.kl_nats))?;
    put("violations.svg", line_chart(rows, "Safety violations per episode", "violations", |r| r.violations as f64))?;
    put("entropy.svg", line_chart(rows, "Spike entropy per episode", "entropy (nats)", |r| r.spike_entropy_nats))?;
    if !trajectories.is_empty() {
        let dims = [heat.len(), heat.first().map_or(0, Vec::len)];
        let last = trajectories.iter().map(|t| t.episode).max().unwrap_or(0);
        let final_ep: Vec<Trajectory> = trajectories.iter().filter(|t| t.episode == last).cloned().collect();
        put("trajectories.svg", trajectory_chart(&final_ep, dims, &format!("Agent trajectories, episode {last}")))?;
        put("heatmap.svg", heatmap_chart(heat, "Visit frequency"))?;
    }
    Ok(written)
}
