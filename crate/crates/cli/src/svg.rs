//! Minimal SVG output for scatter plots, trajectory overlays and curves.

use std::fmt::Write;

use vqbet::envs::{EnvKind, DETOUR_START, DETOUR_TARGET, FOUR_GOAL_POSITIONS, OBSTACLE_RADIUS, REACH_RADIUS};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 10] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps data coordinates into the plot square, y pointing up.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Frame { x: range(&mut xs.clone()), y: range(&mut ys.clone()) }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        (MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * w, SIZE - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * w)
    }

    fn scale(&self, r: f64) -> f64 {
        r / (self.x.1 - self.x.0) * (SIZE - 2.0 * MARGIN)
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, SIZE / 2.0, escape(title));
    s
}

fn axes(s: &mut String, f: &Frame) {
    let (x0, y0) = f.px(f.x.0, f.y.0);
    let (x1, y1) = f.px(f.x.1, f.y.1);
    let _ = writeln!(s, r##"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##, x1 - x0, y0 - y1);
    for (v, (x, y)) in [(f.x.0, (x0, y0 + 14.0)), (f.x.1, (x1, y0 + 14.0))] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.3}</text>"#);
    }
    for (v, y) in [(f.y.0, y0), (f.y.1, y1)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#, x0 - 4.0);
    }
}

/// Points colored by class.
pub fn scatter(title: &str, points: &[(f64, f64, usize)]) -> String {
    let f = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut s = open(title);
    axes(&mut s, &f);
    for &(x, y, c) in points {
        let (px, py) = f.px(x, y);
        let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#, color(c));
    }
    s.push_str("</svg>\n");
    s
}

/// Rollout paths over the environment layout, one color per episode.
pub fn trajectories(title: &str, env: EnvKind, paths: &[Vec<(f64, f64)>]) -> String {
    let f = Frame { x: (-1.0, 1.0), y: (-1.0, 1.0) };
    let mut s = open(title);
    axes(&mut s, &f);
    let circle = |s: &mut String, c: [f64; 2], r: f64, fill: &str| {
        let (x, y) = f.px(c[0], c[1]);
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="{fill}" fill-opacity="0.25" stroke="#333"/>"##, f.scale(r));
    };
    match env {
        EnvKind::FourGoal => {
            for g in FOUR_GOAL_POSITIONS {
                circle(&mut s, g, REACH_RADIUS, "#2ca02c");
            }
        }
        EnvKind::Detour => {
            circle(&mut s, [0.0, 0.0], OBSTACLE_RADIUS, "#d62728");
            circle(&mut s, DETOUR_START, 0.03, "#333");
            circle(&mut s, DETOUR_TARGET, REACH_RADIUS, "#2ca02c");
        }
    }
    for (i, p) in paths.iter().enumerate() {
        let pts: Vec<String> = p.iter().map(|&(x, y)| f.px(x, y)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-opacity="0.6" stroke-width="1.2"/>"#, pts.join(" "), color(i));
    }
    s.push_str("</svg>\n");
    s
}

/// Named series against a shared x axis.
pub fn curves(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let f = Frame::fit(all().map(|p| p.0), all().map(|p| p.1));
    let mut s = open(title);
    axes(&mut s, &f);
    for (i, (name, pts)) in series.iter().enumerate() {
        let line: Vec<String> = pts.iter().map(|&(x, y)| f.px(x, y)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, line.join(" "), color(i));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 14.0 * (i + 1) as f64,
            color(i),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
