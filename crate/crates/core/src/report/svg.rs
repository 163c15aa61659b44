//! Hand-written SVG charts with a fixed 16:9 canvas and stable element order.

use std::fmt::Write as _;

use crate::estimator::Classification;

use super::format::format_number;

pub const WIDTH: f64 = 1600.0;
pub const HEIGHT: f64 = 900.0;

const LEFT: f64 = 180.0;
const RIGHT: f64 = 60.0;
const TOP: f64 = 80.0;
const BOTTOM: f64 = 100.0;

const PALETTE: [&str; 6] = ["#1b6ca8", "#e07b39", "#3a9a5b", "#8e5ea2", "#c9a227", "#6b6b6b"];

pub fn class_color(c: Classification) -> &'static str {
    match c {
        Classification::Negative => "#c0392b",
        Classification::Null => "#222222",
        Classification::Positive => "#2471a3",
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="40" font-size="28" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );
    s
}

/// `lo..hi` widened to include zero and padded by 5% on each side.
fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = (lo.min(0.0), hi.max(0.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let n = 5;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// One row of a forest plot.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestRow {
    pub label: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub class: Classification,
}

/// Point and interval per row, top to bottom in input order, with a zero line.
pub fn forest_svg(title: &str, x_label: &str, rows: &[ForestRow]) -> String {
    let finite = rows
        .iter()
        .flat_map(|r| [r.ci_low, r.ci_high, r.estimate])
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = padded_range(lo, hi);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |v: f64| LEFT + (v.clamp(lo, hi) - lo) / (hi - lo) * plot_w;
    let step = plot_h / rows.len().max(1) as f64;

    let mut s = header(title);
    for t in ticks(lo, hi) {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#dddddd"/>"##,
            x(t),
            TOP,
            TOP + plot_h
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="16" text-anchor="middle">{}</text>"#,
            x(t),
            TOP + plot_h + 28.0,
            esc(&format_number(t))
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#000000" stroke-dasharray="6,4"/>"##,
        x(0.0),
        TOP,
        TOP + plot_h
    );
    for (i, r) in rows.iter().enumerate() {
        let y = TOP + step * (i as f64 + 0.5);
        let color = class_color(r.class);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="16" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LEFT - 12.0,
            y,
            esc(&r.label)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3" class="{}"/>"#,
            x(r.ci_low),
            x(r.ci_high),
            r.class.as_str()
        );
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{y:.2}" r="6" fill="{color}" class="{}"/>"#,
            x(r.estimate),
            r.class.as_str()
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" font-size="20" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 30.0,
        esc(x_label)
    );
    s.push_str("</svg>\n");
    s
}

/// One bar of a grouped bar chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub group: String,
    pub series: String,
    pub value: f64,
}

/// Bars grouped by `group`, one colour per `series`; both in first-appearance order.
pub fn grouped_bars_svg(title: &str, y_label: &str, bars: &[Bar]) -> String {
    let mut groups: Vec<&str> = Vec::new();
    let mut series: Vec<&str> = Vec::new();
    for b in bars {
        if !groups.contains(&b.group.as_str()) {
            groups.push(&b.group);
        }
        if !series.contains(&b.series.as_str()) {
            series.push(&b.series);
        }
    }
    let finite = bars.iter().map(|b| b.value).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = padded_range(lo, hi);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y = |v: f64| TOP + (hi - v.clamp(lo, hi)) / (hi - lo) * plot_h;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;

    let mut s = header(title);
    for t in ticks(lo, hi) {
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="#dddddd"/>"##,
            LEFT,
            y(t),
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="16" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LEFT - 10.0,
            y(t),
            esc(&format_number(t))
        );
    }
    for b in bars {
        let gi = groups.iter().position(|g| *g == b.group).unwrap();
        let si = series.iter().position(|s| *s == b.series).unwrap();
        let x0 = LEFT + gi as f64 * group_w + 0.1 * group_w + si as f64 * bar_w;
        let v = if b.value.is_finite() { b.value } else { 0.0 };
        let (top, bottom) = (y(v.max(0.0)), y(v.min(0.0)));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{top:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"><title>{} {}: {}</title></rect>"#,
            bottom - top,
            PALETTE[si % PALETTE.len()],
            esc(&b.group),
            esc(&b.series),
            esc(&format_number(b.value))
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="#000000"/>"##,
        LEFT,
        y(0.0),
        LEFT + plot_w
    );
    for (gi, g) in groups.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="16" text-anchor="middle">{}</text>"#,
            LEFT + (gi as f64 + 0.5) * group_w,
            TOP + plot_h + 28.0,
            esc(g)
        );
    }
    for (si, name) in series.iter().enumerate() {
        let lx = LEFT + si as f64 * 180.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="18" height="18" fill="{}"/>"#,
            HEIGHT - 42.0,
            PALETTE[si % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="16">{}</text>"#,
            lx + 26.0,
            HEIGHT - 27.0,
            esc(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="30" y="{:.2}" font-size="20" text-anchor="middle" transform="rotate(-90 30 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        esc(y_label)
    );
    s.push_str("</svg>\n");
    s
}
