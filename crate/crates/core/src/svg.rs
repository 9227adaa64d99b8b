//! Minimal deterministic SVG charts: line plots with reference lines,
//! histograms and scatter plots. Coordinates are printed with fixed
//! precision so identical inputs give byte-identical files.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#555555"];

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.04 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            return (a..=b).map(|e| (10f64.powi(e), format!("1e{e}"))).collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let mut out = Vec::new();
        let mut v = (self.lo / step).ceil() * step;
        while v <= self.hi + 1e-9 * step {
            out.push((v, format!("{}", (v / step).round() * step)));
            v += step;
        }
        out
    }
}

struct Frame {
    x: Axis,
    y: Axis,
}

impl Frame {
    fn px(&self, x: f64) -> Option<f64> {
        self.x.frac(x).map(|f| LEFT + f * (WIDTH - LEFT - RIGHT))
    }

    fn py(&self, y: f64) -> Option<f64> {
        self.y.frac(y).map(|f| HEIGHT - BOTTOM - f * (HEIGHT - TOP - BOTTOM))
    }

    fn begin(&self, title: &str, x_label: &str, y_label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for (v, label) in self.x.ticks() {
            if let Some(px) = self.px(v) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{px:.2}" y1="{y0:.1}" x2="{px:.2}" y2="{:.1}" stroke="black"/>"#,
                    y0 + 5.0
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{px:.2}" y="{:.1}" text-anchor="middle">{label}</text>"#,
                    y0 + 18.0
                );
            }
        }
        for (v, label) in self.y.ticks() {
            if let Some(py) = self.py(v) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.1}" y1="{py:.2}" x2="{x0:.1}" y2="{py:.2}" stroke="black"/>"#,
                    x0 - 5.0
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{label}</text>"#,
                    x0 - 8.0,
                    py + 4.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone)]
pub struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub width: f64,
}

#[derive(Debug, Clone)]
pub struct RefLine {
    pub label: String,
    pub value: f64,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub lines: Vec<Line>,
    pub horizontal: Vec<RefLine>,
    pub vertical: Vec<RefLine>,
}

fn legend(s: &mut String, row: usize, color: &str, label: &str, dashed: bool) {
    let x = WIDTH - RIGHT + 12.0;
    let y = TOP + 14.0 + 18.0 * row as f64;
    let dash = if dashed { r#" stroke-dasharray="5,4""# } else { "" };
    let _ = writeln!(
        s,
        r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"{dash}/>"#,
        x + 22.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
        x + 28.0,
        y + 4.0,
        escape(label)
    );
}

impl LinePlot {
    pub fn render(&self) -> String {
        let xs = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.0))
            .chain(self.vertical.iter().map(|r| r.value));
        let ys = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.1))
            .chain(self.horizontal.iter().map(|r| r.value));
        let frame = Frame {
            x: Axis::fit(xs, self.log_x),
            y: Axis::fit(ys, self.log_y),
        };
        let mut s = frame.begin(&self.title, &self.x_label, &self.y_label);
        let mut row = 0;
        for (i, line) in self.lines.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = line
                .points
                .iter()
                .filter_map(|&(x, y)| Some(format!("{:.2},{:.2}", frame.px(x)?, frame.py(y)?)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="{:.1}" points="{}"/>"#,
                line.width,
                pts.join(" ")
            );
            legend(&mut s, row, color, &line.label, false);
            row += 1;
        }
        for (i, r) in self.horizontal.iter().enumerate() {
            let color = PALETTE[(self.lines.len() + i) % PALETTE.len()];
            if let Some(py) = frame.py(r.value) {
                let dash = if r.dashed { r#" stroke-dasharray="5,4""# } else { "" };
                let _ = writeln!(
                    s,
                    r#"<line x1="{LEFT:.1}" y1="{py:.2}" x2="{:.1}" y2="{py:.2}" stroke="{color}"{dash}/>"#,
                    WIDTH - RIGHT
                );
            }
            legend(&mut s, row, color, &r.label, r.dashed);
            row += 1;
        }
        for r in &self.vertical {
            if let Some(px) = frame.px(r.value) {
                let _ = writeln!(
                    s,
                    r##"<line x1="{px:.2}" y1="{TOP:.1}" x2="{px:.2}" y2="{:.1}" stroke="#777777" stroke-dasharray="2,3"/>"##,
                    HEIGHT - BOTTOM
                );
            }
            legend(&mut s, row, "#777777", &r.label, true);
            row += 1;
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Equal-width histogram counts over `[lo, hi]`.
pub fn histogram_counts(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        hi = lo + 1e-6;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

pub fn histogram(title: &str, x_label: &str, values: &[f64], bins: usize, reference: Option<f64>) -> String {
    let counts = histogram_counts(values, bins);
    let max_count = counts.iter().map(|c| c.2).max().unwrap_or(1) as f64;
    let xs = counts.iter().flat_map(|c| [c.0, c.1]).chain(reference);
    let frame = Frame {
        x: Axis::fit(xs, false),
        y: Axis {
            lo: 0.0,
            hi: max_count * 1.05,
            log: false,
        },
    };
    let mut s = frame.begin(title, x_label, "count");
    for (a, b, c) in &counts {
        if let (Some(x0), Some(x1), Some(y0), Some(y1)) =
            (frame.px(*a), frame.px(*b), frame.py(0.0), frame.py(*c as f64))
        {
            let _ = writeln!(
                s,
                r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="#1f4e9c" fill-opacity="0.7" stroke="white"/>"##,
                x1 - x0,
                y0 - y1
            );
        }
    }
    if let Some(px) = reference.and_then(|r| frame.px(r)) {
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{TOP:.1}" x2="{px:.2}" y2="{:.1}" stroke="#c0392b" stroke-dasharray="5,4"/>"##,
            HEIGHT - BOTTOM
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], reference_y: Option<f64>) -> String {
    let frame = Frame {
        x: Axis::fit(points.iter().map(|p| p.0), false),
        y: Axis::fit(points.iter().map(|p| p.1).chain(reference_y), false),
    };
    let mut s = frame.begin(title, x_label, y_label);
    for &(x, y) in points {
        if let (Some(px), Some(py)) = (frame.px(x), frame.py(y)) {
            let _ = writeln!(
                s,
                r##"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="#1f4e9c" fill-opacity="0.6"/>"##
            );
        }
    }
    if let Some(py) = reference_y.and_then(|r| frame.py(r)) {
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.1}" y1="{py:.2}" x2="{:.1}" y2="{py:.2}" stroke="#c0392b" stroke-dasharray="5,4"/>"##,
            WIDTH - RIGHT
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_deterministic_and_well_formed() {
        let plot = LinePlot {
            title: "a < b".into(),
            x_label: "n".into(),
            y_label: "msfe".into(),
            log_x: true,
            log_y: true,
            lines: vec![Line {
                label: "curve".into(),
                points: vec![(1.0, 2.0), (10.0, 0.5), (100.0, 1.0)],
                width: 1.5,
            }],
            horizontal: vec![RefLine {
                label: "base".into(),
                value: 1.2,
                dashed: true,
            }],
            vertical: vec![RefLine {
                label: "T".into(),
                value: 10.0,
                dashed: true,
            }],
        };
        let a = plot.render();
        assert_eq!(a, plot.render());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &lt; b"));
        assert!(a.contains("polyline"));
    }

    #[test]
    fn histogram_counts_cover_everything() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let c = histogram_counts(&v, 7);
        assert_eq!(c.iter().map(|x| x.2).sum::<usize>(), 100);
        assert!(histogram("h", "x", &v, 7, Some(1.0)).contains("<rect"));
        assert!(scatter("s", "x", "y", &[(0.0, 1.0), (1.0, 0.5)], Some(1.0)).contains("circle"));
    }
}
