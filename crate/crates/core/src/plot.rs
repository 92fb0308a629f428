//! Static SVG renderings of a decoding run: marker trajectories, the
//! attention probability timeline and the marker-plane scatter with the
//! SVM boundary.

use std::fmt::Write;

use crate::classify::Speaker;
use crate::pipeline::DecodingResult;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 36.0, 48.0); // left, right, top, bottom
const BLUE: &str = "#1f77b4";
const ORANGE: &str = "#d62728";
const GREY: &str = "#7f7f7f";

fn speaker_color(s: Speaker) -> &'static str {
    match s {
        Speaker::One => BLUE,
        Speaker::Two => ORANGE,
    }
}

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn covering(values: impl IntoIterator<Item = f64>) -> Self {
        let (lo, hi) = values
            .into_iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
        Self {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn fixed(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|k| k as f64 * step).collect()
    }
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Chart {
    x: Range,
    y: Range,
    body: String,
    legend: Vec<(String, &'static str)>,
}

impl Chart {
    fn new(x: Range, y: Range) -> Self {
        Self {
            x,
            y,
            body: String::new(),
            legend: Vec::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        let (l, r, _, _) = MARGIN;
        l + (x - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - l - r)
    }

    fn py(&self, y: f64) -> f64 {
        let (_, _, t, b) = MARGIN;
        HEIGHT - b - (y - self.y.lo) / (self.y.hi - self.y.lo) * (HEIGHT - t - b)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            coords.join(" ")
        );
    }

    fn steps(&mut self, pts: &[(f64, f64)], dx: f64, color: &str, dashed: bool) {
        let expanded: Vec<(f64, f64)> =
            pts.iter().flat_map(|&(x, y)| [(x, y), (x + dx, y)]).collect();
        self.polyline(&expanded, color, dashed);
    }

    fn dot(&mut self, x: f64, y: f64, color: &str, hollow: bool) {
        let fill = if hollow { "none" } else { color };
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{fill}" stroke="{color}"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    fn key(&mut self, text: &str, color: &'static str) {
        self.legend.push((text.into(), color));
    }

    fn render(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let (l, r, t, b) = MARGIN;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        for tx in self.x.ticks() {
            let x = self.px(tx);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{t}" x2="{x:.2}" y2="{:.2}" stroke="gainsboro"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                HEIGHT - b,
                HEIGHT - b + 14.0,
                label(tx)
            );
        }
        for ty in self.y.ticks() {
            let y = self.py(ty);
            let _ = writeln!(
                s,
                r#"<line x1="{l}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="gainsboro"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                WIDTH - r,
                l - 4.0,
                y + 4.0,
                label(ty)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{l}" y="{t}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            WIDTH - l - r,
            HEIGHT - t - b
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (l + WIDTH - r) / 2.0,
            HEIGHT - 10.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (t + HEIGHT - b) / 2.0,
            escape(ylabel)
        );
        let _ = writeln!(
            s,
            r#"<clipPath id="plot"><rect x="{l}" y="{t}" width="{:.2}" height="{:.2}"/></clipPath>"#,
            WIDTH - l - r,
            HEIGHT - t - b
        );
        let _ = writeln!(s, r#"<g clip-path="url(#plot)">"#);
        s.push_str(&self.body);
        s.push_str("</g>\n");
        for (i, (text, color)) in self.legend.iter().enumerate() {
            let y = t + 14.0 + 14.0 * i as f64;
            let x = WIDTH - r - 150.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
                y - 9.0,
                x + 14.0,
                escape(text)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Test-block marker trajectories for both speakers.
pub fn markers_svg(res: &DecodingResult, trial_sec: f64) -> String {
    let t = |i: usize| i as f64 * trial_sec;
    let x = Range::fixed(0.0, t(res.test.len().max(1)));
    let y = Range::covering(res.test.iter().flat_map(|r| r.markers));
    let mut c = Chart::new(x, y);
    for (k, color) in [(0, BLUE), (1, ORANGE)] {
        let pts: Vec<(f64, f64)> = res.test.iter().enumerate().map(|(i, r)| (t(i), r.markers[k])).collect();
        c.polyline(&pts, color, false);
    }
    c.key("speaker 1 marker", BLUE);
    c.key("speaker 2 marker", ORANGE);
    c.render(
        &format!("Attention markers ({})", res.estimator.name()),
        "test time (s)",
        "|N1 - P2|",
    )
}

/// P(speaker 1 attended) over the test block, with the true attention as a
/// dashed 0/1 step.
pub fn probability_svg(res: &DecodingResult, trial_sec: f64) -> String {
    let t = |i: usize| i as f64 * trial_sec;
    let mut c = Chart::new(Range::fixed(0.0, t(res.test.len().max(1))), Range::fixed(-0.05, 1.05));
    let truth: Vec<(f64, f64)> = res
        .test
        .iter()
        .enumerate()
        .map(|(i, r)| (t(i), if r.attended == Speaker::One { 1.0 } else { 0.0 }))
        .collect();
    c.steps(&truth, trial_sec, GREY, true);
    c.polyline(&[(0.0, 0.5), (t(res.test.len()), 0.5)], GREY, false);
    let p: Vec<(f64, f64)> = res.test.iter().enumerate().map(|(i, r)| (t(i), r.probability)).collect();
    c.steps(&p, trial_sec, BLUE, false);
    c.key("P(speaker 1)", BLUE);
    c.key("attended = speaker 1", GREY);
    c.render(
        &format!("Attention probability ({}, accuracy {:.1}%)", res.estimator.name(), res.accuracy),
        "test time (s)",
        "probability",
    )
}

/// Marker plane with training (hollow) and test (filled) trials coloured by
/// the attended speaker, and the line w·x + b = 0.
pub fn scatter_svg(res: &DecodingResult) -> String {
    let all = || res.train.iter().chain(&res.test);
    let x = Range::covering(all().map(|r| r.markers[0]));
    let y = Range::covering(all().map(|r| r.markers[1]));
    let mut c = Chart::new(x, y);
    for (records, hollow) in [(&res.train, true), (&res.test, false)] {
        for r in records {
            c.dot(r.markers[0], r.markers[1], speaker_color(r.attended), hollow);
        }
    }
    let [w0, w1] = res.svm_weights;
    let b = res.svm_bias;
    let boundary = if w1.abs() >= w0.abs() && w1 != 0.0 {
        let at = |xv: f64| (xv, -(w0 * xv + b) / w1);
        Some([at(x.lo), at(x.hi)])
    } else if w0 != 0.0 {
        let at = |yv: f64| (-(w1 * yv + b) / w0, yv);
        Some([at(y.lo), at(y.hi)])
    } else {
        None
    };
    if let Some(line) = boundary {
        c.polyline(&line, "black", true);
    }
    c.key("attended speaker 1", BLUE);
    c.key("attended speaker 2", ORANGE);
    c.render(
        &format!("Marker plane ({})", res.estimator.name()),
        "speaker 1 marker",
        "speaker 2 marker",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let r = Range::fixed(-0.03, 1.07);
        let t = r.ticks();
        assert_eq!(t.first().copied(), Some(0.0));
        assert!(t.iter().all(|v| (r.lo..=r.hi).contains(v)));
        assert_eq!(label(0.2 + 0.1), "0.3");
        assert_eq!(label(-0.0), "0");
    }

    #[test]
    fn degenerate_range_is_widened() {
        let r = Range::covering([2.0, 2.0]);
        assert!(r.hi > r.lo);
        let empty = Range::covering(std::iter::empty());
        assert_eq!((empty.lo, empty.hi), (0.0, 1.0));
    }
}
