//! Standalone SVG charts built from rectangles, lines and text only.
//! Both chart kinds plot accuracies, so the y axis is fixed to [0, 1].

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    pub name: String,
    /// One value per category.
    pub values: Vec<f64>,
    pub ci: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<BarSeries>,
    /// Named reference value per category, drawn as a marker line.
    pub reference: Option<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Optional shaded interval per point.
    pub band: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<LineSeries>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plot_height() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn y_px(v: f64) -> f64 {
    TOP + plot_height() * (1.0 - v.clamp(0.0, 1.0))
}

fn header(s: &mut String, title: &str, y_label: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + plot_height() / 2.0,
        escape(y_label)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = y_px(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
        TOP + plot_height()
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="black"/>"#,
        TOP + plot_height(),
        WIDTH - RIGHT
    );
}

fn legend(s: &mut String, entries: &[(String, &str, bool)]) {
    let x = WIDTH - RIGHT + 12.0;
    for (i, (name, color, dashed)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="4"{dash}/>"#,
            x + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            x + 24.0,
            y + 4.0,
            escape(name)
        );
    }
}

fn error_bar(s: &mut String, x: f64, (lo, hi): (f64, f64)) {
    let (y0, y1) = (y_px(lo), y_px(hi));
    let _ = writeln!(
        s,
        r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{y1:.1}" stroke="black"/>"#
    );
    for y in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black"/>"#,
            x - 4.0,
            x + 4.0
        );
    }
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        header(&mut s, &self.title, &self.y_label);
        let slot = (WIDTH - RIGHT - LEFT) / self.categories.len().max(1) as f64;
        let bar_w = 0.7 * slot / self.series.len().max(1) as f64;
        for (c, cat) in self.categories.iter().enumerate() {
            let x0 = LEFT + slot * c as f64 + 0.15 * slot;
            for (k, series) in self.series.iter().enumerate() {
                let v = series.values.get(c).copied().unwrap_or(f64::NAN);
                if !v.is_finite() {
                    continue;
                }
                let x = x0 + bar_w * k as f64;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                    y_px(v),
                    bar_w - 2.0,
                    y_px(0.0) - y_px(v),
                    PALETTE[k % PALETTE.len()]
                );
                if let Some(Some(ci)) = series.ci.get(c) {
                    error_bar(&mut s, x + (bar_w - 2.0) / 2.0, *ci);
                }
            }
            if let Some((_, refs)) = &self.reference {
                if let Some(&r) = refs.get(c) {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{x0:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="black" stroke-width="2" stroke-dasharray="5,3"/>"#,
                        y_px(r),
                        x0 + 0.7 * slot
                    );
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x0 + 0.35 * slot,
                TOP + plot_height() + 18.0,
                escape(cat)
            );
        }
        let mut entries: Vec<(String, &str, bool)> = self
            .series
            .iter()
            .enumerate()
            .map(|(k, sr)| (sr.name.clone(), PALETTE[k % PALETTE.len()], false))
            .collect();
        if let Some((name, _)) = &self.reference {
            entries.push((name.clone(), "black", true));
        }
        legend(&mut s, &entries);
        s.push_str("</svg>\n");
        s
    }
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        header(&mut s, &self.title, &self.y_label);
        let xs = self.series.iter().flat_map(|sr| sr.points.iter().map(|p| p.0));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
        let x_px = |x: f64| LEFT + (WIDTH - RIGHT - LEFT) * (x - lo) / (hi - lo);
        for (x, anchor) in [(lo, "start"), (hi, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{x}</text>"#,
                x_px(x),
                TOP + plot_height() + 18.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        for (k, sr) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let band: Vec<(f64, (f64, f64))> = sr
                .points
                .iter()
                .zip(&sr.band)
                .filter_map(|(p, b)| b.filter(|(l, h)| l.is_finite() && h.is_finite()).map(|b| (p.0, b)))
                .collect();
            if band.len() >= 2 {
                let upper = band.iter().map(|(x, (_, h))| format!("{:.1},{:.1}", x_px(*x), y_px(*h)));
                let lower = band.iter().rev().map(|(x, (l, _))| format!("{:.1},{:.1}", x_px(*x), y_px(*l)));
                let pts: Vec<String> = upper.chain(lower).collect();
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.15"/>"#,
                    pts.join(" ")
                );
            }
            let pts: Vec<String> = sr
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.1},{:.1}", x_px(x), y_px(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let entries: Vec<(String, &str, bool)> = self
            .series
            .iter()
            .enumerate()
            .map(|(k, sr)| (sr.name.clone(), PALETTE[k % PALETTE.len()], false))
            .collect();
        legend(&mut s, &entries);
        s.push_str("</svg>\n");
        s
    }
}
