//! Self-contained SVG line charts with ±1 std bands.
//!
//! Every chart is written next to a CSV of the exact values it draws. The
//! root `<svg>` element carries the axis ranges and the plot rectangle as
//! `data-*` attributes, so pixel coordinates can be mapped back to values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::aggregate::{incumbent_curves, methods_in, weight_curves, CurveRow, RankRow};
use crate::error::{HarnessError, Result};
use crate::run::{write_rows, SummaryRow, WeightRow};

pub const PLOT_DIR: &str = "plots";

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub rows: Vec<CurveRow>,
}

/// Axis ranges and plot rectangle of a rendered chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl Frame {
    fn fit(rows: &[CurveRow]) -> Self {
        let finite = rows.iter().filter(|r| r.mean.is_finite() && r.std.is_finite());
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in finite {
            x_min = x_min.min(r.t as f64);
            x_max = x_max.max(r.t as f64);
            y_min = y_min.min(r.mean - r.std);
            y_max = y_max.max(r.mean + r.std);
        }
        if !x_min.is_finite() {
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        if x_max <= x_min {
            x_max = x_min + 1.0;
        }
        if y_max <= y_min {
            y_min -= 1.0;
            y_max += 1.0;
        } else {
            let pad = 0.05 * (y_max - y_min);
            y_min -= pad;
            y_max += pad;
        }
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
            left: LEFT,
            top: TOP,
            width: WIDTH - LEFT - RIGHT,
            height: HEIGHT - TOP - BOTTOM,
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x_min) / (self.x_max - self.x_min) * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        self.top + (self.y_max - y) / (self.y_max - self.y_min) * self.height
    }

    /// Inverse of [`Frame::px`].
    pub fn value_x(&self, px: f64) -> f64 {
        self.x_min + (px - self.left) / self.width * (self.x_max - self.x_min)
    }

    /// Inverse of [`Frame::py`].
    pub fn value_y(&self, py: f64) -> f64 {
        self.y_max - (py - self.top) / self.height * (self.y_max - self.y_min)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Series names in order of first appearance.
fn series_names(rows: &[CurveRow]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for r in rows {
        if !out.contains(&r.series.as_str()) {
            out.push(&r.series);
        }
    }
    out
}

pub fn render_svg(chart: &Chart) -> String {
    let f = Frame::fit(&chart.rows);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" data-plot-left="{}" data-plot-top="{}" data-plot-width="{}" data-plot-height="{}">"#,
        f.x_min, f.x_max, f.y_min, f.y_max, f.left, f.top, f.width, f.height
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        f.left + f.width / 2.0,
        escape(&chart.title)
    );

    // axes and grid
    let _ = writeln!(
        s,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        f.left, f.top, f.width, f.height
    );
    for i in 0..=TICKS {
        let frac = i as f64 / TICKS as f64;
        let xv = f.x_min + frac * (f.x_max - f.x_min);
        let yv = f.y_min + frac * (f.y_max - f.y_min);
        let (x, y) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            s,
            r##"<line class="grid" x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}" stroke="#ddd"/>"##,
            f.top,
            f.top + f.height
        );
        let _ = writeln!(
            s,
            r##"<line class="grid" x1="{:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#ddd"/>"##,
            f.left,
            f.left + f.width
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            f.top + f.height + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            f.left - 6.0,
            y + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        f.left + f.width / 2.0,
        HEIGHT - 18.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        f.top + f.height / 2.0,
        escape(&chart.y_label)
    );

    for (k, name) in series_names(&chart.rows).into_iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<&CurveRow> = chart
            .rows
            .iter()
            .filter(|r| r.series == name && r.mean.is_finite() && r.std.is_finite())
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(s, r#"<g class="series" data-name="{}">"#, escape(name));
        let mut band = String::new();
        for (i, r) in pts.iter().enumerate() {
            let _ = write!(
                band,
                "{}{:.3},{:.3} ",
                if i == 0 { "M" } else { "L" },
                f.px(r.t as f64),
                f.py(r.mean + r.std)
            );
        }
        for r in pts.iter().rev() {
            let _ = write!(band, "L{:.3},{:.3} ", f.px(r.t as f64), f.py(r.mean - r.std));
        }
        band.push('Z');
        let _ = writeln!(
            s,
            r#"<path class="band" d="{band}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#
        );
        let mut line = String::new();
        for (i, r) in pts.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(
                line,
                "{}{:.3},{:.3}",
                if i == 0 { "M" } else { "L" },
                f.px(r.t as f64),
                f.py(r.mean)
            );
        }
        let _ = writeln!(
            s,
            r#"<path class="line" d="{line}" fill="none" stroke="{color}" stroke-width="1.8"/>"#
        );
        let ly = f.top + 14.0 + 20.0 * k as f64;
        let lx = f.left + f.width + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(name)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Files written and charts skipped by [`emit_plots`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
}

fn write_chart(dir: &Path, stem: &str, chart: &Chart, report: &mut PlotReport) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    write_rows(&csv, &chart.rows)?;
    let svg = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg, render_svg(chart)).map_err(|e| HarnessError::io(&svg, e))?;
    report.written.push(csv);
    report.written.push(svg);
    Ok(())
}

/// Writes best-value curves per problem, the rank chart and the weight
/// charts under `out/plots`.
pub fn emit_plots(out: &Path, summary: &[SummaryRow], ranks: &[RankRow], weights: &[WeightRow]) -> Result<PlotReport> {
    let dir = out.join(PLOT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut report = PlotReport::default();

    let mut problems: Vec<&str> = Vec::new();
    for row in summary {
        if !problems.contains(&row.problem.as_str()) {
            problems.push(&row.problem);
        }
    }
    for problem in &problems {
        let chart = Chart {
            title: format!("{problem}: best value so far"),
            x_label: "evaluations".into(),
            y_label: "incumbent".into(),
            rows: incumbent_curves(summary, problem),
        };
        write_chart(&dir, &format!("curves_{problem}"), &chart, &mut report)?;
    }

    if methods_in(summary).len() < 2 || ranks.is_empty() {
        report
            .skipped
            .push("rank plot skipped: ranks need at least two methods".into());
    } else {
        let rows = ranks
            .iter()
            .map(|r| CurveRow {
                series: r.method.clone(),
                t: r.t,
                mean: r.mean_rank,
                std: r.std_rank,
                count: r.count,
            })
            .collect();
        let chart = Chart {
            title: "mean rank (1 = best)".into(),
            x_label: "evaluations".into(),
            y_label: "rank".into(),
            rows,
        };
        write_chart(&dir, "ranks", &chart, &mut report)?;
    }

    if weights.is_empty() {
        report
            .skipped
            .push("weight plot skipped: no run recorded source weights".into());
    } else {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for w in weights {
            let key = (w.problem.as_str(), w.method.as_str());
            if !pairs.contains(&key) {
                pairs.push(key);
            }
        }
        for (problem, method) in pairs {
            let chart = Chart {
                title: format!("{problem} / {method}: source weights"),
                x_label: "evaluations".into(),
                y_label: "weight".into(),
                rows: weight_curves(weights, problem, method),
            };
            write_chart(&dir, &format!("weights_{problem}_{method}"), &chart, &mut report)?;
        }
    }
    for notice in &report.skipped {
        log::info!("{notice}");
    }
    Ok(report)
}
