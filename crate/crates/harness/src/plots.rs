//! Minimal deterministic SVG line charts.
//!
//! Coordinates are printed with a fixed number of decimals and series are
//! drawn in input order, so equal inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::report::ExperimentReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Pads a degenerate range so that it has positive width.
fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

impl LineChart {
    /// Points that can be drawn: finite, and positive on a log axis.
    fn drawable(&self, s: &Series) -> Vec<(f64, f64)> {
        s.points
            .iter()
            .copied()
            .filter(|&(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || y > 0.0))
            .collect()
    }

    pub fn render(&self) -> String {
        let transform = |y: f64| if self.log_y { y.log10() } else { y };
        let all: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| self.drawable(s))
            .map(|(x, y)| (x, transform(y)))
            .collect();
        let fold = |f: fn(&(f64, f64)) -> f64| {
            all.iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (x_lo, x_hi) = if all.is_empty() {
            (0.0, 1.0)
        } else {
            padded(fold(|p| p.0).0, fold(|p| p.0).1)
        };
        let (y_lo, y_hi) = if all.is_empty() {
            (0.0, 1.0)
        } else {
            padded(fold(|p| p.1).0, fold(|p| p.1).1)
        };
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let py = |y: f64| TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

        let mut out = String::new();
        let w = &mut out;
        writeln!(
            w,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\">"
        )
        .unwrap();
        writeln!(w, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
        writeln!(
            w,
            "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
            LEFT + plot_w / 2.0,
            escape(&self.title)
        )
        .unwrap();
        writeln!(
            w,
            "<rect x=\"{LEFT:.2}\" y=\"{TOP:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" fill=\"none\" stroke=\"black\"/>"
        )
        .unwrap();

        for k in 0..=4 {
            let f = f64::from(k) / 4.0;
            let xv = x_lo + f * (x_hi - x_lo);
            let yv = y_lo + f * (y_hi - y_lo);
            let y_text = if self.log_y {
                tick_label(10f64.powf(yv))
            } else {
                tick_label(yv)
            };
            writeln!(
                w,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                px(xv),
                TOP + plot_h + 16.0,
                tick_label(xv)
            )
            .unwrap();
            writeln!(
                w,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                LEFT - 6.0,
                py(yv) + 4.0,
                y_text
            )
            .unwrap();
            writeln!(
                w,
                "<line x1=\"{LEFT:.2}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" stroke=\"#dddddd\"/>",
                py(yv),
                LEFT + plot_w
            )
            .unwrap();
        }
        writeln!(
            w,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
            LEFT + plot_w / 2.0,
            HEIGHT - 18.0,
            escape(&self.x_label)
        )
        .unwrap();
        let y_label = if self.log_y {
            format!("{} (log scale)", self.y_label)
        } else {
            self.y_label.clone()
        };
        writeln!(
            w,
            "<text x=\"18\" y=\"{0:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {0:.2})\">{1}</text>",
            TOP + plot_h / 2.0,
            escape(&y_label)
        )
        .unwrap();

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = self
                .drawable(s)
                .into_iter()
                .map(|(x, y)| (px(x), py(transform(y))))
                .collect();
            if pts.len() >= 2 {
                let coords: Vec<String> =
                    pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                writeln!(
                    w,
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
                    coords.join(" ")
                )
                .unwrap();
            }
            for (x, y) in &pts {
                writeln!(
                    w,
                    "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>"
                )
                .unwrap();
            }
            let ly = TOP + 12.0 + 18.0 * i as f64;
            let lx = LEFT + plot_w + 12.0;
            writeln!(
                w,
                "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                lx + 20.0
            )
            .unwrap();
            writeln!(
                w,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
                lx + 26.0,
                ly + 4.0,
                escape(&s.name)
            )
            .unwrap();
        }
        out.push_str("</svg>\n");
        out
    }
}

/// The report metrics drawn by [`emit_plots`], with whether each uses a log axis.
pub const PLOTTED_METRICS: [(&str, bool); 4] = [
    ("mse", true),
    ("squared_bias", false),
    ("variance", true),
    ("error_rate", false),
];

/// One chart per metric, one series per estimator in first-seen order.
pub fn report_charts(report: &ExperimentReport) -> Vec<(&'static str, LineChart)> {
    let mut estimators: Vec<&str> = Vec::new();
    for row in &report.rows {
        if !estimators.contains(&row.estimator.as_str()) {
            estimators.push(&row.estimator);
        }
    }
    let axis = report.rows.first().map_or("axis", |r| r.axis.as_str());
    PLOTTED_METRICS
        .iter()
        .map(|&(metric, log_y)| {
            let series = estimators
                .iter()
                .map(|&e| Series {
                    name: e.to_string(),
                    points: report
                        .rows
                        .iter()
                        .filter(|r| r.estimator == e)
                        .map(|r| {
                            let y = match metric {
                                "mse" => r.mse,
                                "squared_bias" => r.squared_bias,
                                "variance" => r.variance,
                                _ => r.error_rate,
                            };
                            (r.axis_value, y)
                        })
                        .collect(),
                })
                .collect();
            let chart = LineChart {
                title: format!("{metric} vs {axis}"),
                x_label: axis.to_string(),
                y_label: metric.to_string(),
                log_y,
                series,
            };
            (metric, chart)
        })
        .collect()
}

/// Writes `<metric>.svg` for every plotted metric into `dir`.
pub fn emit_plots(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    report_charts(report)
        .into_iter()
        .map(|(metric, chart)| {
            let path = dir.join(format!("{metric}.svg"));
            write_chart(&chart, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn write_chart(chart: &LineChart, path: &Path) -> Result<()> {
    std::fs::write(path, chart.render()).map_err(|e| HarnessError::io(path, e))
}
