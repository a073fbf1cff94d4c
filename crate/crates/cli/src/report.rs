//! `report`: renders result tables as static, byte-deterministic SVG plots.
//!
//! No plotting dependency: the files are assembled from fixed-precision
//! coordinate strings, so a rerun over the same inputs reproduces the exact
//! bytes. Both panels are log-log; the optimal-LR panel carries reference
//! lines with slopes 0, -1/2, and -1 anchored at the first data point.

use std::path::{Path, PathBuf};

use lvlab_core::zipf::read_counts;

use crate::{manifest, CliError, CliResult, ReportArgs};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 110.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
/// Rank-frequency curves are thinned to at most this many vertices.
const MAX_CURVE_POINTS: usize = 512;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Maps log2-space data coordinates onto the fixed pixel frame.
struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    /// Frames the data with 5% headroom; degenerate ranges get a half-unit.
    fn around(points: &[(f64, f64)]) -> Frame {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for &(x, y) in points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        let x_pad = (0.05 * (x_max - x_min)).max(0.5);
        let y_pad = (0.05 * (y_max - y_min)).max(0.5);
        Frame {
            x_min: x_min - x_pad,
            x_max: x_max + x_pad,
            y_min: y_min - y_pad,
            y_max: y_max + y_pad,
        }
    }

    fn x_px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y_px(&self, y: f64) -> f64 {
        // SVG y grows downward.
        HEIGHT - MARGIN_BOTTOM
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Integer tick positions inside a log2 range, thinned to at most 12.
fn log2_ticks(lo: f64, hi: f64) -> Vec<i64> {
    let first = lo.ceil() as i64;
    let last = hi.floor() as i64;
    if last < first {
        return Vec::new();
    }
    let all: Vec<i64> = (first..=last).collect();
    let stride = all.len().div_ceil(12).max(1);
    all.into_iter().step_by(stride).collect()
}

fn pow2_label(k: i64) -> String {
    if (0..=20).contains(&k) {
        format!("{}", 1u64 << k)
    } else {
        format!("2^{k}")
    }
}

/// Assembles one log-log SVG panel. `series` are (log2 x, log2 y) points;
/// `ref_slopes` lines are anchored at the first data point.
fn render_panel(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(f64, f64)],
    ref_slopes: &[(f64, &str)],
) -> String {
    let frame = Frame::around(series);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <clipPath id=\"plot-area\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/></clipPath>\n",
        px(MARGIN_LEFT),
        px(MARGIN_TOP),
        px(plot_w),
        px(plot_h)
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        px(MARGIN_LEFT + plot_w / 2.0)
    ));

    // Axes.
    let x0 = px(MARGIN_LEFT);
    let x1 = px(WIDTH - MARGIN_RIGHT);
    let y0 = px(HEIGHT - MARGIN_BOTTOM);
    let y1 = px(MARGIN_TOP);
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));

    // Ticks and grid.
    for k in log2_ticks(frame.x_min, frame.x_max) {
        let x = px(frame.x_px(k as f64));
        svg.push_str(&format!(
            "  <line x1=\"{x}\" y1=\"{y1}\" x2=\"{x}\" y2=\"{y0}\" stroke=\"#dddddd\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            px(HEIGHT - MARGIN_BOTTOM + 18.0),
            pow2_label(k)
        ));
    }
    for k in log2_ticks(frame.y_min, frame.y_max) {
        let y = px(frame.y_px(k as f64));
        svg.push_str(&format!(
            "  <line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{y}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>\n",
            px(MARGIN_LEFT - 8.0),
            pow2_label(k)
        ));
    }

    // Axis labels.
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        px(MARGIN_LEFT + plot_w / 2.0),
        px(HEIGHT - 10.0)
    ));
    svg.push_str(&format!(
        "  <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>\n",
        px(MARGIN_TOP + plot_h / 2.0),
        px(MARGIN_TOP + plot_h / 2.0)
    ));

    // Reference slopes, anchored at the first data point.
    if !ref_slopes.is_empty() {
        let (ax, ay) = series[0];
        for &(slope, label) in ref_slopes {
            let y_start = ay + slope * (frame.x_min - ax);
            let y_end = ay + slope * (frame.x_max - ax);
            svg.push_str(&format!(
                "  <line class=\"ref-slope\" clip-path=\"url(#plot-area)\" x1=\"{}\" y1=\"{}\" \
                 x2=\"{}\" y2=\"{}\" stroke=\"#888888\" stroke-dasharray=\"6 4\"/>\n",
                px(frame.x_px(frame.x_min)),
                px(frame.y_px(y_start)),
                px(frame.x_px(frame.x_max)),
                px(frame.y_px(y_end))
            ));
            let label_y = (ay + slope * (frame.x_max - ax)).clamp(frame.y_min, frame.y_max);
            svg.push_str(&format!(
                "  <text class=\"ref-label\" x=\"{}\" y=\"{}\" fill=\"#888888\">{label}</text>\n",
                px(WIDTH - MARGIN_RIGHT + 6.0),
                px(frame.y_px(label_y))
            ));
        }
    }

    // Data.
    let pts: Vec<String> = series
        .iter()
        .map(|&(x, y)| format!("{},{}", px(frame.x_px(x)), px(frame.y_px(y))))
        .collect();
    svg.push_str(&format!(
        "  <polyline class=\"data\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        pts.join(" ")
    ));
    if series.len() <= 64 {
        for &(x, y) in series {
            svg.push_str(&format!(
                "  <circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"#1f77b4\"/>\n",
                px(frame.x_px(x)),
                px(frame.y_px(y))
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Parses `d,m,eta_opt,n_qualifying` rows into plottable (d, eta) pairs,
/// skipping explicit error rows (`NaN` optimum).
fn read_optimal_csv(path: &Path) -> CliResult<Vec<(usize, f64)>> {
    const HEADER: &str = "d,m,eta_opt,n_qualifying";
    let body = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = body.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == HEADER => {}
        _ => {
            return Err(usage(format!(
                "{}: missing columns, expected header `{HEADER}`",
                path.display()
            )))
        }
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(usage(format!(
                "{} line {}: expected 4 fields, found {}",
                path.display(),
                idx + 1,
                fields.len()
            )));
        }
        let d: usize = fields[0].parse().map_err(|_| {
            usage(format!("{} line {}: cannot parse `d`", path.display(), idx + 1))
        })?;
        let eta: f64 = fields[2].parse().map_err(|_| {
            usage(format!(
                "{} line {}: cannot parse `eta_opt`",
                path.display(),
                idx + 1
            ))
        })?;
        if eta.is_finite() && eta > 0.0 {
            points.push((d, eta));
        } else {
            eprintln!(
                "skipping unplottable row {} of {} (eta_opt = {eta})",
                idx + 1,
                path.display()
            );
        }
    }
    if points.is_empty() {
        return Err(usage(format!("{}: no plottable rows", path.display())));
    }
    points.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    Ok(points)
}

/// Renders the requested panels; at least one input table is required.
pub fn run_report(out_dir: &Path, args: &ReportArgs) -> CliResult<()> {
    if args.optimal.is_none() && args.counts.is_none() {
        return Err(usage("nothing to plot: pass --optimal and/or --counts"));
    }
    let mut artifacts: Vec<PathBuf> = Vec::new();

    if let Some(optimal) = &args.optimal {
        let points = read_optimal_csv(optimal)?;
        let series: Vec<(f64, f64)> = points
            .iter()
            .map(|&(d, eta)| ((d as f64).log2(), eta.log2()))
            .collect();
        let svg = render_panel(
            "Optimal embedding learning rate vs. width",
            "width d",
            "optimal eta_E",
            &series,
            &[(0.0, "slope 0"), (-0.5, "slope -1/2"), (-1.0, "slope -1")],
        );
        let path = out_dir.join("optimal_lr.svg");
        std::fs::write(&path, svg)?;
        artifacts.push(path);
    }

    if let Some(counts_path) = &args.counts {
        let counts = read_counts(counts_path).map_err(|e| usage(e.to_string()))?;
        let series: Vec<(f64, f64)> = counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0)
            .map(|(i, &c)| (((i + 1) as f64).log2(), (c as f64).log2()))
            .collect();
        if series.len() < 2 {
            return Err(usage(format!(
                "{}: need at least 2 nonzero counts to plot",
                counts_path.display()
            )));
        }
        let stride = series.len().div_ceil(MAX_CURVE_POINTS).max(1);
        let mut thinned: Vec<(f64, f64)> = series.iter().copied().step_by(stride).collect();
        let last = *series.last().expect("nonempty series");
        if thinned.last() != Some(&last) {
            thinned.push(last);
        }
        let svg = render_panel(
            "Token rank-frequency",
            "rank",
            "count",
            &thinned,
            &[],
        );
        let path = out_dir.join("rank_frequency.svg");
        std::fs::write(&path, svg)?;
        artifacts.push(path);
    }

    let refs: Vec<&PathBuf> = artifacts.iter().collect();
    manifest::write_manifest(out_dir, None, &refs)?;
    Ok(())
}
