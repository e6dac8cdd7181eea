//! Hand-written SVG charts built from aggregate report rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::Defense;
use super::report::{ExperimentReport, ReportRow};
use crate::dataio::bundle::ensure_dir;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#333333", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
];

/// One named series of (x, y) points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(title: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>
"#,
        WIDTH / 2.0,
        escape(title),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<polyline points="{x0},{y0} {x0},{y1} {x1},{y1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = y1 - v * (y1 - y0);
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    s
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        let x = WIDTH - MARGIN + 8.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y,
            escape(name)
        );
    }
}

fn y_px(v: f64) -> f64 {
    let (y0, y1) = (MARGIN, HEIGHT - MARGIN);
    y1 - v.clamp(0.0, 1.0) * (y1 - y0)
}

/// Line chart with one `<polyline>` per series; y is fixed to `[0, 1]`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut s = header(title, y_label);
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|p| p.points.iter().map(|q| q.0))
        .collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_px = |x: f64| {
        MARGIN + (x - if lo.is_finite() { lo } else { 0.0 }) / span * (WIDTH - 2.0 * MARGIN)
    };
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
            x_px(t),
            HEIGHT - MARGIN + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", x_px(x), y_px(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            escape(&ser.name),
            pts.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(
        &mut s,
        &series.iter().map(|x| x.name.as_str()).collect::<Vec<_>>(),
    );
    s.push_str("</svg>\n");
    s
}

/// Grouped bar chart: `values[g][b]` is bar `b` of group `g`.
pub fn bar_chart(
    title: &str,
    y_label: &str,
    groups: &[String],
    bars: &[String],
    values: &[Vec<f64>],
) -> String {
    let mut s = header(title, y_label);
    let inner = WIDTH - 2.0 * MARGIN;
    let gw = inner / groups.len().max(1) as f64;
    let bw = gw * 0.8 / bars.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let gx = MARGIN + g as f64 * gw + gw * 0.1;
        for (b, &v) in values[g].iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            let y = y_px(v);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + b as f64 * bw,
                bw * 0.9,
                HEIGHT - MARGIN - y,
                PALETTE[b % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + gw * 0.4,
            HEIGHT - MARGIN + 16.0,
            escape(name)
        );
    }
    legend(&mut s, &bars.iter().map(String::as_str).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

fn file_stem(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}

fn unique<'a>(it: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in it {
        if !out.contains(v) {
            out.push(v.clone());
        }
    }
    out
}

/// Charts for a set of report rows, keyed by file name:
///
/// * `at_<model>_<target>_<transform>.svg`: mean BCA against ε, one
///   polyline per method, for every AT sweep;
/// * `transforms_<model>_<target>_<defense>.svg`: mean BCA per transform
///   and method, when several transforms were run;
/// * `methods_<model>_<defense>_<transform>.svg`: mean BCA per target and
///   method.
pub fn plots_from_rows(rows: &[ReportRow]) -> BTreeMap<String, String> {
    let means: Vec<&ReportRow> = rows.iter().filter(|r| r.repeat == "mean").collect();
    let mut out = BTreeMap::new();
    let methods = unique(means.iter().map(|r| &r.method));
    let models = unique(means.iter().map(|r| &r.model));
    let targets = unique(means.iter().map(|r| &r.target));
    let defenses = unique(means.iter().map(|r| &r.defense));
    let transforms = unique(means.iter().map(|r| &r.transform));
    let mean_of = |m: &str, model: &str, target: &str, d: &str, t: &str| {
        means
            .iter()
            .find(|r| {
                r.method == m
                    && r.model == model
                    && r.target == target
                    && r.defense == d
                    && r.transform == t
            })
            .map(|r| r.bca)
    };

    for model in &models {
        for target in &targets {
            for transform in &transforms {
                let series: Vec<Series> = methods
                    .iter()
                    .map(|m| {
                        let mut points: Vec<(f64, f64)> = defenses
                            .iter()
                            .filter_map(|d| match Defense::parse(d) {
                                Some(Defense::At(e)) => {
                                    mean_of(m, model, target, d, transform).map(|v| (e, v))
                                }
                                _ => None,
                            })
                            .collect();
                        points.sort_by(|a, b| a.0.total_cmp(&b.0));
                        Series {
                            name: m.clone(),
                            points,
                        }
                    })
                    .filter(|s| !s.points.is_empty())
                    .collect();
                if !series.is_empty() {
                    let title =
                        format!("{model} {target} BCA under adversarial training ({transform})");
                    out.insert(
                        format!("{}.svg", file_stem(&["at", model, target, transform])),
                        line_chart(&title, "epsilon (fraction of user std)", "BCA", &series),
                    );
                }
            }
            for defense in &defenses {
                let (present, values): (Vec<String>, Vec<Vec<f64>>) = transforms
                    .iter()
                    .map(|t| {
                        let v: Vec<f64> = methods
                            .iter()
                            .map(|m| mean_of(m, model, target, defense, t).unwrap_or(f64::NAN))
                            .collect();
                        (t.clone(), v)
                    })
                    .filter(|(_, v)| v.iter().any(|x| !x.is_nan()))
                    .unzip();
                if present.len() < 2 {
                    continue;
                }
                let title = format!("{model} {target} BCA by transform ({defense})");
                out.insert(
                    format!("{}.svg", file_stem(&["transforms", model, target, defense])),
                    bar_chart(&title, "BCA", &present, &methods, &values),
                );
            }
        }
        for defense in &defenses {
            for transform in &transforms {
                let values: Vec<Vec<f64>> = targets
                    .iter()
                    .map(|tg| {
                        methods
                            .iter()
                            .map(|m| mean_of(m, model, tg, defense, transform).unwrap_or(f64::NAN))
                            .collect()
                    })
                    .collect();
                if values.iter().flatten().all(|v| v.is_nan()) {
                    continue;
                }
                let title = format!("{model} BCA by method ({defense}, {transform})");
                out.insert(
                    format!("{}.svg", file_stem(&["methods", model, defense, transform])),
                    bar_chart(&title, "BCA", &targets, &methods, &values),
                );
            }
        }
    }
    out
}

fn write_plots(plots: BTreeMap<String, String>, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    plots
        .into_iter()
        .map(|(name, svg)| {
            let path = dir.join(name);
            std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Write every chart for `report` into `dir`; returns the files written.
pub fn report_plots(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    write_plots(plots_from_rows(&report.rows()), dir.as_ref())
}

/// As [`report_plots`], from rows parsed out of a CSV.
pub fn plots_from_csv_rows(rows: &[ReportRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    write_plots(plots_from_rows(rows), dir.as_ref())
}
