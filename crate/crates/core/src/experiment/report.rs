use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::bundle::{ensure_dir, read_json, write_json};
use crate::{Error, Result};

/// CSV header; the column order is fixed.
pub const CSV_HEADER: &str = "dataset,method,model,target,defense,transform,repeat,bca";

/// Method label of the unperturbed baseline.
pub const CLEAN: &str = "clean";

/// One trained-and-evaluated cell for one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub model: String,
    pub target: String,
    pub defense: String,
    pub transform: String,
    pub repeat: usize,
    /// Seed derived from the base seed, the cell id and the repeat.
    pub seed: u64,
    /// `None` when the cell failed.
    pub bca: Option<f64>,
    pub error: Option<String>,
    /// Whether the test split hashed to the pre-run checksum after this cell.
    pub test_intact: bool,
}

impl CellResult {
    pub fn id(&self) -> String {
        cell_id(
            &self.method,
            &self.model,
            &self.target,
            &self.defense,
            &self.transform,
        )
    }

    pub fn succeeded(&self) -> bool {
        self.bca.is_some() && self.test_intact
    }
}

pub(crate) fn cell_id(
    method: &str,
    model: &str,
    target: &str,
    defense: &str,
    transform: &str,
) -> String {
    format!("{method}/{model}/{target}/{defense}/{transform}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub base_seed: u64,
    pub n_repeats: usize,
    /// SHA-256 of the clean test split taken before any cell ran.
    pub test_checksum: String,
    /// Seeds of the perturbation generated per method and repeat.
    pub perturbation_seeds: BTreeMap<String, Vec<u64>>,
    pub cells: Vec<CellResult>,
}

/// One line of the CSV: a cell result or an aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub model: String,
    pub target: String,
    pub defense: String,
    pub transform: String,
    /// Repeat index, or `mean`, `std`, `reduction`.
    pub repeat: String,
    pub bca: f64,
}

impl ReportRow {
    fn group(&self) -> (String, String, String, String) {
        (
            self.model.clone(),
            self.target.clone(),
            self.defense.clone(),
            self.transform.clone(),
        )
    }
}

impl ExperimentReport {
    pub fn all_succeeded(&self) -> bool {
        self.cells.iter().all(CellResult::succeeded)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| !c.succeeded())
    }

    /// Mean BCA over successful repeats of one cell.
    pub fn mean_bca(
        &self,
        method: &str,
        model: &str,
        target: &str,
        defense: &str,
        transform: &str,
    ) -> Option<f64> {
        let id = cell_id(method, model, target, defense, transform);
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.id() == id)
            .filter_map(|c| c.bca)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-cell rows followed by aggregates: `mean` and `std` (population)
    /// per cell, `reduction` (clean mean minus method mean) per perturbed
    /// cell, and an `average` method row holding the mean reduction.
    pub fn rows(&self) -> Vec<ReportRow> {
        let row = |c: &CellResult, repeat: String, bca: f64| ReportRow {
            dataset: self.dataset.clone(),
            method: c.method.clone(),
            model: c.model.clone(),
            target: c.target.clone(),
            defense: c.defense.clone(),
            transform: c.transform.clone(),
            repeat,
            bca,
        };
        let mut out: Vec<ReportRow> = self
            .cells
            .iter()
            .map(|c| row(c, c.repeat.to_string(), c.bca.unwrap_or(f64::NAN)))
            .collect();

        let mut order: Vec<&CellResult> = Vec::new();
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for c in &self.cells {
            groups
                .entry(c.id())
                .or_insert_with(|| {
                    order.push(c);
                    Vec::new()
                })
                .extend(c.bca);
        }
        let mut means: Vec<(ReportRow, f64)> = Vec::new();
        for c in &order {
            let v = &groups[&c.id()];
            let (mean, std) = if v.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                (
                    m,
                    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt(),
                )
            };
            out.push(row(c, "mean".into(), mean));
            out.push(row(c, "std".into(), std));
            means.push((row(c, "mean".into(), mean), mean));
        }

        let clean: BTreeMap<_, f64> = means
            .iter()
            .filter(|(r, _)| r.method == CLEAN)
            .map(|(r, m)| (r.group(), *m))
            .collect();
        let mut averages: Vec<(ReportRow, Vec<f64>)> = Vec::new();
        for (r, m) in &means {
            if r.method == CLEAN {
                continue;
            }
            let Some(base) = clean.get(&r.group()) else {
                continue;
            };
            let red = base - m;
            out.push(ReportRow {
                repeat: "reduction".into(),
                bca: red,
                ..r.clone()
            });
            match averages.iter_mut().find(|(a, _)| a.group() == r.group()) {
                Some((_, v)) => v.push(red),
                None => averages.push((
                    ReportRow {
                        method: "average".into(),
                        repeat: "reduction".into(),
                        ..r.clone()
                    },
                    vec![red],
                )),
            }
        }
        for (mut r, v) in averages {
            r.bca = v.iter().sum::<f64>() / v.len() as f64;
            out.push(r);
        }
        out
    }

    /// Mean reduction over perturbed methods for one model/target/defense/transform.
    pub fn average_reduction(
        &self,
        model: &str,
        target: &str,
        defense: &str,
        transform: &str,
    ) -> Option<f64> {
        self.rows()
            .into_iter()
            .find(|r| {
                r.method == "average"
                    && r.model == model
                    && r.target == target
                    && r.defense == defense
                    && r.transform == transform
            })
            .map(|r| r.bca)
    }
}

fn format_bca(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.dataset,
            r.method,
            r.model,
            r.target,
            r.defense,
            r.transform,
            r.repeat,
            format_bca(r.bca)
        );
    }
    s
}

/// Parse a CSV written by [`report_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |line: usize, message: String| Error::Parse {
        path: format!("<csv line {line}>").into(),
        message,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(bad(
                1,
                format!(
                    "expected header `{CSV_HEADER}`, found `{}`",
                    other.unwrap_or("")
                ),
            ))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 8 {
                return Err(bad(i + 2, format!("expected 8 fields, found {}", f.len())));
            }
            let bca = f[7]
                .parse::<f64>()
                .map_err(|e| bad(i + 2, format!("bca `{}`: {e}", f[7])))?;
            Ok(ReportRow {
                dataset: f[0].into(),
                method: f[1].into(),
                model: f[2].into(),
                target: f[3].into(),
                defense: f[4].into(),
                transform: f[5].into(),
                repeat: f[6].into(),
                bca,
            })
        })
        .collect()
}

/// Write the report as CSV to `path`.
pub fn report_csv(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, rows_to_csv(&report.rows())).map_err(|e| Error::io(path, e))
}

/// Write `report.csv` and `report.json` (seeds, checksums, failures) into `dir`.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    report_csv(report, dir.join("report.csv"))?;
    write_json(&dir.join("report.json"), report)
}

pub fn read_report(dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    read_json(&dir.as_ref().join("report.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(method: &str, repeat: usize, bca: Option<f64>) -> CellResult {
        CellResult {
            method: method.into(),
            model: "eegnet".into(),
            target: "uid".into(),
            defense: "none".into(),
            transform: "none".into(),
            repeat,
            seed: repeat as u64,
            bca,
            error: bca.is_none().then(|| "boom".into()),
            test_intact: true,
        }
    }

    fn report(cells: Vec<CellResult>) -> ExperimentReport {
        ExperimentReport {
            dataset: "d".into(),
            base_seed: 0,
            n_repeats: 2,
            test_checksum: String::new(),
            perturbation_seeds: BTreeMap::new(),
            cells,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(
            rows_to_csv(&report(vec![]).rows()),
            format!("{CSV_HEADER}\n")
        );
    }

    #[test]
    fn aggregates_and_reductions() {
        let r = report(vec![
            cell(CLEAN, 0, Some(0.9)),
            cell(CLEAN, 1, Some(0.7)),
            cell("emin", 0, Some(0.1)),
            cell("emin", 1, Some(0.2)),
            cell("rand", 0, Some(0.3)),
            cell("rand", 1, None),
        ]);
        let rows = r.rows();
        // 6 cells, mean+std for 3 cells, 2 reductions, 1 average.
        assert_eq!(rows.len(), 6 + 6 + 2 + 1);
        let get = |m: &str, rep: &str| {
            rows.iter()
                .find(|x| x.method == m && x.repeat == rep)
                .unwrap()
                .bca
        };
        assert!((get(CLEAN, "mean") - 0.8).abs() < 1e-12);
        assert!((get(CLEAN, "std") - 0.1).abs() < 1e-12);
        assert!((get("emin", "reduction") - 0.65).abs() < 1e-12);
        assert!((get("rand", "reduction") - 0.5).abs() < 1e-12);
        assert!((get("average", "reduction") - 0.575).abs() < 1e-12);
        assert!(get("rand", "1").is_nan());
        assert!(!r.all_succeeded());
        assert_eq!(
            r.average_reduction("eegnet", "uid", "none", "none"),
            Some(get("average", "reduction"))
        );
    }

    #[test]
    fn csv_parses_back() {
        let r = report(vec![cell(CLEAN, 0, Some(0.5)), cell("sn", 0, None)]);
        let rows = r.rows();
        let parsed = parse_csv(&rows_to_csv(&rows)).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for (a, b) in parsed.iter().zip(&rows) {
            assert_eq!((&a.method, &a.repeat), (&b.method, &b.repeat));
            assert!((a.bca - b.bca).abs() < 1e-6 || (a.bca.is_nan() && b.bca.is_nan()));
        }
        assert!(parse_csv("wrong,header\n").is_err());
    }
}
