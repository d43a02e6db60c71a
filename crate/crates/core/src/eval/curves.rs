use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::MetricsRow;

pub const CURVE_HEADER: &str = "epoch,L_d,L_g,L_r,top1,mAP,pos,neg";

/// Missing mAP (label-only runs) is written as this token.
const UNAVAILABLE: &str = "NA";

fn render(rows: &[MetricsRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        let map = r
            .map
            .map_or_else(|| UNAVAILABLE.to_string(), |m| format!("{m:.6}"));
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{map},{},{}",
            r.epoch, r.l_d, r.l_g, r.l_r, r.top1, r.pos, r.neg
        );
    }
    s
}

/// Writes the per-epoch curves as CSV.
pub fn export_curves(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::contract("eval-metrics", "no metric rows to export"));
    }
    fs::write(path, render(rows)).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_curves`].
pub fn parse_curves(text: &str) -> Result<Vec<MetricsRow>> {
    let bad = |line: &str, why: &str| {
        Error::contract("eval-metrics", format!("curve line `{line}`: {why}"))
    };
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::contract(
            "eval-metrics",
            "curve file does not start with the expected header",
        ));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(line, "expected 8 fields"));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad(line, "not a number"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(line, "not a count"));
            Ok(MetricsRow {
                epoch: int(f[0])?,
                l_d: float(f[1])?,
                l_g: float(f[2])?,
                l_r: float(f[3])?,
                top1: float(f[4])?,
                map: if f[5] == UNAVAILABLE {
                    None
                } else {
                    Some(float(f[5])?)
                },
                pos: int(f[6])?,
                neg: int(f[7])?,
            })
        })
        .collect()
}

/// One comparison line: accuracy without perturbation, with the learned
/// perturbation, and under the gradient-sign baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub classifier: String,
    pub vanilla: (f64, Option<f64>),
    pub proposed: (f64, Option<f64>),
    pub baseline: Option<(f64, Option<f64>)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

fn cell(v: Option<(f64, Option<f64>)>) -> String {
    match v {
        None => "-".into(),
        Some((top1, Some(map))) => format!("{:.1}% / {map:.3}", 100.0 * top1),
        Some((top1, None)) => format!("{:.1}% / NA", 100.0 * top1),
    }
}

impl SummaryTable {
    /// Aligned plain text, one header line then one line per row.
    pub fn render(&self) -> String {
        let header = ["dataset", "classifier", "vanilla", "proposed", "baseline"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.dataset.clone(),
                    r.classifier.clone(),
                    cell(Some(r.vanilla)),
                    cell(Some(r.proposed)),
                    cell(r.baseline),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: [&str; 5]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(header);
        out.push_str(&line(
            widths.map(|w| "-".repeat(w)).each_ref().map(String::as_str),
        ));
        for row in &body {
            out.push_str(&line(row.each_ref().map(String::as_str)));
        }
        out
    }
}
