//! CSV and JSON files read and written by the command-line tool.
//!
//! Writers build the whole file in memory and move it into place with a
//! rename, so a reader never sees a half-written file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{CellResult, Marginal, Method, MethodPosterior};
use crate::svi::moving_average;

/// Probabilities reported in posterior CSVs.
pub const SUMMARY_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// `day,<column>` with days numbered from 1.
pub fn write_counts(path: &Path, column: &str, counts: &[u64]) -> Result<()> {
    let rows = counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![(i + 1).to_string(), c.to_string()]);
    write_atomic(path, &csv_bytes(&["day", column], rows)?)
}

/// Reads a two-column `day,<count>` CSV. Days must run 1, 2, ... in order.
pub fn read_counts(path: &Path) -> Result<Vec<u64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_error(path, e.to_string()))?;
    let mut counts = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| parse_error(path, format!("row {line}: {e}")))?;
        if record.len() != 2 {
            return Err(parse_error(path, format!("row {line}: expected 2 fields, found {}", record.len())));
        }
        let day: usize = record[0]
            .parse()
            .map_err(|_| parse_error(path, format!("row {line}: invalid day {:?}", &record[0])))?;
        if day != counts.len() + 1 {
            return Err(parse_error(path, format!("row {line}: expected day {}, found {day}", counts.len() + 1)));
        }
        let count: u64 = record[1]
            .parse()
            .map_err(|_| parse_error(path, format!("row {line}: invalid count {:?}", &record[1])))?;
        counts.push(count);
    }
    Ok(counts)
}

pub fn write_values(path: &Path, column: &str, values: &[f64]) -> Result<()> {
    let rows = values
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]);
    write_atomic(path, &csv_bytes(&["day", column], rows)?)
}

/// `day,mean_R,sd_R,q05,q25,q50,q75,q95`; days without an estimate keep
/// only the day column.
pub fn write_posterior(path: &Path, posterior: &MethodPosterior) -> Result<()> {
    let rows = posterior.days.iter().enumerate().map(|(i, day)| {
        let mut row = vec![(i + 1).to_string()];
        match day {
            Some(m) => {
                let sd = match *m {
                    Marginal::Normal { sd, .. } => sd,
                    Marginal::Gamma { shape, scale } => shape.sqrt() * scale,
                };
                row.push(m.mean().to_string());
                row.push(sd.to_string());
                row.extend(SUMMARY_QUANTILES.iter().map(|&p| m.quantile(p).to_string()));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        row
    });
    let header = ["day", "mean_R", "sd_R", "q05", "q25", "q50", "q75", "q95"];
    write_atomic(path, &csv_bytes(&header, rows)?)
}

/// `iteration,elbo,elbo_ma100`, iterations numbered from 0.
pub fn write_elbo_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let smooth = moving_average(trace, 100);
    let rows = trace
        .iter()
        .zip(&smooth)
        .enumerate()
        .map(|(i, (e, s))| vec![i.to_string(), e.to_string(), s.to_string()]);
    write_atomic(path, &csv_bytes(&["iteration", "elbo", "elbo_ma100"], rows)?)
}

const CELL_HEADER: [&str; 9] = ["instance", "seed", "method", "day", "truth", "estimate", "family", "param1", "param2"];

/// One row per (instance, method, day) with enough to rebuild the marginal.
pub fn write_cell(path: &Path, cell: &CellResult) -> Result<()> {
    let mut rows = Vec::new();
    for inst in &cell.instances {
        for outcome in &inst.outcomes {
            for (day, &truth) in inst.truth.iter().enumerate() {
                let marginal = outcome.posterior.as_ref().and_then(|p| p.days[day]);
                let mut row = vec![
                    inst.index.to_string(),
                    inst.seed.to_string(),
                    outcome.method.to_string(),
                    (day + 1).to_string(),
                    truth.to_string(),
                ];
                match marginal {
                    Some(m) => {
                        let (family, a, b) = m.parts();
                        row.extend([m.mean().to_string(), family.into(), a.to_string(), b.to_string()]);
                    }
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
                rows.push(row);
            }
        }
    }
    write_atomic(path, &csv_bytes(&CELL_HEADER, rows)?)
}

pub type CellPosteriors = BTreeMap<Method, (Vec<MethodPosterior>, Vec<Vec<f64>>)>;

/// Rebuilds per-method posteriors and truths from a file written by
/// [`write_cell`]. Instances whose method failed outright are skipped.
pub fn read_cell(path: &Path) -> Result<CellPosteriors> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_error(path, e.to_string()))?;
    if reader.headers()?.iter().ne(CELL_HEADER) {
        return Err(parse_error(path, "not a benchmark cell file"));
    }
    // (method, instance) -> (days, truth)
    type Days = (Vec<Option<Marginal>>, Vec<f64>);
    let mut grouped: BTreeMap<(Method, usize), Days> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_error(path, format!("row {line}: {e}")))?;
        let bad = |what: &str| parse_error(path, format!("row {line}: invalid {what}"));
        let instance: usize = record[0].parse().map_err(|_| bad("instance"))?;
        let method: Method = record[2].parse().map_err(|_| bad("method"))?;
        let truth: f64 = record[4].parse().map_err(|_| bad("truth"))?;
        let marginal = if record[6].is_empty() {
            None
        } else {
            let a: f64 = record[7].parse().map_err(|_| bad("param1"))?;
            let b: f64 = record[8].parse().map_err(|_| bad("param2"))?;
            Some(Marginal::from_parts(&record[6], a, b).ok_or_else(|| bad("family"))?)
        };
        let entry = grouped.entry((method, instance)).or_default();
        entry.0.push(marginal);
        entry.1.push(truth);
    }
    let mut out = CellPosteriors::new();
    for ((method, _), (days, truth)) in grouped {
        if days.iter().all(Option::is_none) {
            continue;
        }
        let slot = out.entry(method).or_default();
        slot.0.push(MethodPosterior { days });
        slot.1.push(truth);
    }
    Ok(out)
}

/// Table-style summary: one row per (cell, method).
pub fn write_summary(path: &Path, cells: &[CellResult]) -> Result<()> {
    let mut rows = Vec::new();
    for cell in cells {
        for s in &cell.summaries {
            rows.push(vec![
                cell.spec.label(),
                cell.spec.test.to_string(),
                cell.spec.scheme.to_string(),
                s.method.to_string(),
                cell.instances.len().to_string(),
                s.evaluated.to_string(),
                s.failures.to_string(),
                s.mae_mean.to_string(),
                s.mae_sd.to_string(),
                s.cell_text(),
                s.flagged.to_string(),
            ]);
        }
    }
    let header = [
        "cell", "test", "scheme", "method", "instances", "evaluated", "failures", "mae_mean", "mae_sd", "mae",
        "flagged",
    ];
    write_atomic(path, &csv_bytes(&header, rows)?)
}

/// `method,level,coverage`.
pub fn write_calibration(path: &Path, levels: &[f64], curves: &BTreeMap<Method, Vec<f64>>) -> Result<()> {
    let rows = curves.iter().flat_map(|(method, coverage)| {
        levels
            .iter()
            .zip(coverage)
            .map(move |(l, c)| vec![method.to_string(), l.to_string(), c.to_string()])
    });
    write_atomic(path, &csv_bytes(&["method", "level", "coverage"], rows)?)
}
