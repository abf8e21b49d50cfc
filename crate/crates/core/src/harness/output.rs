use std::path::Path;

use crate::diagnostics::{RunTrace, UpdateHistogram};
use crate::error::{Error, Result};
use crate::harness::{GridCell, GridTable};

/// Scientific notation with 17 significant digits, which round-trips every
/// finite `f64`; infinities print as `inf`/`-inf`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Anything [`emit_csv`] can write.
#[derive(Debug, Clone, Copy)]
pub enum CsvData<'a> {
    /// Columns `optimizer,t,eta,loss,dist_inf,grad_norm_sq`; several traces
    /// are concatenated in order.
    Traces(&'a [&'a RunTrace]),
    /// Columns `alpha,lambda,metric,boundary`, one row per cell; `boundary`
    /// marks cells on the edge of the grid.
    Grid(&'a GridTable),
    /// Columns `bin_lo,bin_hi,count`.
    Histogram(&'a UpdateHistogram),
}

pub fn emit_csv(data: CsvData<'_>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    match data {
        CsvData::Traces(traces) => {
            w.write_record(["optimizer", "t", "eta", "loss", "dist_inf", "grad_norm_sq"])?;
            for tr in traces {
                for r in tr.records() {
                    w.write_record([
                        tr.meta().optimizer.clone(),
                        r.t.to_string(),
                        fmt_float(r.eta),
                        fmt_float(r.loss),
                        fmt_opt(r.dist_inf),
                        fmt_opt(r.grad_norm_sq),
                    ])?;
                }
            }
        }
        CsvData::Grid(table) => {
            w.write_record(["alpha", "lambda", "metric", "boundary"])?;
            for (k, c) in table.cells.iter().enumerate() {
                w.write_record([
                    fmt_float(c.alpha),
                    fmt_float(c.lambda),
                    fmt_float(c.metric),
                    table.on_edge(k).to_string(),
                ])?;
            }
        }
        CsvData::Histogram(h) => {
            w.write_record(["bin_lo", "bin_hi", "count"])?;
            for (lo, hi, count) in h.rows() {
                w.write_record([fmt_float(lo), fmt_float(hi), count.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One parsed line of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub optimizer: String,
    pub t: u64,
    pub eta: f64,
    pub loss: f64,
    pub dist_inf: Option<f64>,
    pub grad_norm_sq: Option<f64>,
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::MalformedCsv {
            path: path.to_owned(),
            line: 1,
            message: format!("expected header {}", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::MalformedCsv {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, k: usize) -> Result<T> {
    let s = rec.get(k).unwrap_or("");
    s.parse().map_err(|_| Error::MalformedCsv {
        path: path.to_owned(),
        line,
        message: format!("column {k}: cannot parse `{s}`"),
    })
}

fn opt_field(path: &Path, line: u64, rec: &csv::StringRecord, k: usize) -> Result<Option<f64>> {
    if rec.get(k).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        field(path, line, rec, k).map(Some)
    }
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    read_rows(path, &["optimizer", "t", "eta", "loss", "dist_inf", "grad_norm_sq"])?
        .into_iter()
        .map(|(line, rec)| {
            Ok(TraceRow {
                optimizer: rec.get(0).unwrap_or("").to_string(),
                t: field(path, line, &rec, 1)?,
                eta: field(path, line, &rec, 2)?,
                loss: field(path, line, &rec, 3)?,
                dist_inf: opt_field(path, line, &rec, 4)?,
                grad_norm_sq: opt_field(path, line, &rec, 5)?,
            })
        })
        .collect()
}

/// Rebuilds a grid table; the axes are recovered from the α-major rows.
pub fn read_grid_csv(path: &Path) -> Result<GridTable> {
    let rows = read_rows(path, &["alpha", "lambda", "metric", "boundary"])?;
    let mut cells = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        cells.push(GridCell {
            alpha: field(path, *line, rec, 0)?,
            lambda: field(path, *line, rec, 1)?,
            metric: field(path, *line, rec, 2)?,
            error: None,
        });
    }
    let mut alphas: Vec<f64> = Vec::new();
    let mut lambdas: Vec<f64> = Vec::new();
    for c in &cells {
        if !alphas.contains(&c.alpha) {
            alphas.push(c.alpha);
        }
        if !lambdas.contains(&c.lambda) {
            lambdas.push(c.lambda);
        }
    }
    let rectangular = cells.iter().enumerate().all(|(k, c)| {
        let (i, j) = (k / lambdas.len().max(1), k % lambdas.len().max(1));
        alphas.get(i) == Some(&c.alpha) && lambdas.get(j) == Some(&c.lambda)
    });
    if !rectangular {
        return Err(Error::NonRectangularGrid {
            expected: alphas.len() * lambdas.len(),
            found: cells.len(),
        });
    }
    GridTable::new(alphas, lambdas, cells, false)
}

pub fn read_histogram_csv(path: &Path) -> Result<UpdateHistogram> {
    let rows = read_rows(path, &["bin_lo", "bin_hi", "count"])?;
    let parsed = rows
        .iter()
        .map(|(line, rec)| Ok((field(path, *line, rec, 0)?, field(path, *line, rec, 1)?, field(path, *line, rec, 2)?)))
        .collect::<Result<Vec<(f64, f64, u64)>>>()?;
    UpdateHistogram::from_rows(&parsed)
}
