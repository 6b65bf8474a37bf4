//! CSV export of run logs.

use std::io::{Read, Write};
use std::path::Path;

use super::runner::RunLog;
use crate::error::{Error, Result};
use crate::pack_model::OUTPUTS_PER_CELL;

pub fn header(n_modules: usize, m_parallel: usize) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    for i in 1..=n_modules {
        for j in 1..=m_parallel {
            for q in ["V", "T", "I", "SOC"] {
                h.push(format!("{q}_{i}_{j}"));
            }
        }
    }
    h.extend((1..=n_modules).map(|i| format!("Ib_{i}")));
    h.push("step_time_s".into());
    h
}

/// Write the log. Step times are written only with `timing`, so that
/// repeated runs produce identical files.
pub fn write_csv<W: Write>(log: &RunLog, out: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(log.n_modules, log.m_parallel))?;
    for r in &log.records {
        let step = if timing { r.diagnostics.wall_time } else { 0.0 };
        let row = std::iter::once(r.t)
            .chain(r.y.iter().copied())
            .chain(r.ib.iter().copied())
            .chain(std::iter::once(step))
            .map(|v| v.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(log: &RunLog, path: &Path, timing: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(log, std::fs::File::create(path)?, timing)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn n_cells(&self) -> usize {
        self.header.iter().filter(|h| h.starts_with("V_")).count()
    }

    pub fn n_modules(&self) -> usize {
        self.header.iter().filter(|h| h.starts_with("Ib_")).count()
    }

    /// Column count implied by the pack size.
    pub fn expected_columns(n_cells: usize, n_modules: usize) -> usize {
        1 + OUTPUTS_PER_CELL * n_cells + n_modules + 1
    }
}

pub fn read_csv<R: Read>(input: R) -> Result<CsvTable> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(Error::Config("ragged CSV row".into()));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}
