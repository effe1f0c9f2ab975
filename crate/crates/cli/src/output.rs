//! Artifact writers: CSV tables, the JSON summary and wave function dumps.

use crate::config::ScenarioConfig;
use crate::scenarios::{Check, Report, RunError, Table};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// Machine-readable record of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub passed: bool,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub traceability: Vec<String>,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub table: String,
    pub wavefunctions: Vec<String>,
    pub config: ScenarioConfig,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

/// Numbers in shortest round-trip form, scientific outside `[1e-4, 1e15)`;
/// NaN becomes an empty field.
fn cell(x: f64) -> String {
    let a = x.abs();
    if x.is_nan() {
        String::new()
    } else if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn write_table(table: &Table, path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(&table.header).map_err(|e| io_err(path, e))?;
    for row in &table.rows {
        w.write_record(row.iter().map(|x| cell(*x))).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// `name` itself for a single dump, else `stem_k.ext`.
fn indexed_name(name: &str, k: usize, total: usize) -> String {
    if total == 1 {
        return name.to_string();
    }
    let p = Path::new(name);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    let with_index = match p.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}_{k}.{ext}"),
        None => format!("{stem}_{k}"),
    };
    match p.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => dir.join(with_index).to_string_lossy().into_owned(),
        None => with_index,
    }
}

fn out_path(dir: &Path, name: &str) -> Result<PathBuf, RunError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(path)
}

/// Writes every artifact of `report` under `dir` and returns the summary.
pub fn write_report(cfg: &ScenarioConfig, report: &Report, seed: u64, dir: &Path) -> Result<Summary, RunError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let table_name = cfg.table_name();
    write_table(&report.table, &out_path(dir, &table_name)?)?;
    let mut dumps = Vec::new();
    if let Some(name) = &cfg.outputs.wavefunction {
        let total = report.wavefunctions.len();
        for (k, psi) in report.wavefunctions.iter().enumerate() {
            let file = indexed_name(name, k, total);
            let path = out_path(dir, &file)?;
            let f = File::create(&path).map_err(|e| io_err(&path, e))?;
            if file.ends_with(".csv") {
                psi.write_csv(BufWriter::new(f))?;
            } else {
                psi.write_binary(&mut BufWriter::new(f))?;
            }
            dumps.push(file);
        }
    }
    let summary = Summary {
        scenario: cfg.scenario.name().to_string(),
        passed: report.passed(),
        seed,
        checks: report.checks.clone(),
        traceability: report.traceability.iter().map(|s| s.to_string()).collect(),
        metrics: report.metrics.iter().map(|(k, v)| (k.clone(), v.is_finite().then_some(*v))).collect(),
        table: table_name,
        wavefunctions: dumps,
        config: cfg.clone(),
    };
    let path = out_path(dir, &cfg.summary_name())?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    #[test]
    fn indexed_names() {
        assert_eq!(indexed_name("psi.csv", 0, 1), "psi.csv");
        assert_eq!(indexed_name("psi.csv", 2, 3), "psi_2.csv");
        assert_eq!(indexed_name("dumps/psi.bin", 1, 2), "dumps/psi_1.bin");
        assert_eq!(indexed_name("psi", 1, 2), "psi_1");
    }

    #[test]
    fn nan_cells_are_empty() {
        assert_eq!(cell(f64::NAN), "");
        assert_eq!(cell(0.1), "0.1");
        assert_eq!(cell(-2.5e-12), "-2.5e-12");
        assert_eq!(cell(1e20), "1e20");
        assert_eq!(f64::from_str(&cell(1.0 / 3.0)).unwrap(), 1.0 / 3.0);
    }
}
