use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{McReport, NormalizedErrors, TailTable};
use crate::error::{QlaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub wall_seconds: f64,
    pub threads: usize,
    pub replications: usize,
}

pub fn write_errors_csv<W: Write>(mut out: W, errors: &[NormalizedErrors], labels: &[String]) -> std::io::Result<()> {
    writeln!(out, "rep_index,scheme_index,method,{}", labels.join(","))?;
    for e in errors {
        let coords: Vec<String> = e.coordinates().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{},{},{},{}", e.rep_index, e.scheme_index, e.method, coords.join(","))?;
    }
    Ok(())
}

pub fn write_tail_csv<W: Write>(mut out: W, table: &TailTable) -> std::io::Result<()> {
    writeln!(out, "scheme_index,field,r,frequency,replications,exhausted")?;
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{:e},{:e},{},{}",
            r.scheme_index,
            r.field.as_str(),
            r.r,
            r.frequency,
            r.replications,
            r.exhausted
        )?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| QlaError::io(path, e))
}

/// Writes `report.json`, `errors.csv` and `tail.csv` (plus `runtime.json`
/// when timings are present) and returns the paths written.
pub fn emit_report(report: &McReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| QlaError::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| QlaError::Config(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| QlaError::io(&path, e))?;
    written.push(path);

    let path = dir.join("errors.csv");
    let labels = report.groups.first().map(|g| g.labels.clone()).unwrap_or_default();
    let mut w = create(&path)?;
    write_errors_csv(&mut w, &report.errors, &labels)
        .and_then(|_| w.flush())
        .map_err(|e| QlaError::io(&path, e))?;
    written.push(path);

    let path = dir.join("tail.csv");
    let mut w = create(&path)?;
    write_tail_csv(&mut w, report.tail.as_ref().unwrap_or(&TailTable::default()))
        .and_then(|_| w.flush())
        .map_err(|e| QlaError::io(&path, e))?;
    written.push(path);

    if let Some(rt) = &report.runtime {
        let path = dir.join("runtime.json");
        let json = serde_json::to_string_pretty(rt).map_err(|e| QlaError::Config(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| QlaError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
