//! Merges finished run directories into combined tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, Manifest, PipelineError, SCHEMA};
use crate::smoothing::least_squares;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema: String,
    pub runs: Vec<String>,
    pub d: Option<usize>,
    pub statuses: Vec<String>,
    pub measure_rows: usize,
    /// Slope of `log(excluded fraction)` against `log κ` over all merged rows.
    pub measure_slope: Option<f64>,
    pub smooth_rows: usize,
    pub trace_rows: usize,
    pub outputs: Vec<String>,
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// One merged table; `header` is fixed by the first run that provides it.
struct Table {
    header: Option<Vec<String>>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new() -> Self {
        Self { header: None, rows: Vec::new() }
    }

    fn absorb(&mut self, path: &Path, prefix: &[String]) -> Result<(), PipelineError> {
        let (h, rows) = read_csv(path)?;
        match &self.header {
            None => self.header = Some(h),
            Some(old) if *old != h => {
                return Err(PipelineError::Config(format!("{}: columns differ from earlier runs", path.display())))
            }
            _ => {}
        }
        self.rows.extend(rows.into_iter().map(|r| prefix.iter().cloned().chain(r).collect()));
        Ok(())
    }

    fn write(&self, path: &Path, lead: &[&str], default: &[&str], extra: Option<(&str, Vec<String>)>) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
        head.extend(self.header.clone().unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect()));
        if let Some((name, _)) = &extra {
            head.push(name.to_string());
        }
        let fail = |e: csv::Error| PipelineError::Numeric(format!("csv: {e}"));
        w.write_record(&head).map_err(fail)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut r = r.clone();
            if let Some((_, col)) = &extra {
                r.push(col[i].clone());
            }
            w.write_record(&r).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| PipelineError::Numeric(format!("csv: {e}")))?;
        fs::write(path, bytes).map_err(io_err(path))
    }
}

const MEASURE_COLS: &[&str] = &["kappa", "k_cut", "excluded", "total", "fraction", "fitted_slope"];
const SMOOTH_COLS: &[&str] = &["sigma", "error", "fitted_slope", "residual"];
const TRACE_COLS: &[&str] = &["nu", "eps", "p_norm"];

/// Merges the run directories `inputs` into `out`. An empty input list
/// gives empty tables. Runs must share the manifest schema and `d`.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<ReportSummary, PipelineError> {
    let mut manifests = Vec::new();
    for dir in inputs {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let schema = value.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if schema != SCHEMA {
            return Err(PipelineError::Config(format!("{}: schema '{schema}' is not {SCHEMA}", path.display())));
        }
        let m: Manifest = serde_json::from_value(value).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        manifests.push((dir.clone(), m));
    }
    let d = manifests.first().map(|(_, m)| m.d);
    if let Some(d0) = d {
        if let Some((dir, m)) = manifests.iter().find(|(_, m)| m.d != d0) {
            return Err(PipelineError::Config(format!(
                "schema error: mixed dimensions, {} has d = {} but the first run has d = {d0}",
                dir.display(),
                m.d
            )));
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut measure = Table::new();
    let mut smooth = Table::new();
    let mut trace = Table::new();
    let mut runs = Vec::new();
    for (r, (dir, m)) in manifests.iter().enumerate() {
        let tag = vec![r.to_string()];
        runs.push(dir.display().to_string());
        for name in &m.outputs {
            let path = dir.join(name);
            if name == "measure.csv" {
                measure.absorb(&path, &tag)?;
            } else if name == "smooth_rate.csv" {
                smooth.absorb(&path, &tag)?;
            } else if let Some(idx) = name.strip_prefix("trace_").and_then(|s| s.strip_suffix(".csv")) {
                trace.absorb(&path, &[r.to_string(), idx.to_string()])?;
            }
        }
    }

    let slope = measure_slope(&measure);
    let col = vec![slope.map(|s| format!("{s:e}")).unwrap_or_default(); measure.rows.len()];
    measure.write(&out.join("merged_measure.csv"), &["run"], MEASURE_COLS, Some(("merged_slope", col)))?;
    smooth.write(&out.join("merged_smooth_rate.csv"), &["run"], SMOOTH_COLS, None)?;
    trace.write(&out.join("merged_trace.csv"), &["run", "omega_index"], TRACE_COLS, None)?;
    let summary = ReportSummary {
        schema: SCHEMA.into(),
        runs,
        d,
        statuses: manifests.iter().map(|(_, m)| m.status.clone()).collect(),
        measure_rows: measure.rows.len(),
        measure_slope: slope,
        smooth_rows: smooth.rows.len(),
        trace_rows: trace.rows.len(),
        outputs: vec![
            "merged_measure.csv".into(),
            "merged_smooth_rate.csv".into(),
            "merged_trace.csv".into(),
            "report.json".into(),
        ],
    };
    let path = out.join("report.json");
    let text = serde_json::to_string_pretty(&summary).expect("serializable") + "\n";
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(summary)
}

fn measure_slope(t: &Table) -> Option<f64> {
    let h = t.header.as_ref()?;
    let kc = h.iter().position(|c| c == "kappa")? + 1;
    let fc = h.iter().position(|c| c == "fraction")? + 1;
    let mut xy = Vec::new();
    for r in &t.rows {
        let (k, f): (f64, f64) = (r[kc].parse().ok()?, r[fc].parse().ok()?);
        if k > 0.0 && f > 0.0 {
            xy.push((k.ln(), f.ln()));
        }
    }
    least_squares(&xy).map(|fit| fit.0)
}
