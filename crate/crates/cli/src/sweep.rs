//! Cartesian hyperparameter sweeps: one run directory per cell and seed, one
//! summary row per cell.

use std::path::PathBuf;

use serde_json::Value;

use crate::error::{Classify, CliError, CliResult};
use crate::manifest::{self, ExperimentManifest};
use crate::pipeline::{run_train, RunOutcome};

pub const SWEEP_SCHEMA: &str = "# schema=sweep_summary/1";

/// Ordered axes: dotted key and its candidate values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub axes: Vec<(String, Vec<Value>)>,
}

impl SweepGrid {
    /// `{"ddpg.batch": [16, 32], ...}`; keys are taken in sorted order.
    pub fn from_json(v: &Value) -> CliResult<Self> {
        let map = v.as_object().ok_or_else(|| CliError::usage("sweep grid must be a JSON object"))?;
        let mut grid = Self::default();
        for (k, vals) in map {
            let vals = vals.as_array().ok_or_else(|| CliError::usage(format!("sweep axis `{k}` must be an array")))?;
            grid.push(k.clone(), vals.clone())?;
        }
        Ok(grid)
    }

    /// `key=v1,v2,...`
    pub fn push_spec(&mut self, spec: &str) -> CliResult<()> {
        let (k, vals) =
            spec.split_once('=').ok_or_else(|| CliError::usage(format!("axis `{spec}` is not `key=v1,v2`")))?;
        self.push(k.replace('-', "_"), vals.split(',').map(manifest::parse_value).collect())
    }

    fn push(&mut self, key: String, vals: Vec<Value>) -> CliResult<()> {
        if vals.is_empty() {
            return Err(CliError::usage(format!("sweep axis `{key}` has no values")));
        }
        if self.axes.iter().any(|(k, _)| *k == key) {
            return Err(CliError::usage(format!("sweep axis `{key}` given twice")));
        }
        self.axes.push((key, vals));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.1.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assignment of cell `idx`, the last axis varying fastest.
    pub fn cell(&self, mut idx: usize) -> Vec<(String, Value)> {
        let mut out = vec![(String::new(), Value::Null); self.axes.len()];
        for (a, (k, vals)) in self.axes.iter().enumerate().rev() {
            out[a] = (k.clone(), vals[idx % vals.len()].clone());
            idx /= vals.len();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub index: usize,
    pub assignment: Vec<(String, Value)>,
    pub outcome: Result<Vec<RunOutcome>, String>,
}

fn run_cell(base: &Value, sweep_id: &str, index: usize, assignment: Vec<(String, Value)>) -> CellResult {
    let attempt = || -> CliResult<Vec<RunOutcome>> {
        let mut user = base.clone();
        for (k, v) in &assignment {
            manifest::set_path(&mut user, k, v.clone())?;
        }
        manifest::set_path(&mut user, "run_id", Value::from(format!("{sweep_id}-c{index:03}")))?;
        let m: ExperimentManifest = manifest::resolve_value(user, None)?;
        run_train(&m)
    };
    let outcome = attempt().map_err(|e| e.to_string());
    CellResult { index, assignment, outcome }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn summary_csv(grid: &SweepGrid, cells: &[CellResult]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cell".to_string()];
    header.extend(grid.axes.iter().map(|a| a.0.clone()));
    header
        .extend(["status", "runs", "exploitability_mean", "exploitability_std", "run_dirs", "error"].map(String::from));
    w.write_record(&header).runtime()?;
    for c in cells {
        let mut rec = vec![c.index.to_string()];
        rec.extend(c.assignment.iter().map(|(_, v)| v.to_string()));
        match &c.outcome {
            Ok(runs) => {
                let totals: Vec<f64> = runs.iter().filter_map(|r| r.report.as_ref().map(|r| r.total)).collect();
                let (mean, std) = if totals.is_empty() {
                    (String::new(), String::new())
                } else {
                    let (m, s) = mean_std(&totals);
                    (m.to_string(), s.to_string())
                };
                let dirs: Vec<String> = runs.iter().map(|r| r.dir.display().to_string()).collect();
                rec.extend(["ok".into(), runs.len().to_string(), mean, std, dirs.join(";"), String::new()]);
            }
            Err(e) => rec.extend([
                "failed".into(),
                "0".into(),
                String::new(),
                String::new(),
                String::new(),
                e.replace('\n', " "),
            ]),
        }
        w.write_record(&rec).runtime()?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?).runtime()?;
    Ok(format!("{SWEEP_SCHEMA}\n{body}"))
}

pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub summary: PathBuf,
}

/// Runs every cell of `grid` on at most `jobs` threads and writes the summary
/// to `<outdir>/<sweep_id>-summary.csv`. Failed cells are recorded, not fatal.
pub fn run_sweep(base: &Value, grid: &SweepGrid, sweep_id: &str, jobs: usize) -> CliResult<SweepOutcome> {
    if grid.axes.is_empty() {
        return Err(CliError::usage("sweep needs at least one axis"));
    }
    // validate the shared part up front so a typo fails once, not per cell
    let probe = manifest::resolve_value(base.clone(), None)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().runtime()?;
    let cells: Vec<CellResult> = pool.install(|| {
        use rayon::prelude::*;
        (0..grid.len()).into_par_iter().map(|idx| run_cell(base, sweep_id, idx, grid.cell(idx))).collect()
    });
    let summary = probe.outdir.join(format!("{sweep_id}-summary.csv"));
    crate::artifacts::write_file(&summary, &summary_csv(grid, &cells)?)?;
    Ok(SweepOutcome { cells, summary })
}
