use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One line of a run's summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub seed: u64,
    pub iter: usize,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub tv_distance: f64,
    pub grad_norm: f64,
    pub cg_iters: usize,
    pub wall_ms: u64,
}

pub const CSV_HEADER: &str = "method,seed,iter,val_accuracy,val_loss,tv_distance,grad_norm,cg_iters,wall_ms";

/// Per-method aggregate of final rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub val_accuracy_mean: f64,
    pub val_accuracy_stderr: f64,
    pub val_loss_mean: f64,
    pub val_loss_stderr: f64,
    pub tv_distance_mean: f64,
    pub tv_distance_stderr: f64,
    pub config_hash: String,
}

pub fn write_csv<S: Serialize>(rows: &[S]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn read_csv<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    let bad = |msg: String| HarnessError::Artifact {
        path: path.display().to_string(),
        msg,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| bad(e.to_string()))).collect()
}

/// `(mean, standard error)`; the error of a single value is 0.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A finished run as read back for comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub config_hash: String,
    pub rows: Vec<CsvRow>,
}

impl RunSummary {
    pub fn final_row(&self) -> Option<&CsvRow> {
        self.rows.iter().max_by_key(|r| r.iter)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// Final row of every run, sorted by method and seed.
    pub finals: Vec<CsvRow>,
    /// All rows of all runs, sorted by method, seed and iteration.
    pub rows: Vec<CsvRow>,
    pub summary: Vec<SummaryRow>,
}

/// Aggregates runs of one config across seeds and methods. Output does not
/// depend on the order of `runs`.
pub fn compare(runs: &[RunSummary]) -> Result<Report> {
    let Some(first) = runs.first() else {
        return Err(HarnessError::Config("nothing to compare".into()));
    };
    let hash = &first.config_hash;
    let mut seen = runs.iter().map(|r| &r.config_hash).collect::<Vec<_>>();
    seen.sort();
    if seen.first() != seen.last() {
        return Err(HarnessError::MixedHash(seen[0].clone(), seen[seen.len() - 1].clone()));
    }
    let key = |r: &CsvRow| (r.method.clone(), r.seed, r.iter);
    let mut finals: Vec<CsvRow> = runs
        .iter()
        .map(|r| {
            r.final_row().cloned().ok_or_else(|| HarnessError::Artifact {
                path: "summary.csv".into(),
                msg: "run has no rows".into(),
            })
        })
        .collect::<Result<_>>()?;
    finals.sort_by_key(key);
    if finals.windows(2).any(|w| w[0].method == w[1].method && w[0].seed == w[1].seed) {
        return Err(HarnessError::Config("the same method and seed appear twice".into()));
    }
    let mut rows: Vec<CsvRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    rows.sort_by_key(key);

    let mut groups: BTreeMap<&str, Vec<&CsvRow>> = BTreeMap::new();
    for r in &finals {
        groups.entry(&r.method).or_default().push(r);
    }
    let summary = groups
        .into_iter()
        .map(|(method, rs)| {
            let col = |f: fn(&CsvRow) -> f64| mean_stderr(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (am, ae) = col(|r| r.val_accuracy);
            let (lm, le) = col(|r| r.val_loss);
            let (tm, te) = col(|r| r.tv_distance);
            SummaryRow {
                method: method.to_string(),
                runs: rs.len(),
                val_accuracy_mean: am,
                val_accuracy_stderr: ae,
                val_loss_mean: lm,
                val_loss_stderr: le,
                tv_distance_mean: tm,
                tv_distance_stderr: te,
                config_hash: hash.clone(),
            }
        })
        .collect();
    Ok(Report { finals, rows, summary })
}
