use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use datagrad_core::hypergrad::IterationRecord;
use datagrad_core::renderer::encode_pgm;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{build_gap_experiment, run, GapExperiment, Method, RunOutput, RunSink};
use crate::report::{compare, read_csv, write_csv, CsvRow, Report, RunSummary, SummaryRow};
use crate::svg::{bar_chart, line_chart, LineSeries, Series};

/// Training images per class dumped as PGM for each run.
const PGM_PER_CLASS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config_hash: String,
    pub method: Method,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub bin: usize,
    pub test: f64,
    pub initial: f64,
    pub learned: f64,
}

pub fn run_dir(out: &Path, hash: &str, method: Method, seed: u64) -> PathBuf {
    out.join(hash).join(method.name()).join(format!("seed-{seed}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| HarnessError::io(path, e))?))
}

/// Streams the JSONL log and the summary CSV to disk, flushing each line so
/// an aborted run leaves everything up to the failure.
pub struct FileSink {
    log: BufWriter<File>,
    log_path: PathBuf,
    csv: csv::Writer<File>,
    csv_path: PathBuf,
}

impl FileSink {
    pub fn create(dir: &Path) -> Result<Self> {
        let log_path = dir.join("log.jsonl");
        let csv_path = dir.join("summary.csv");
        let log = create(&log_path)?;
        let csv = csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::Artifact {
            path: csv_path.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(Self {
            log,
            log_path,
            csv,
            csv_path,
        })
    }
}

impl RunSink for FileSink {
    fn record(&mut self, rec: &IterationRecord) -> Result<()> {
        writeln!(self.log, "{}", rec.to_json_line())
            .and_then(|_| self.log.flush())
            .map_err(|e| HarnessError::io(&self.log_path, e))
    }

    fn row(&mut self, row: &CsvRow) -> Result<()> {
        let p = &self.csv_path;
        self.csv.serialize(row).map_err(|e| HarnessError::Artifact {
            path: p.display().to_string(),
            msg: e.to_string(),
        })?;
        self.csv.flush().map_err(|e| HarnessError::io(p, e))
    }
}

/// Runs one method on one seed and writes its directory.
pub fn run_to_dir(exp: &GapExperiment, cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<(PathBuf, RunOutput)> {
    let hash = cfg.hash();
    let dir = run_dir(&cfg.out, &hash, method, seed);
    fs::create_dir_all(dir.join("samples")).map_err(|e| HarnessError::io(&dir, e))?;
    let manifest = Manifest {
        config_hash: hash,
        method,
        seed,
    };
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest").as_bytes())?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut sink = FileSink::create(&dir)?;
    let out = run(exp, cfg, method, seed, &mut sink)?;
    drop(sink);

    let test = &exp.test_pose;
    let init = out.initial.probs();
    let learned = out.learned.probs();
    let dist_rows: Vec<DistributionRow> = (0..test.len())
        .map(|b| DistributionRow {
            bin: b,
            test: test[b],
            initial: init[b],
            learned: learned[b],
        })
        .collect();
    write_file(&dir.join("distribution.csv"), &write_csv(&dist_rows))?;
    write_file(&dir.join("distribution.svg"), plot_distribution(&dir.join("distribution.csv"))?.as_bytes())?;
    write_file(&dir.join("accuracy.svg"), plot_curves(&dir.join("summary.csv"))?.as_bytes())?;
    let mut per_class = vec![0usize; exp.model.arch.classes];
    for ex in &out.final_train {
        let c = ex.class();
        if per_class[c] < PGM_PER_CLASS {
            let p = dir.join("samples").join(format!("class{c}_{}.pgm", per_class[c]));
            write_file(&p, &encode_pgm(ex.width, ex.height, &ex.pixels))?;
            per_class[c] += 1;
        }
    }
    Ok((dir, out))
}

/// Every `(method, seed)` pair, spread over worker threads. Each run writes
/// only its own directory, so the output does not depend on scheduling.
pub fn sweep(cfg: &ExperimentConfig, methods: &[Method], seeds: &[u64]) -> Result<Vec<(PathBuf, RunOutput)>> {
    let exp = build_gap_experiment(cfg)?;
    let jobs: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let mut results: Vec<Option<Result<(PathBuf, RunOutput)>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (exp, jobs) = (&exp, &jobs);
                scope.spawn(move || {
                    jobs.iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, &(m, s))| (i, run_to_dir(exp, cfg, m, s)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Finds run directories (those holding `manifest.json`) under `roots`.
pub fn find_runs(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack: Vec<PathBuf> = roots.to_vec();
    while let Some(d) = stack.pop() {
        if d.join("manifest.json").is_file() {
            out.push(d);
            continue;
        }
        let entries = fs::read_dir(&d).map_err(|e| HarnessError::io(&d, e))?;
        for e in entries {
            let p = e.map_err(|e| HarnessError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_run(dir: &Path) -> Result<RunSummary> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| HarnessError::io(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Artifact {
        path: mpath.display().to_string(),
        msg: e.to_string(),
    })?;
    Ok(RunSummary {
        config_hash: m.config_hash,
        rows: read_csv(&dir.join("summary.csv"))?,
    })
}

/// Aggregates the runs under `roots` into `out`: `summary.csv`, `finals.csv`,
/// `rows.csv` and two plots drawn from those files.
pub fn compare_dirs(roots: &[PathBuf], out: &Path) -> Result<Report> {
    let runs = find_runs(roots)?
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    let report = compare(&runs)?;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    write_file(&out.join("summary.csv"), &write_csv(&report.summary))?;
    write_file(&out.join("finals.csv"), &write_csv(&report.finals))?;
    write_file(&out.join("rows.csv"), &write_csv(&report.rows))?;
    write_file(&out.join("accuracy.svg"), plot_summary(&out.join("summary.csv"))?.as_bytes())?;
    write_file(&out.join("curves.svg"), plot_curves(&out.join("rows.csv"))?.as_bytes())?;
    Ok(report)
}

/// Final accuracy per method with standard-error bars.
pub fn plot_summary(summary_csv: &Path) -> Result<String> {
    let rows: Vec<SummaryRow> = read_csv(summary_csv)?;
    Ok(bar_chart(
        "final test accuracy",
        "accuracy",
        &rows.iter().map(|r| r.method.clone()).collect::<Vec<_>>(),
        &[Series {
            name: "mean ± stderr".into(),
            values: rows.iter().map(|r| r.val_accuracy_mean).collect(),
            errors: Some(rows.iter().map(|r| r.val_accuracy_stderr).collect()),
        }],
    ))
}

/// Accuracy against iteration, averaged over seeds, one line per method.
pub fn plot_curves(rows_csv: &Path) -> Result<String> {
    let rows: Vec<CsvRow> = read_csv(rows_csv)?;
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort();
    methods.dedup();
    let series = methods
        .iter()
        .map(|m| {
            let mut by_iter: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            for r in rows.iter().filter(|r| r.method == *m) {
                by_iter.entry(r.iter).or_default().push(r.val_accuracy);
            }
            LineSeries {
                name: m.to_string(),
                points: by_iter
                    .into_iter()
                    .map(|(i, v)| (i as f64, v.iter().sum::<f64>() / v.len() as f64))
                    .collect(),
            }
        })
        .collect::<Vec<_>>();
    Ok(line_chart("test accuracy", "iteration", "accuracy", &series))
}

/// Learned pose distribution against the test and initial distributions.
pub fn plot_distribution(dist_csv: &Path) -> Result<String> {
    let rows: Vec<DistributionRow> = read_csv(dist_csv)?;
    let col = |f: fn(&DistributionRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(bar_chart(
        "pose bin distribution",
        "probability",
        &rows.iter().map(|r| (r.bin + 1).to_string()).collect::<Vec<_>>(),
        &[
            Series { name: "test".into(), values: col(|r| r.test), errors: None },
            Series { name: "initial".into(), values: col(|r| r.initial), errors: None },
            Series { name: "learned".into(), values: col(|r| r.learned), errors: None },
        ],
    ))
}

pub fn report_bytes(report: &Report) -> Vec<u8> {
    let mut v = write_csv(&report.summary);
    v.extend(write_csv(&report.finals));
    v
}
