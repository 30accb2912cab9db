use std::fs;

use datagrad_core::hypergrad::IterationRecord;
use datagrad_harness::artifacts::{compare_dirs, find_runs, load_run, sweep, FileSink};
use datagrad_harness::experiment::RunSink;
use datagrad_harness::report::{compare, mean_stderr, read_csv, CsvRow, SummaryRow, CSV_HEADER};
use datagrad_harness::{build_gap_experiment, run, ExperimentConfig, HarnessError, Method};

fn quick(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.outer.budget = 3;
    cfg.outer.per_class = 8;
    cfg.eval.test_per_class = 20;
    cfg.eval.train_per_class = 10;
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn run_directory_has_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    let (dir, out) = sweep(&cfg, &[Method::Nso], &[4]).unwrap().remove(0);
    assert!(dir.ends_with(format!("{}/nso/seed-4", cfg.hash())));
    for f in ["manifest.json", "config.toml", "log.jsonl", "summary.csv", "distribution.csv", "distribution.svg", "accuracy.svg"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + out.rows.len());
    assert_eq!(fs::read_to_string(dir.join("log.jsonl")).unwrap().lines().count(), cfg.outer.budget);
    let pgms = fs::read_dir(dir.join("samples")).unwrap().count();
    assert_eq!(pgms, 4);
    let saved = ExperimentConfig::load(Some(&dir.join("config.toml")), &[]).unwrap();
    assert_eq!(saved.hash(), cfg.hash());
    assert!(fs::read_to_string(dir.join("distribution.svg")).unwrap().contains("<svg"));
}

#[test]
fn sweep_matches_single_runs_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let a = quick(&tmp.path().join("a"));
    let b = quick(&tmp.path().join("b"));
    let many = sweep(&a, &[Method::Ns, Method::Nso], &[0, 1, 2]).unwrap();
    for (dir, out) in &many {
        let (single, _) = sweep(&b, &[out.method], &[out.seed]).unwrap().remove(0);
        for f in ["summary.csv", "log.jsonl", "distribution.csv"] {
            assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(single.join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn compare_of_one_run_reproduces_its_final_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    let (dir, out) = sweep(&cfg, &[Method::Nso], &[7]).unwrap().remove(0);
    let report = compare_dirs(&[dir], &tmp.path().join("report")).unwrap();
    let s = &report.summary[0];
    let last = out.final_row();
    assert_eq!(report.summary.len(), 1);
    assert_eq!((s.runs, s.val_accuracy_mean, s.val_accuracy_stderr), (1, last.val_accuracy, 0.0));
    assert_eq!((s.val_loss_mean, s.tv_distance_mean), (last.val_loss, last.tv_distance));
    assert_eq!(s.config_hash, cfg.hash());
    let on_disk: Vec<SummaryRow> = read_csv(&tmp.path().join("report/summary.csv")).unwrap();
    assert_eq!(on_disk, report.summary);
    for f in ["finals.csv", "rows.csv", "accuracy.svg", "curves.svg"] {
        assert!(tmp.path().join("report").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn compare_is_order_invariant_and_recomputes_means() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    sweep(&cfg, &[Method::Ns, Method::Nso], &[0, 1, 2, 3]).unwrap();
    let mut runs: Vec<_> = find_runs(&[tmp.path().to_path_buf()])
        .unwrap()
        .iter()
        .map(|d| load_run(d).unwrap())
        .collect();
    assert_eq!(runs.len(), 8);
    let forward = compare(&runs).unwrap();
    runs.reverse();
    runs.swap(1, 5);
    let shuffled = compare(&runs).unwrap();
    assert_eq!(forward.summary, shuffled.summary);
    assert_eq!(forward.rows, shuffled.rows);

    for s in &forward.summary {
        let accs: Vec<f64> = forward.finals.iter().filter(|r| r.method == s.method).map(|r| r.val_accuracy).collect();
        let (m, e) = mean_stderr(&accs);
        assert_eq!((accs.len(), m, e), (s.runs, s.val_accuracy_mean, s.val_accuracy_stderr));
    }
    let (m, e) = mean_stderr(&[0.5, 0.7, 0.9]);
    assert!((m - 0.7).abs() < 1e-15 && (e - 0.2 / 3f64.sqrt()).abs() < 1e-15);
}

#[test]
fn compare_rejects_mixed_configs_and_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let a = quick(&tmp.path().join("a"));
    let mut b = a.clone();
    b.out = tmp.path().join("b");
    b.outer.lr = 0.1;
    sweep(&a, &[Method::Ns], &[0]).unwrap();
    sweep(&b, &[Method::Ns], &[0]).unwrap();
    let err = compare_dirs(&[tmp.path().to_path_buf()], &tmp.path().join("r")).unwrap_err();
    assert!(matches!(err, HarnessError::MixedHash(..)));
    assert_eq!(err.exit_code(), 2);

    let run = load_run(&find_runs(&[tmp.path().join("a")]).unwrap()[0]).unwrap();
    assert!(compare(&[run.clone(), run]).is_err());
}

/// Forwards to a file sink and fails on the third iteration record.
struct Failing {
    inner: FileSink,
    seen: usize,
}

impl RunSink for Failing {
    fn record(&mut self, rec: &IterationRecord) -> datagrad_harness::Result<()> {
        self.seen += 1;
        if self.seen == 3 {
            return Err(HarnessError::Config("stop".into()));
        }
        self.inner.record(rec)
    }

    fn row(&mut self, row: &CsvRow) -> datagrad_harness::Result<()> {
        self.inner.row(row)
    }
}

#[test]
fn aborted_runs_leave_flushed_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = quick(tmp.path());
    cfg.outer.budget = 5;
    let exp = build_gap_experiment(&cfg).unwrap();
    let mut sink = Failing {
        inner: FileSink::create(tmp.path()).unwrap(),
        seen: 0,
    };
    assert!(run(&exp, &cfg, Method::Nso, 0, &mut sink).is_err());
    // nothing dropped or flushed after the failure: read while the sink is alive
    let logged = fs::read_to_string(tmp.path().join("log.jsonl")).unwrap().lines().count();
    let rows: Vec<CsvRow> = read_csv(&tmp.path().join("summary.csv")).unwrap();
    assert_eq!(logged, 2);
    assert_eq!(rows.len(), 2);
    drop(sink);
}
