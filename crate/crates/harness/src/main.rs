use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use datagrad_core::hypergrad::{build_train_set, to_dataset};
use datagrad_core::renderer::{encode_pgm, render, RenderParams};
use datagrad_core::sampler::DrawMode;
use datagrad_harness::artifacts::{compare_dirs, sweep};
use datagrad_harness::experiment::{build_gap_experiment, build_scene};
use datagrad_harness::report::write_csv;
use datagrad_harness::{selftest, ExperimentConfig, HarnessError, Method, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "datagrad", about = "Learn rendering distributions for synthetic training data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this seed only, instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` config override with a dotted key, e.g. `outer.budget=5`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Render one image to a PGM file.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        class: usize,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        zoom: f64,
    },
    /// Write the test set and one training set from the initial distribution.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train once on the initial distribution (NS).
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Optimize the distribution (`nso`) or run the score-function baseline (`score`).
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "nso")]
        method: String,
    },
    /// Aggregate finished runs into tables and plots.
    Compare {
        /// Directories searched for runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Serialize)]
struct ImageRow {
    file: String,
    class: usize,
    phi: f64,
    rho: f64,
    zoom: f64,
}

fn write(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| HarnessError::io(p, e))?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn dump(dir: &Path, name: &str, examples: &[datagrad_core::renderer::RenderedExample<f64>]) -> Result<()> {
    let mut rows = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        let file = format!("{name}/{i:05}.pgm");
        write(&dir.join(&file), &encode_pgm(e.width, e.height, &e.pixels))?;
        rows.push(ImageRow {
            file,
            class: e.class(),
            phi: e.params.phi,
            rho: e.params.rho,
            zoom: e.params.zoom,
        });
    }
    write(&dir.join(format!("{name}.csv")), &write_csv(&rows))
}

fn report_runs(outs: &[(PathBuf, datagrad_harness::RunOutput)]) {
    for (dir, o) in outs {
        let r = o.final_row();
        println!(
            "{} seed {}: accuracy {:.4}, tv {:.4} -> {}",
            o.method.name(),
            o.seed,
            r.val_accuracy,
            r.tv_distance,
            dir.display()
        );
    }
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Render { common, class, phi, rho, zoom } => {
            let cfg = common.load()?;
            let scene = build_scene(&cfg)?;
            let ex = render(&scene, class, &RenderParams::new(phi, rho, zoom)?)?;
            let path = common.out.unwrap_or_else(|| PathBuf::from("render.pgm"));
            write(&path, &encode_pgm(ex.width, ex.height, &ex.pixels))?;
            println!("{}", path.display());
        }
        Cmd::Gen { common } => {
            let cfg = common.load()?;
            let exp = build_gap_experiment(&cfg)?;
            let dir = cfg.out.join(cfg.hash()).join("data");
            dump(&dir, "test", exp.test.examples())?;
            for &s in &cfg.seeds {
                let samples = build_train_set(&exp.renderer, &exp.init, cfg.eval.train_per_class, 1, DrawMode::Hard, s)?;
                dump(&dir, &format!("train-seed-{s}"), to_dataset(&samples)?.examples())?;
            }
            println!("{}", dir.display());
        }
        Cmd::Train { common } => {
            let cfg = common.load()?;
            report_runs(&sweep(&cfg, &[Method::Ns], &cfg.seeds)?);
        }
        Cmd::Optimize { common, method } => {
            let m = Method::parse(&method)
                .filter(|m| *m != Method::Ns)
                .ok_or_else(|| HarnessError::Config(format!("unknown method `{method}` (nso | score)")))?;
            let cfg = common.load()?;
            report_runs(&sweep(&cfg, &[m], &cfg.seeds)?);
        }
        Cmd::Compare { runs, out } => {
            let report = compare_dirs(&runs, &out)?;
            for s in &report.summary {
                println!(
                    "{}: n={} accuracy {:.4} ± {:.4}, tv {:.4} ± {:.4}",
                    s.method, s.runs, s.val_accuracy_mean, s.val_accuracy_stderr, s.tv_distance_mean, s.tv_distance_stderr
                );
            }
        }
        Cmd::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{} {} (error {:.3e}, tolerance {:.0e})", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.error, c.tol);
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                return Err(HarnessError::Selftest(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
