//! Quick oracle checks runnable from the CLI.

use datagrad_core::autodiff::Tape;
use datagrad_core::hypergrad::{
    build_train_set, conjugate_gradient, grad_nerf_sample, grad_nerf_sample_dense, outer_gradient,
    CgConfig, Classifier, HypergradConfig, IdentityRenderer, InnerSolver, MemoryProbe, Problem,
    QuadraticProxy,
};
use datagrad_core::learner::{Architecture, Dataset, ModelParams, Role, TrainConfig};
use datagrad_core::renderer::{render, PatchLayout, RenderParams, SceneSpec};
use datagrad_core::sampler::{gumbel_weights, BinDistribution, DrawMode, RenderDistribution};
use datagrad_core::{Real, Result};

pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tol
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn autodiff_fd() -> Result<f64> {
    let f = |x: &[f64]| (x[0] * x[1]).sin() + x[0].exp() / (1.0 + x[1] * x[1]);
    let x = [0.4, -1.3];
    let tape = Tape::new();
    let v = tape.vars(&x);
    let y = (v[0] * v[1]).sin() + v[0].exp() / (v[1] * v[1] + 1.0);
    let g = tape.grad(y, &v)?;
    let h = 1e-6;
    let fd: Vec<f64> = (0..2)
        .map(|i| {
            let (mut a, mut b) = (x, x);
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect();
    Ok(rel(&g, &fd))
}

fn cg_diagonal() -> Result<f64> {
    let d = [1.0, 2.0, 5.0, 10.0];
    let b = [1.0, -1.0, 2.0, 0.5];
    let cfg = CgConfig {
        max_iters: None,
        residual_tol: 1e-14,
        damping: 0.0,
    };
    let sol = conjugate_gradient(|v: &[f64]| Ok(v.iter().zip(&d).map(|(x, di)| x * di).collect()), &b, &cfg)?;
    let exact: Vec<f64> = b.iter().zip(&d).map(|(x, di)| x / di).collect();
    Ok(rel(&sol.z, &exact))
}

fn quadratic_hypergradient() -> Result<f64> {
    let dist = RenderDistribution::pose_only(BinDistribution::new(vec![0.3, -0.2, 0.5, 0.1], 0.0, 360.0)?);
    let val = Dataset::new(vec![render(&IdentityRenderer, 0, &RenderParams::new(1.0, 0.0, 1.0)?)?], Role::Val)?;
    let problem = Problem {
        scene: &IdentityRenderer,
        model: &QuadraticProxy,
        val: &val,
    };
    let cfg = HypergradConfig {
        per_class: 5,
        cg: CgConfig {
            max_iters: None,
            residual_tol: 1e-14,
            damping: 0.0,
        },
        patches: 1,
        ..Default::default()
    };
    let report = outer_gradient(&problem, &dist, &[0.0], &cfg, 1)?;
    let geom = dist.phi.geometry();
    let samples = build_train_set(&IdentityRenderer, &dist, 5, 1, DrawMode::Relaxed, 1)?;
    let vbar = samples.iter().map(|s| s.example.params.phi).sum::<f64>() / 5.0;
    let mut expect = vec![0.0; 4];
    for s in &samples {
        let tape = Tape::new();
        let y = gumbel_weights(&tape.vars(dist.phi.logits()), &s.noise.phi.gumbels, dist.tau);
        let bce: f64 = y.iter().zip(&geom.centers).map(|(a, c)| a.value() * c).sum();
        for l in 0..4 {
            expect[l] += vbar * y[l].value() * (geom.centers[l] - bce) / dist.tau / 5.0;
        }
    }
    Ok(rel(&report.grad_psi, &expect))
}

fn contraction_orders() -> Result<(f64, f64)> {
    let scene = SceneSpec::<f64>::rotated_bars(8, 2);
    let arch = Architecture::mlp(64, &[], 2);
    let model = Classifier {
        arch: arch.clone(),
        inner: InnerSolver::Sgd(TrainConfig::default()),
    };
    let theta = ModelParams::<f64>::init(arch, 3)?.theta;
    let mut dist = RenderDistribution::pose_only(BinDistribution::new(vec![0.2, -0.4, 0.1, 0.0], 0.0, 360.0)?);
    dist.tau = 0.5;
    let samples = build_train_set(&scene, &dist, 1, 1, DrawMode::Relaxed, 4)?;
    let z: Vec<f64> = (0..theta.len()).map(|i| ((i * 5) % 11) as f64 / 11.0 - 0.5).collect();
    let mut probe = MemoryProbe::default();
    let dense = grad_nerf_sample_dense(&model, &scene, &dist, &theta, &z, &samples[0])?;
    let whole = grad_nerf_sample(&model, &scene, &dist, &theta, &z, &samples[0], None, 0, &mut probe)?;
    let mut worst = 0.0f64;
    for s in [2, 4, 16] {
        let layout = PatchLayout::new(64, s)?;
        let g = grad_nerf_sample(&model, &scene, &dist, &theta, &z, &samples[0], Some(&layout), 0, &mut probe)?;
        worst = worst.max(rel(&g, &whole));
    }
    Ok((rel(&whole, &dense), worst))
}

/// Runs every check; a check that errors out reports an infinite error.
pub fn run_all() -> Vec<Check> {
    let val = |r: Result<f64>| r.unwrap_or(f64::INFINITY);
    let (order, patches) = contraction_orders().unwrap_or((f64::INFINITY, f64::INFINITY));
    vec![
        Check { name: "autodiff vs finite differences", error: val(autodiff_fd()), tol: 1e-7 },
        Check { name: "conjugate gradient on a diagonal system", error: val(cg_diagonal()), tol: 1e-10 },
        Check { name: "hypergradient on the quadratic proxy", error: val(quadratic_hypergradient()), tol: 1e-8 },
        Check { name: "ordered contraction vs dense product", error: order, tol: 1e-8 },
        Check { name: "patch-wise vs whole-image gradient", error: patches, tol: 1e-10 },
    ]
}
