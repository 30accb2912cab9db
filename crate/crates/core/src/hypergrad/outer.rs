use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cg::{conjugate_gradient, CgConfig, CgSolution};
use super::nerf::{grad_nerf_sample, score_sample, MemoryProbe};
use super::samples::{build_train_set, to_dataset, TrainSample};
use super::task::TaskModel;
use crate::autodiff::{HessianOperator, Tape};
use crate::error::{Error, Result};
use crate::learner::Dataset;
use crate::renderer::{RenderedExample, Renderer};
use crate::sampler::{project_simplex, tv_distance, BlockKind, DrawMode, RenderDistribution};
use crate::scalar::{Real, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Reparametrized gradient through relaxed draws and the renderer.
    Pathwise,
    /// REINFORCE over hard categorical draws.
    ScoreFunction,
}

/// Which training images define the Hessian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianSamples {
    Same,
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypergradConfig {
    /// Training images per class and outer iteration.
    pub per_class: usize,
    #[serde(default)]
    pub cg: CgConfig,
    pub estimator: Estimator,
    pub hessian_samples: HessianSamples,
    /// Patches per image for the renderer contraction.
    pub patches: usize,
}

impl Default for HypergradConfig {
    fn default() -> Self {
        Self {
            per_class: 50,
            cg: CgConfig::default(),
            estimator: Estimator::Pathwise,
            hessian_samples: HessianSamples::Same,
            patches: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermNorms<T> {
    /// `‖∇_θ L_val‖`
    pub val_grad: T,
    /// `‖z‖`, the inverse-Hessian-vector product.
    pub tv: T,
    /// Norm of each per-sample renderer term.
    pub per_sample: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypergradReport<T> {
    /// `dL_val/dψ`, zero on frozen blocks.
    pub grad_psi: Vec<T>,
    pub cg_residual: T,
    pub cg_iters: usize,
    /// False when CG stopped at `max_iters` above tolerance.
    pub cg_converged: bool,
    pub term_norms: TermNorms<T>,
    /// Per-sample seeds of the training images.
    pub samples: Vec<u64>,
    pub theta_hat: Vec<T>,
    pub train_loss: T,
    pub train_grad_norm: T,
    pub val_loss: T,
    pub val_accuracy: f64,
    pub memory: MemoryProbe,
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

fn refs<T: Scalar>(data: &Dataset<T>) -> Vec<&RenderedExample<T>> {
    data.examples().iter().collect()
}

/// `(L_val(θ), ∇_θ L_val(θ))`.
pub fn val_value_grad<T: Scalar, M: TaskModel<T>>(
    model: &M,
    theta: &[T],
    val: &Dataset<T>,
) -> Result<(T, Vec<T>)> {
    let tape = Tape::new();
    let th = tape.vars(theta);
    let l = model.val_loss(&th, val);
    Ok((l.value(), tape.grad(l, &th)?))
}

/// `z = (H + λI)⁻¹ ∇_θ L_val` with `H` the Hessian of the training objective
/// on `train`, by conjugate gradient on Hessian-vector products.
pub fn solve_tv<T: Scalar, M: TaskModel<T>>(
    model: &M,
    theta_hat: &[T],
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &CgConfig,
) -> Result<CgSolution<T>> {
    let (_, g) = val_value_grad(model, theta_hat, val)?;
    solve_tv_with_rhs(model, theta_hat, train, &g, cfg)
}

fn solve_tv_with_rhs<T: Scalar, M: TaskModel<T>>(
    model: &M,
    theta_hat: &[T],
    train: &Dataset<T>,
    rhs: &[T],
    cfg: &CgConfig,
) -> Result<CgSolution<T>> {
    let ex = refs(train);
    let op = HessianOperator::new(theta_hat, |th| model.train_objective(th, &ex))?;
    conjugate_gradient(|v| op.apply(v), rhs, cfg)
}

/// Everything fixed across outer iterations.
pub struct Problem<'a, T: Scalar, S, M> {
    pub scene: &'a S,
    pub model: &'a M,
    pub val: &'a Dataset<T>,
}

/// One hypergradient: render and train (pass 1), solve for `z`, then replay
/// the identical draws with gradients on (pass 2).
pub fn outer_gradient<T, S, M>(
    problem: &Problem<'_, T, S, M>,
    dist: &RenderDistribution<T>,
    theta_init: &[T],
    cfg: &HypergradConfig,
    seed: u64,
) -> Result<HypergradReport<T>>
where
    T: Scalar,
    S: Renderer<T>,
    M: TaskModel<T>,
{
    let Problem { scene, model, val } = *problem;
    if theta_init.len() != model.num_params() {
        return Err(Error::LengthMismatch {
            what: "theta",
            expected: model.num_params(),
            got: theta_init.len(),
        });
    }
    let mode = match cfg.estimator {
        Estimator::Pathwise => DrawMode::Relaxed,
        Estimator::ScoreFunction => {
            if dist.blocks().iter().any(|b| b.kind == BlockKind::Lighting && b.trainable) {
                return Err(Error::InvalidArgument(
                    "score-function estimator has no lighting gradient".into(),
                ));
            }
            DrawMode::Hard
        }
    };
    let samples = build_train_set(scene, dist, cfg.per_class, cfg.patches, mode, seed)?;
    let train = to_dataset(&samples)?;
    let fit = model.fit(theta_init, &train)?;
    let theta_hat = fit.theta;

    let (val_loss, val_grad) = val_value_grad(model, &theta_hat, val)?;
    let hessian_data = match cfg.hessian_samples {
        HessianSamples::Same => train,
        HessianSamples::Fresh => {
            let fresh = build_train_set(scene, dist, cfg.per_class, cfg.patches, mode, !seed)?;
            to_dataset(&fresh)?
        }
    };
    let sol = solve_tv_with_rhs(model, &theta_hat, &hessian_data, &val_grad, &cfg.cg)?;
    let z = &sol.z;

    let mut probe = MemoryProbe::default();
    let mut acc = vec![T::zero(); dist.psi_len()];
    let mut per_sample = Vec::with_capacity(samples.len());
    for (j, s) in samples.iter().enumerate() {
        let g = match cfg.estimator {
            Estimator::Pathwise => {
                grad_nerf_sample(model, scene, dist, &theta_hat, z, s, None, j, &mut probe)?
            }
            Estimator::ScoreFunction => score_sample(model, dist, &theta_hat, z, s)?,
        };
        per_sample.push(norm(&g));
        for (a, gi) in acc.iter_mut().zip(g) {
            *a += gi;
        }
    }
    // the single minus sign of the implicit-function hypergradient
    let n = T::from_usize_lossy(samples.len());
    let mut grad_psi: Vec<T> = acc.into_iter().map(|a| -(a / n)).collect();
    for b in dist.blocks() {
        if !b.trainable {
            grad_psi[b.range].iter_mut().for_each(|g| *g = T::zero());
        }
    }
    if grad_psi.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            node: usize::MAX,
            op: "hypergradient",
        });
    }
    let val_accuracy = model.accuracy(&theta_hat, val)?;
    Ok(HypergradReport {
        grad_psi,
        cg_residual: sol.residual,
        cg_iters: sol.iters,
        cg_converged: sol.converged,
        term_norms: TermNorms {
            val_grad: norm(&val_grad),
            tv: norm(z),
            per_sample,
        },
        samples: samples.iter().map(|s: &TrainSample<T>| s.noise.seed).collect(),
        theta_hat,
        train_loss: fit.loss,
        train_grad_norm: fit.grad_norm,
        val_loss,
        val_accuracy,
        memory: probe,
    })
}

/// Momentum buffer carried across outer steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OuterState<T> {
    pub velocity: Vec<T>,
}

/// `v ← μv + g`, `x ← x − lr·v`.
pub fn momentum_step<T: Scalar>(x: &mut [T], g: &[T], lr: T, momentum: T, v: &mut [T]) {
    for ((xi, &gi), vi) in x.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = momentum * *vi + gi;
        *xi -= lr * *vi;
    }
}

/// Momentum step followed by projection onto the simplex.
pub fn projected_step<T: Scalar>(x: &mut [T], g: &[T], lr: T, momentum: T, v: &mut [T]) {
    momentum_step(x, g, lr, momentum, v);
    let p = project_simplex(x);
    x.copy_from_slice(&p);
}

/// SGD with momentum on the logit blocks; projected momentum steps on the
/// lighting coefficients. Frozen blocks are left alone.
pub fn outer_step<T: Scalar>(
    dist: &mut RenderDistribution<T>,
    grad_psi: &[T],
    lr: T,
    momentum: T,
    state: &mut OuterState<T>,
) -> Result<()> {
    let k = dist.psi_len();
    if grad_psi.len() != k {
        return Err(Error::LengthMismatch {
            what: "hypergradient",
            expected: k,
            got: grad_psi.len(),
        });
    }
    if grad_psi.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument("non-finite outer gradient".into()));
    }
    if state.velocity.len() != k {
        state.velocity = vec![T::zero(); k];
    }
    let mut psi = dist.psi();
    for b in dist.blocks().into_iter().filter(|b| b.trainable) {
        let r = b.range;
        let (x, g, v) = (&mut psi[r.clone()], &grad_psi[r.clone()], &mut state.velocity[r]);
        match b.kind {
            BlockKind::Lighting => projected_step(x, g, lr, momentum, v),
            _ => momentum_step(x, g, lr, momentum, v),
        }
    }
    if psi.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            node: usize::MAX,
            op: "outer step",
        });
    }
    dist.set_psi(&psi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub budget: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub warm_start_theta: bool,
    /// Measure iteration time; off keeps logs byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    pub hyper: HypergradConfig,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

/// One line of the per-iteration log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub probs: Vec<f64>,
    pub psi: Vec<f64>,
    pub grad_norm: f64,
    pub cg_residual: f64,
    pub cg_iters: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Distance of the pose probabilities to the target, when one is known.
    pub tv_distance: Option<f64>,
    pub wall_ms: u64,
}

impl IterationRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub records: Vec<IterationRecord>,
    /// Distribution after every iteration, starting with the initial one.
    pub distributions: Vec<RenderDistribution<T>>,
    pub theta: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_distribution(&self) -> &RenderDistribution<T> {
        self.distributions.last().expect("initial distribution is recorded")
    }
}

/// Seed of outer iteration `iter`.
pub fn iteration_seed(seed: u64, iter: usize) -> u64 {
    super::samples::derive_seeds(seed ^ 0x5eed_0f_1e7e, iter + 1)[iter]
}

/// Alternates [`outer_gradient`] and [`outer_step`] for `cfg.budget` iterations.
/// `target` (pose probabilities) only feeds the logged TV distance.
/// `on_record` sees each record as it is produced.
pub fn optimize<T, S, M>(
    problem: &Problem<'_, T, S, M>,
    dist0: &RenderDistribution<T>,
    theta0: &[T],
    cfg: &OptimizeConfig,
    target: Option<&[T]>,
    seed: u64,
    mut on_record: impl FnMut(&IterationRecord) -> Result<()>,
) -> Result<Trajectory<T>>
where
    T: Scalar,
    S: Renderer<T>,
    M: TaskModel<T>,
{
    if cfg.budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    let mut dist = dist0.clone();
    let mut state = OuterState::default();
    let mut theta = theta0.to_vec();
    let mut records = Vec::with_capacity(cfg.budget);
    let mut distributions = vec![dist.clone()];
    let to_f64 = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    for iter in 0..cfg.budget {
        let start = Instant::now();
        let report = outer_gradient(problem, &dist, &theta, &cfg.hyper, iteration_seed(seed, iter))?;
        outer_step(&mut dist, &report.grad_psi, T::c(cfg.lr), T::c(cfg.momentum), &mut state)?;
        if cfg.warm_start_theta {
            theta = report.theta_hat.clone();
        }
        let probs = dist.probs();
        let rec = IterationRecord {
            iter,
            probs: to_f64(&probs),
            psi: to_f64(&dist.psi()),
            grad_norm: norm(&report.grad_psi).to_f64_lossy(),
            cg_residual: report.cg_residual.to_f64_lossy(),
            cg_iters: report.cg_iters,
            train_loss: report.train_loss.to_f64_lossy(),
            val_loss: report.val_loss.to_f64_lossy(),
            val_accuracy: report.val_accuracy,
            tv_distance: target.map(|t| tv_distance(&probs, t).to_f64_lossy()),
            wall_ms: if cfg.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        on_record(&rec)?;
        records.push(rec);
        distributions.push(dist.clone());
    }
    Ok(Trajectory {
        records,
        distributions,
        theta,
    })
}
