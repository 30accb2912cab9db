use std::ops::Range;

use datagrad_core::hypergrad::{
    build_train_set, optimize, to_dataset, val_value_grad, Classifier, Estimator, HypergradConfig,
    InnerSolver, IterationRecord, OptimizeConfig, Problem, TaskModel,
};
use datagrad_core::learner::{Architecture, Dataset, ModelParams, Role, TrainConfig};
use datagrad_core::renderer::{
    FieldFit, Label, NeuralField, RenderParams, RenderedExample, Renderer, SceneSpec,
};
use datagrad_core::sampler::{
    rng_from_seed, tv_distance, BinDistribution, DrawMode, LightingMixture, ParamSource,
    RenderDistribution,
};
use datagrad_core::{Real, Result as CoreResult};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RendererKind, SolverKind};
use crate::error::{HarnessError, Result};
use crate::report::CsvRow;

/// Probability given to bins with zero configured weight in a training distribution.
const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Train once on the initial distribution.
    Ns,
    /// Optimize the distribution with pathwise hypergradients.
    Nso,
    /// Same outer loop with the score-function estimator.
    Score,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ns, Method::Nso, Method::Score];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ns => "ns",
            Method::Nso => "nso",
            Method::Score => "score",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug)]
pub enum SceneRenderer {
    Analytic(SceneSpec<f64>),
    Neural(NeuralField<f64>),
}

impl Renderer<f64> for SceneRenderer {
    fn width(&self) -> usize {
        match self {
            SceneRenderer::Analytic(s) => s.width(),
            SceneRenderer::Neural(n) => n.width(),
        }
    }

    fn height(&self) -> usize {
        match self {
            SceneRenderer::Analytic(s) => s.height(),
            SceneRenderer::Neural(n) => n.height(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            SceneRenderer::Analytic(s) => Renderer::num_classes(s),
            SceneRenderer::Neural(n) => n.num_classes(),
        }
    }

    fn render_range<R: Real<f64>>(
        &self,
        class: usize,
        params: &RenderParams<R>,
        range: Range<usize>,
    ) -> CoreResult<Vec<R>> {
        match self {
            SceneRenderer::Analytic(s) => s.render_range(class, params, range),
            SceneRenderer::Neural(n) => n.render_range(class, params, range),
        }
    }

    fn label(&self, class: usize, params: &RenderParams<f64>) -> CoreResult<Label> {
        match self {
            SceneRenderer::Analytic(s) => s.label(class, params),
            SceneRenderer::Neural(n) => n.label(class, params),
        }
    }

    fn validate(&self) -> CoreResult<()> {
        match self {
            SceneRenderer::Analytic(s) => Renderer::validate(s),
            SceneRenderer::Neural(n) => n.validate(),
        }
    }
}

/// A train/test setup with a controlled gap between the two distributions.
#[derive(Clone, Debug)]
pub struct GapExperiment {
    pub renderer: SceneRenderer,
    /// Starting training distribution.
    pub init: RenderDistribution<f64>,
    pub test: Dataset<f64>,
    /// Pose weights of the test distribution.
    pub test_pose: Vec<f64>,
    pub model: Classifier,
    pub theta0: Vec<f64>,
}

/// Index of the bin `u ∈ [0, 1)` falls into under `weights` (inverse CDF).
pub fn categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// A value drawn from the exact binned distribution: categorical bin, then
/// uniform within it.
pub fn draw_binned<G: Rng + ?Sized>(weights: &[f64], range: [f64; 2], rng: &mut G) -> f64 {
    let b = categorical(weights, rng.gen::<f64>());
    let w = (range[1] - range[0]) / weights.len() as f64;
    range[0] + w * (b as f64 + rng.gen::<f64>())
}

fn train_bins(weights: &[f64], range: [f64; 2]) -> Result<BinDistribution<f64>> {
    let floored: Vec<f64> = weights.iter().map(|&w| w.max(WEIGHT_FLOOR)).collect();
    Ok(BinDistribution::from_probs(&floored, range[0], range[1])?)
}

pub fn build_scene(cfg: &ExperimentConfig) -> Result<SceneRenderer> {
    let mut spec = SceneSpec::<f64>::rotated_bars(cfg.scene.size, cfg.scene.classes);
    if let Some(l) = &cfg.lighting {
        spec.lighting_embeddings = l.embeddings.clone();
    }
    Renderer::validate(&spec)?;
    Ok(match cfg.scene.renderer {
        RendererKind::Analytic => SceneRenderer::Analytic(spec),
        RendererKind::Neural => SceneRenderer::Neural(NeuralField::fit(&spec, &FieldFit::default())?),
    })
}

pub fn initial_distribution(cfg: &ExperimentConfig) -> Result<RenderDistribution<f64>> {
    let pose = &cfg.pose;
    let mut dist = RenderDistribution::pose_only(train_bins(&pose.init.resolve(pose.bins)?, pose.range)?);
    dist.phi_trainable = pose.trainable;
    dist.tau = cfg.outer.tau;
    if let Some(z) = &cfg.zoom {
        dist.zoom = ParamSource::Learned {
            dist: train_bins(&z.init.resolve(z.bins)?, z.range)?,
            trainable: z.trainable,
        };
    }
    if let Some(l) = &cfg.lighting {
        let coeffs = l.init.resolve(l.embeddings.len())?;
        dist.lighting = Some(LightingMixture::new(coeffs, l.embeddings.clone())?);
        dist.lighting_trainable = l.trainable;
    }
    dist.validate()?;
    Ok(dist)
}

/// Test images drawn from the exact test distribution.
pub fn build_test_set(cfg: &ExperimentConfig, scene: &SceneRenderer) -> Result<Dataset<f64>> {
    let pose_w = cfg.pose.test.resolve(cfg.pose.bins)?;
    let zoom_w = match &cfg.zoom {
        Some(z) => Some((z.test.resolve(z.bins)?, z.range)),
        None => None,
    };
    let mut rng = rng_from_seed(cfg.eval.test_seed);
    let mut examples = Vec::new();
    for class in 0..scene.num_classes() {
        for _ in 0..cfg.eval.test_per_class {
            let phi = draw_binned(&pose_w, cfg.pose.range, &mut rng);
            let rho = 360.0 * rng.gen::<f64>();
            let zoom = match &zoom_w {
                Some((w, r)) => draw_binned(w, *r, &mut rng),
                None => 1.0,
            };
            let mut params = RenderParams::new(phi, rho, zoom)?;
            if let Some(l) = &cfg.lighting {
                params = params.with_lighting(l.embeddings[l.test].clone());
            }
            examples.push(datagrad_core::renderer::render(scene, class, &params)?);
        }
    }
    Ok(Dataset::new(examples, Role::Val)?)
}

pub fn build_model(cfg: &ExperimentConfig, seed: u64) -> Result<(Classifier, Vec<f64>)> {
    let mut arch = Architecture::mlp(cfg.scene.size * cfg.scene.size, &cfg.model.hidden, cfg.scene.classes);
    arch.activation = cfg.model.activation;
    arch.weight_decay = cfg.model.weight_decay;
    let inner = match cfg.inner.solver {
        SolverKind::Sgd => InnerSolver::Sgd(TrainConfig {
            epochs: cfg.inner.epochs,
            lr: cfg.inner.lr,
            batch_size: cfg.inner.batch_size,
            seed,
            freeze_backbone: false,
        }),
        SolverKind::Exact => InnerSolver::Exact(cfg.inner.newton.clone()),
    };
    let theta0 = ModelParams::<f64>::init(arch.clone(), cfg.model.init_seed)?.theta;
    Ok((Classifier { arch, inner }, theta0))
}

/// Scene, starting distribution, test set and model of an experiment.
pub fn build_gap_experiment(cfg: &ExperimentConfig) -> Result<GapExperiment> {
    cfg.validate()?;
    let renderer = build_scene(cfg)?;
    let init = initial_distribution(cfg)?;
    let test = build_test_set(cfg, &renderer)?;
    let (model, theta0) = build_model(cfg, 0)?;
    Ok(GapExperiment {
        renderer,
        init,
        test,
        test_pose: cfg.pose.test.resolve(cfg.pose.bins)?,
        model,
        theta0,
    })
}

/// Everything one run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<CsvRow>,
    pub records: Vec<IterationRecord>,
    pub initial: RenderDistribution<f64>,
    pub learned: RenderDistribution<f64>,
    /// Training images of the final evaluation.
    pub final_train: Vec<RenderedExample<f64>>,
}

impl RunOutput {
    pub fn final_row(&self) -> &CsvRow {
        self.rows.last().expect("every run logs a final row")
    }
}

/// Per-run streaming sink: sees every record and row as soon as it exists.
pub trait RunSink {
    fn record(&mut self, _rec: &IterationRecord) -> Result<()> {
        Ok(())
    }
    fn row(&mut self, _row: &CsvRow) -> Result<()> {
        Ok(())
    }
}

impl RunSink for () {}

fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x0e7a_1000_0000_0000
}

struct Evaluation {
    accuracy: f64,
    loss: f64,
    train: Vec<RenderedExample<f64>>,
}

/// Trains from the shared initial weights on exact draws from `dist`, then
/// scores on the test set. Every method ends with this step.
fn evaluate(exp: &GapExperiment, cfg: &ExperimentConfig, model: &Classifier, dist: &RenderDistribution<f64>, seed: u64) -> Result<Evaluation> {
    let samples = build_train_set(&exp.renderer, dist, cfg.eval.train_per_class, 1, DrawMode::Hard, eval_seed(seed))?;
    let train = to_dataset(&samples)?;
    let fit = model.fit(&exp.theta0, &train)?;
    let (loss, _) = val_value_grad(model, &fit.theta, &exp.test)?;
    let accuracy = model.accuracy(&fit.theta, &exp.test)?;
    Ok(Evaluation {
        accuracy,
        loss,
        train: samples.into_iter().map(|s| s.example).collect(),
    })
}

fn summary_row(method: Method, seed: u64, iter: usize, ev: &Evaluation, tv: f64) -> CsvRow {
    CsvRow {
        method: method.name().to_string(),
        seed,
        iter,
        val_accuracy: ev.accuracy,
        val_loss: ev.loss,
        tv_distance: tv,
        grad_norm: 0.0,
        cg_iters: 0,
        wall_ms: 0,
    }
}

/// One method on one seed. All methods share the test set, the initial
/// weights, the inner solver and the final evaluation for a given seed.
pub fn run(exp: &GapExperiment, cfg: &ExperimentConfig, method: Method, seed: u64, sink: &mut dyn RunSink) -> Result<RunOutput> {
    let (model, _) = build_model(cfg, seed)?;
    let init_tv = tv_distance(&exp.init.probs(), &exp.test_pose);
    if method == Method::Ns {
        let ev = evaluate(exp, cfg, &model, &exp.init, seed)?;
        let row = summary_row(method, seed, 0, &ev, init_tv);
        sink.row(&row)?;
        return Ok(RunOutput {
            method,
            seed,
            rows: vec![row],
            records: Vec::new(),
            initial: exp.init.clone(),
            learned: exp.init.clone(),
            final_train: ev.train,
        });
    }
    let estimator = match method {
        Method::Score => {
            if exp.init.lighting_trainable {
                return Err(HarnessError::Config(
                    "the score-function baseline cannot learn lighting".into(),
                ));
            }
            Estimator::ScoreFunction
        }
        _ => Estimator::Pathwise,
    };
    let opt = OptimizeConfig {
        budget: cfg.outer.budget,
        lr: cfg.outer.lr,
        momentum: cfg.outer.momentum,
        warm_start_theta: cfg.outer.warm_start_theta,
        record_wall_time: cfg.outer.record_wall_time,
        hyper: HypergradConfig {
            per_class: cfg.outer.per_class,
            cg: cfg.outer.cg.clone(),
            estimator,
            hessian_samples: cfg.outer.hessian_samples,
            patches: cfg.outer.patches,
        },
    };
    let problem = Problem {
        scene: &exp.renderer,
        model: &model,
        val: &exp.test,
    };
    let mut rows = Vec::new();
    let mut sink_err = None;
    let traj = optimize(&problem, &exp.init, &exp.theta0, &opt, Some(&exp.test_pose), seed, |rec| {
        let row = CsvRow {
            method: method.name().to_string(),
            seed,
            iter: rec.iter,
            val_accuracy: rec.val_accuracy,
            val_loss: rec.val_loss,
            tv_distance: rec.tv_distance.unwrap_or(f64::NAN),
            grad_norm: rec.grad_norm,
            cg_iters: rec.cg_iters,
            wall_ms: rec.wall_ms,
        };
        if let Err(e) = sink.record(rec).and_then(|_| sink.row(&row)) {
            let msg = e.to_string();
            sink_err = Some(e);
            return Err(datagrad_core::Error::InvalidArgument(msg));
        }
        rows.push(row);
        Ok(())
    });
    if let Some(e) = sink_err {
        return Err(e);
    }
    let traj = traj?;
    let learned = traj.final_distribution().clone();
    let ev = evaluate(exp, cfg, &model, &learned, seed)?;
    let row = summary_row(method, seed, cfg.outer.budget, &ev, tv_distance(&learned.probs(), &exp.test_pose));
    sink.row(&row)?;
    rows.push(row);
    Ok(RunOutput {
        method,
        seed,
        rows,
        records: traj.records,
        initial: exp.init.clone(),
        learned,
        final_train: ev.train,
    })
}
