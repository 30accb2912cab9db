use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Role};
use super::model::{argmax, box_target, check_input, example_loss, Architecture, ModelParams};
use crate::autodiff::{HessianOperator, Tape};
use crate::error::{Error, Result};
use crate::hypergrad::{conjugate_gradient, CgConfig};
use crate::renderer::RenderedExample;
use crate::sampler::rng_from_seed;
use crate::scalar::{Real, Scalar};

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Mean loss over `examples`, pixels held constant.
pub fn mean_loss<T: Scalar, R: Real<T>>(
    arch: &Architecture,
    theta: &[R],
    examples: &[&RenderedExample<T>],
) -> R {
    let anchor = theta[0];
    let terms: Vec<R> = examples
        .iter()
        .map(|e| {
            let x: Vec<R> = e.pixels.iter().map(|&p| anchor.lift(p)).collect();
            example_loss(arch, theta, &x, e.label.class, box_target(&e.label, e.width, e.height))
        })
        .collect();
    R::sum(&terms) / T::from_usize_lossy(examples.len())
}

/// Training objective: mean loss plus weight decay.
pub fn train_objective<T: Scalar, R: Real<T>>(
    arch: &Architecture,
    theta: &[R],
    examples: &[&RenderedExample<T>],
) -> R {
    let l = mean_loss(arch, theta, examples);
    if arch.weight_decay > 0.0 {
        l + R::dot(theta, theta) * T::c(0.5 * arch.weight_decay)
    } else {
        l
    }
}

fn value_and_grad<T: Scalar>(
    arch: &Architecture,
    theta: &[T],
    examples: &[&RenderedExample<T>],
    objective: bool,
) -> Result<(T, Vec<T>)> {
    let tape = Tape::new();
    let th = tape.vars(theta);
    let l = if objective {
        train_objective(arch, &th, examples)
    } else {
        mean_loss(arch, &th, examples)
    };
    let g = tape.grad(l, &th)?;
    Ok((l.value(), g))
}

fn refs<T>(data: &Dataset<T>) -> Vec<&RenderedExample<T>>
where
    T: Scalar,
{
    data.examples().iter().collect()
}

fn check_data<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<()> {
    check_input(&params.arch, data.num_pixels())?;
    if let Some(e) = data.examples().iter().find(|e| e.label.class >= params.arch.classes) {
        return Err(Error::InvalidArgument(format!(
            "label class {} outside model's {} classes",
            e.label.class, params.arch.classes
        )));
    }
    Ok(())
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Update only the output layer.
    #[serde(default)]
    pub freeze_backbone: bool,
}

fn default_epochs() -> usize {
    2
}

fn default_lr() -> f64 {
    1e-2
}

fn default_batch() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            batch_size: default_batch(),
            seed: 0,
            freeze_backbone: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport<T> {
    pub params: ModelParams<T>,
    /// Training objective on the full dataset at the returned parameters.
    pub final_loss: T,
    pub grad_norm: T,
    pub steps: usize,
}

/// Deterministic mini-batch SGD from `theta0`.
pub fn train<T: Scalar>(
    theta0: &ModelParams<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport<T>> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
    }
    check_data(theta0, data)?;
    let arch = &theta0.arch;
    let mut theta = theta0.theta.clone();
    let update = if cfg.freeze_backbone {
        arch.head_range()
    } else {
        0..theta.len()
    };
    let lr = T::c(cfg.lr);
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let ex: Vec<&RenderedExample<T>> = batch.iter().map(|&i| &data.examples()[i]).collect();
            let (l, g) = value_and_grad(arch, &theta, &ex, true)?;
            if !l.is_finite() || l.to_f64_lossy() > DIVERGENCE_LOSS {
                return Err(Error::Diverged {
                    step: steps,
                    loss: l.to_f64_lossy(),
                });
            }
            for i in update.clone() {
                theta[i] -= lr * g[i];
            }
            steps += 1;
        }
    }
    let (final_loss, g) = value_and_grad(arch, &theta, &refs(data), true)?;
    Ok(TrainReport {
        params: ModelParams::new(arch.clone(), theta)?,
        final_loss,
        grad_norm: norm(&g),
        steps,
    })
}

/// Newton-CG settings for solving the inner problem to stationarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Damping of the Newton system; keeps CG defined on flat directions.
    pub damping: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iters: 60,
            grad_tol: 1e-10,
            damping: 1e-10,
        }
    }
}

/// Minimizes the training objective with line-searched Newton-CG steps.
pub fn solve_exact<T: Scalar>(
    theta0: &ModelParams<T>,
    data: &Dataset<T>,
    cfg: &NewtonConfig,
) -> Result<TrainReport<T>> {
    check_data(theta0, data)?;
    let arch = &theta0.arch;
    let ex = refs(data);
    let objective = |th: &[T]| train_objective::<T, T>(arch, th, &ex);
    let mut theta = theta0.theta.clone();
    let m = theta.len();
    let cg = CgConfig {
        max_iters: Some(2 * m),
        residual_tol: 1e-12,
        damping: cfg.damping,
    };
    let mut steps = 0;
    let mut mu = cfg.damping;
    let (mut loss, mut grad);
    loop {
        let op = HessianOperator::new(&theta, |th| train_objective(arch, th, &ex))?;
        loss = op.loss();
        grad = op.gradient().to_vec();
        let gn = norm(&grad);
        if !gn.is_finite() {
            return Err(Error::Diverged {
                step: steps,
                loss: loss.to_f64_lossy(),
            });
        }
        if gn.to_f64_lossy() <= cfg.grad_tol || steps >= cfg.max_iters {
            break;
        }
        // Levenberg-style damping: raise it until the system is positive definite
        let mut dir = None;
        while dir.is_none() {
            let cg = CgConfig {
                damping: mu,
                ..cg.clone()
            };
            match conjugate_gradient(|v| op.apply(v), &grad, &cg) {
                Ok(sol) => dir = Some(sol.z.into_iter().map(|x| -x).collect::<Vec<T>>()),
                Err(Error::CgBreakdown { .. }) if mu < 1e6 => mu = (mu * 10.0).max(1e-6),
                Err(Error::CgBreakdown { .. }) => dir = Some(grad.iter().map(|&x| -x).collect()),
                Err(e) => return Err(e),
            }
        }
        let mut dir = dir.expect("set above");
        let mut slope = dir.iter().zip(&grad).fold(T::zero(), |a, (&d, &g)| a + d * g);
        if !(slope < T::zero()) {
            dir = grad.iter().map(|&x| -x).collect();
            slope = -(gn * gn);
        }
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<T> = theta.iter().zip(&dir).map(|(&a, &d)| a + t * d).collect();
            let f = objective(&trial);
            if f <= loss + T::c(1e-4) * t * slope {
                theta = trial;
                if t == T::one() {
                    mu = (mu * 0.1).max(cfg.damping);
                }
                accepted = true;
                break;
            }
            t *= T::c(0.5);
        }
        steps += 1;
        if !accepted {
            // no decrease is representable; θ is as stationary as precision allows
            break;
        }
    }
    Ok(TrainReport {
        params: ModelParams::new(arch.clone(), theta)?,
        final_loss: loss,
        grad_norm: norm(&grad),
        steps,
    })
}

fn check_val<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<()> {
    if data.role() != Role::Val {
        return Err(Error::InvalidArgument("validation metrics need a val dataset".into()));
    }
    check_data(params, data)
}

/// Mean validation loss `L_val(θ)`.
pub fn val_loss<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<T> {
    check_val(params, data)?;
    Ok(mean_loss::<T, T>(&params.arch, &params.theta, &refs(data)))
}

/// `∇_θ L_val(θ)`.
pub fn val_grad<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<Vec<T>> {
    check_val(params, data)?;
    Ok(value_and_grad(&params.arch, &params.theta, &refs(data), false)?.1)
}

/// Fraction of examples whose argmax class is correct.
pub fn accuracy<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<f64> {
    check_data(params, data)?;
    let correct = data
        .examples()
        .iter()
        .map(|e| params.predict_class(&e.pixels).map(|c| c == e.label.class))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Like [`accuracy`], additionally requiring the predicted box center within
/// `tol` (normalized units) when the model has a box head.
pub fn accuracy_with_box<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    tol: f64,
) -> Result<f64> {
    check_data(params, data)?;
    let arch = &params.arch;
    let mut correct = 0;
    for e in data.examples() {
        let out = params.predict(&e.pixels)?;
        let mut ok = argmax(&out[..arch.classes]) == e.label.class;
        if let (true, Some(t)) = (arch.box_head, box_target(&e.label, e.width, e.height)) {
            let dx = out[arch.classes].to_f64_lossy() - t[0];
            let dy = out[arch.classes + 1].to_f64_lossy() - t[1];
            ok &= (dx * dx + dy * dy).sqrt() <= tol;
        }
        correct += usize::from(ok);
    }
    Ok(correct as f64 / data.len() as f64)
}
