use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::learner::{
    self, accuracy, mean_loss, Architecture, Dataset, ModelParams, NewtonConfig, TrainConfig,
};
use crate::renderer::RenderedExample;
use crate::scalar::{Real, Scalar};

/// Result of an inner training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Fit<T> {
    pub theta: Vec<T>,
    pub loss: T,
    pub grad_norm: T,
}

/// The downstream task as seen by the hypergradient: a per-example loss that
/// is twice differentiable in `(θ, x)`, a validation loss, and an inner solver.
pub trait TaskModel<T: Scalar> {
    fn num_params(&self) -> usize;

    /// `l(x, θ)`; the label and image size come from `example`, pixels from `x`.
    fn example_loss<R: Real<T>>(&self, theta: &[R], x: &[R], example: &RenderedExample<T>) -> R;

    /// Extra training-objective term that does not depend on the data.
    fn regularizer<R: Real<T>>(&self, _theta: &[R]) -> Option<R> {
        None
    }

    fn val_loss<R: Real<T>>(&self, theta: &[R], val: &Dataset<T>) -> R;

    fn fit(&self, theta0: &[T], train: &Dataset<T>) -> Result<Fit<T>>;

    fn accuracy(&self, theta: &[T], val: &Dataset<T>) -> Result<f64>;

    /// `L_train(θ)`: mean example loss plus the regularizer.
    fn train_objective<R: Real<T>>(&self, theta: &[R], examples: &[&RenderedExample<T>]) -> R {
        let anchor = theta[0];
        let terms: Vec<R> = examples
            .iter()
            .map(|e| {
                let x: Vec<R> = e.pixels.iter().map(|&p| anchor.lift(p)).collect();
                self.example_loss(theta, &x, e)
            })
            .collect();
        let l = R::sum(&terms) / T::from_usize_lossy(examples.len());
        match self.regularizer(theta) {
            Some(r) => l + r,
            None => l,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// Truncated mini-batch SGD.
    Sgd(TrainConfig),
    /// Newton-CG to stationarity.
    Exact(NewtonConfig),
}

/// The learner's classifier with its inner training procedure.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub arch: Architecture,
    pub inner: InnerSolver,
}

impl<T: Scalar> TaskModel<T> for Classifier {
    fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    fn example_loss<R: Real<T>>(&self, theta: &[R], x: &[R], e: &RenderedExample<T>) -> R {
        learner::example_loss(
            &self.arch,
            theta,
            x,
            e.label.class,
            learner::box_target(&e.label, e.width, e.height),
        )
    }

    fn regularizer<R: Real<T>>(&self, theta: &[R]) -> Option<R> {
        (self.arch.weight_decay > 0.0)
            .then(|| R::dot(theta, theta) * T::c(0.5 * self.arch.weight_decay))
    }

    fn val_loss<R: Real<T>>(&self, theta: &[R], val: &Dataset<T>) -> R {
        let ex: Vec<&RenderedExample<T>> = val.examples().iter().collect();
        mean_loss(&self.arch, theta, &ex)
    }

    fn fit(&self, theta0: &[T], train: &Dataset<T>) -> Result<Fit<T>> {
        let p0 = ModelParams::new(self.arch.clone(), theta0.to_vec())?;
        let r = match &self.inner {
            InnerSolver::Sgd(cfg) => learner::train(&p0, train, cfg)?,
            InnerSolver::Exact(cfg) => learner::solve_exact(&p0, train, cfg)?,
        };
        Ok(Fit {
            theta: r.params.theta,
            loss: r.final_loss,
            grad_norm: r.grad_norm,
        })
    }

    fn accuracy(&self, theta: &[T], val: &Dataset<T>) -> Result<f64> {
        accuracy(&ModelParams::new(self.arch.clone(), theta.to_vec())?, val)
    }
}

/// Closed-form bi-level toy: inner `½(θ − x)²` per one-pixel image, so
/// `θ̂ = x̄`; outer `½θ²`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadraticProxy;

impl<T: Scalar> TaskModel<T> for QuadraticProxy {
    fn num_params(&self) -> usize {
        1
    }

    fn example_loss<R: Real<T>>(&self, theta: &[R], x: &[R], _: &RenderedExample<T>) -> R {
        let r = theta[0] - x[0];
        r * r * T::c(0.5)
    }

    fn val_loss<R: Real<T>>(&self, theta: &[R], _: &Dataset<T>) -> R {
        theta[0] * theta[0] * T::c(0.5)
    }

    fn fit(&self, _theta0: &[T], train: &Dataset<T>) -> Result<Fit<T>> {
        let xs: Vec<T> = train.examples().iter().map(|e| e.pixels[0]).collect();
        let mean = crate::scalar::sum_values(xs.iter().copied()) / T::from_usize_lossy(xs.len());
        Ok(Fit {
            theta: vec![mean],
            loss: self.train_objective::<T>(&[mean], &train.examples().iter().collect::<Vec<_>>()),
            grad_norm: T::zero(),
        })
    }

    fn accuracy(&self, _: &[T], _: &Dataset<T>) -> Result<f64> {
        Ok(0.0)
    }
}
