//! Learning rendering-parameter distributions for synthetic training data.
//!
//! Images are drawn from a differentiable renderer whose parameters (pose,
//! zoom, lighting) follow learnable bin distributions. The distributions are
//! tuned so that a model trained on the rendered data does well on a target
//! validation set, using implicit hypergradients of the bi-level problem.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32`/`f64`); the
//! aliases at the bottom of this module fix the double-precision instances.

pub mod autodiff;
pub mod error;
pub mod hypergrad;
pub mod learner;
pub mod renderer;
pub mod sampler;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

pub type Tape64 = autodiff::Tape<f64>;
pub type BinDistribution64 = sampler::BinDistribution<f64>;
pub type RenderDistribution64 = sampler::RenderDistribution<f64>;
pub type SceneSpec64 = renderer::SceneSpec<f64>;
pub type RenderParams64 = renderer::RenderParams<f64>;
pub type RenderedExample64 = renderer::RenderedExample<f64>;
pub type ModelParams64 = learner::ModelParams<f64>;
pub type Dataset64 = learner::Dataset<f64>;
pub type HypergradReport64 = hypergrad::HypergradReport<f64>;
pub type Trajectory64 = hypergrad::Trajectory<f64>;
