//! Learnable distributions over rendering parameters and their
//! differentiable samplers.

mod bins;
mod gumbel;
mod lighting;
mod scene;
mod score;

pub use bins::{tv_distance, BinDistribution, BinGeometry};
pub use gumbel::{
    draw_pose, draw_pose_with_noise, gumbel, gumbel_softmax, gumbel_softmax_with_noise,
    gumbel_weights, hard_draw, relaxed_draw, rng_from_seed, BinNoise, GumbelSample, RelaxedDraw,
    SampleTrace, PROB_FLOOR,
};
pub use lighting::{mix_lighting, project_simplex, LightingMixture, SIMPLEX_TOL};
pub use scene::{
    Block, BlockKind, DrawMode, ParamSource, RenderDistribution, SceneNoise, SourceNoise,
    DEFAULT_TAU,
};
pub use score::{
    accumulate_score, pathwise_value_grad, score_function_grad, score_function_value_grad,
};
