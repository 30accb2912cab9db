use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Dataset, Role};
use crate::renderer::{Label, PatchLayout, RenderParams, RenderedExample, Renderer};
use crate::sampler::{rng_from_seed, DrawMode, RenderDistribution, SceneNoise};
use crate::scalar::{Real, Scalar};

/// One training image with everything needed to replay its draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSample<T> {
    pub class: usize,
    pub noise: SceneNoise<T>,
    pub mode: DrawMode,
    pub example: RenderedExample<T>,
}

/// `n` per-sample seeds derived from `seed`.
pub fn derive_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// First pass: draws `per_class` parameter sets per class and renders them
/// without gradients, keeping the noise for the replay.
pub fn build_train_set<T: Scalar, S: Renderer<T>>(
    scene: &S,
    dist: &RenderDistribution<T>,
    per_class: usize,
    patches: usize,
    mode: DrawMode,
    seed: u64,
) -> Result<Vec<TrainSample<T>>> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("need at least one image per class".into()));
    }
    scene.validate()?;
    dist.validate()?;
    let classes = scene.num_classes();
    let seeds = derive_seeds(seed, classes * per_class);
    let psi = dist.psi();
    let layout = PatchLayout::new(scene.num_pixels(), patches)?;
    let mut out = Vec::with_capacity(seeds.len());
    for (j, &s) in seeds.iter().enumerate() {
        let class = j / per_class;
        let noise = dist.draw_noise(s);
        let params = dist.sample_params::<T>(&psi, &noise, mode)?;
        let pixels = scene.render_range(class, &params, 0..scene.num_pixels())?;
        let label = scene.label(class, &params)?;
        out.push(TrainSample {
            class,
            noise,
            mode,
            example: RenderedExample {
                pixels,
                label,
                params,
                patch_layout: layout.clone(),
                width: scene.width(),
                height: scene.height(),
            },
        });
    }
    Ok(out)
}

pub fn to_dataset<T: Scalar>(samples: &[TrainSample<T>]) -> Result<Dataset<T>> {
    Dataset::new(samples.iter().map(|s| s.example.clone()).collect(), Role::Train)
}

/// A one-pixel renderer whose pixel is `phi` itself.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IdentityRenderer;

impl<T: Scalar> Renderer<T> for IdentityRenderer {
    fn width(&self) -> usize {
        1
    }

    fn height(&self) -> usize {
        1
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn render_range<R: Real<T>>(
        &self,
        _class: usize,
        params: &RenderParams<R>,
        range: Range<usize>,
    ) -> Result<Vec<R>> {
        if range.end > 1 || range.start > range.end {
            return Err(Error::PatchOutOfRange {
                start: range.start,
                end: range.end,
                len: 1,
            });
        }
        Ok(range.map(|_| params.phi).collect())
    }

    fn label(&self, class: usize, _: &RenderParams<T>) -> Result<Label> {
        Ok(Label::class_only(class))
    }
}
