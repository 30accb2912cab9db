//! Differentiable pixel-wise image synthesis with automatic labels.

mod analytic;
mod label;
mod neural;
mod patch;
mod pgm;
mod scene;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use label::{BBox, BoxLabel, Label};
pub use neural::{FieldFit, NeuralField};
pub use patch::PatchLayout;
pub use pgm::{encode_pgm, write_pgm};
pub use scene::{
    wrap_degrees, ObjectSpec, RenderParams, SceneSpec, ShapeFamily, LIGHTING_DIM,
};

use crate::error::{Error, Result};
use crate::sampler::LightingMixture;
use crate::scalar::{Real, Scalar};

/// Patches per image used by [`render`].
pub const DEFAULT_PATCHES: usize = 4;

/// A renderer whose pixels are independent smooth functions of the parameters.
pub trait Renderer<T: Scalar> {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn num_pixels(&self) -> usize {
        self.width() * self.height()
    }
    fn num_classes(&self) -> usize;

    /// Pixels `range` (row-major) of the image of `class`. Touches no other pixel.
    fn render_range<R: Real<T>>(
        &self,
        class: usize,
        params: &RenderParams<R>,
        range: Range<usize>,
    ) -> Result<Vec<R>>;

    fn label(&self, class: usize, params: &RenderParams<T>) -> Result<Label>;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedExample<T> {
    pub pixels: Vec<T>,
    pub label: Label,
    pub params: RenderParams<T>,
    pub patch_layout: PatchLayout,
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> RenderedExample<T> {
    pub fn class(&self) -> usize {
        self.label.class
    }
}

pub fn render<T: Scalar, S: Renderer<T>>(
    scene: &S,
    class: usize,
    params: &RenderParams<T>,
) -> Result<RenderedExample<T>> {
    let d = scene.num_pixels();
    let layout = PatchLayout::new(d, DEFAULT_PATCHES.min(d))?;
    render_with_layout(scene, class, params, layout)
}

pub fn render_with_layout<T: Scalar, S: Renderer<T>>(
    scene: &S,
    class: usize,
    params: &RenderParams<T>,
    patch_layout: PatchLayout,
) -> Result<RenderedExample<T>> {
    scene.validate()?;
    params.validate()?;
    let d = scene.num_pixels();
    if patch_layout.num_pixels() != d {
        return Err(Error::InvalidArgument(format!(
            "patch layout covers {} pixels, image has {d}",
            patch_layout.num_pixels()
        )));
    }
    let pixels = scene.render_range(class, params, 0..d)?;
    let label = scene.label(class, params)?;
    Ok(RenderedExample {
        pixels,
        label,
        params: params.clone(),
        patch_layout,
        width: scene.width(),
        height: scene.height(),
    })
}

pub fn render_patch<T: Scalar, R: Real<T>, S: Renderer<T>>(
    scene: &S,
    class: usize,
    params: &RenderParams<R>,
    patch: Range<usize>,
) -> Result<Vec<R>> {
    scene.render_range(class, params, patch)
}

/// Renders under the mixed appearance `Σ ψ_i ℓ_i`.
pub fn render_lit<T: Scalar, S: Renderer<T>>(
    scene: &S,
    class: usize,
    params: &RenderParams<T>,
    mix: &LightingMixture<T>,
) -> Result<RenderedExample<T>> {
    if mix.dim() != LIGHTING_DIM {
        return Err(Error::LengthMismatch {
            what: "lighting embedding",
            expected: LIGHTING_DIM,
            got: mix.dim(),
        });
    }
    render(scene, class, &params.clone().with_lighting(mix.mix()))
}

pub fn make_label<T: Scalar, S: Renderer<T>>(
    scene: &S,
    class: usize,
    params: &RenderParams<T>,
) -> Result<Label> {
    params.validate()?;
    scene.label(class, params)
}
