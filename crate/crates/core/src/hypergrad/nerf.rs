use serde::{Deserialize, Serialize};

use super::samples::TrainSample;
use super::task::TaskModel;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::renderer::{PatchLayout, RenderParams, Renderer};
use crate::sampler::{accumulate_score, DrawMode, RenderDistribution};
use crate::scalar::{Real, Scalar};

/// Storage high-water marks of one hypergradient computation, in scalars.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryProbe {
    /// Largest dense vector held between stages.
    pub largest_buffer: usize,
    /// Largest tape used for the mixed partial of the loss.
    pub peak_mixed_tape: usize,
    /// Largest tape used to differentiate one render patch.
    pub peak_render_tape: usize,
    /// Largest tape used for the sampling map `ψ → V`.
    pub peak_sampler_tape: usize,
}

impl MemoryProbe {
    pub fn merge(&mut self, other: &MemoryProbe) {
        self.largest_buffer = self.largest_buffer.max(other.largest_buffer);
        self.peak_mixed_tape = self.peak_mixed_tape.max(other.peak_mixed_tape);
        self.peak_render_tape = self.peak_render_tape.max(other.peak_render_tape);
        self.peak_sampler_tape = self.peak_sampler_tape.max(other.peak_sampler_tape);
    }

    fn buffer(&mut self, len: usize) {
        self.largest_buffer = self.largest_buffer.max(len);
    }
}

/// `w = zᵀ ∂/∂x ∇_θ l(x, θ)`, one vector of image length.
pub fn mixed_contraction<T: Scalar, M: TaskModel<T>>(
    model: &M,
    theta: &[T],
    z: &[T],
    sample: &TrainSample<T>,
    probe: &mut MemoryProbe,
) -> Result<Vec<T>> {
    if z.len() != theta.len() {
        return Err(Error::LengthMismatch {
            what: "z",
            expected: theta.len(),
            got: z.len(),
        });
    }
    let tape = Tape::new();
    let th = tape.vars(theta);
    let x = tape.vars(&sample.example.pixels);
    let l = model.example_loss(&th, &x, &sample.example);
    let g = tape.grad_graph(l, &th)?;
    let w = tape.vjp(&g, z, &x)?;
    probe.peak_mixed_tape = probe.peak_mixed_tape.max(tape.footprint());
    probe.buffer(w.len());
    Ok(w)
}

/// Influence payoff `zᵀ ∇_θ l(x, θ)` of one sample.
pub fn influence<T: Scalar, M: TaskModel<T>>(
    model: &M,
    theta: &[T],
    z: &[T],
    sample: &TrainSample<T>,
) -> Result<T> {
    let tape = Tape::new();
    let th = tape.vars(theta);
    let x: Vec<_> = sample.example.pixels.iter().map(|&p| th[0].lift(p)).collect();
    let l = model.example_loss(&th, &x, &sample.example);
    let g = tape.grad(l, &th)?;
    Ok(g.iter().zip(z).fold(T::zero(), |a, (&gi, &zi)| a + gi * zi))
}

fn check_sample<T: Scalar, S: Renderer<T>>(scene: &S, sample: &TrainSample<T>) -> Result<()> {
    if sample.mode != DrawMode::Relaxed {
        return Err(Error::InvalidArgument(
            "pathwise gradients need relaxed draws".into(),
        ));
    }
    let layout = &sample.example.patch_layout;
    if layout.num_pixels() != scene.num_pixels() || sample.example.pixels.len() != scene.num_pixels() {
        return Err(Error::InvalidArgument(format!(
            "patch layout covers {} pixels, image has {}",
            layout.num_pixels(),
            scene.num_pixels()
        )));
    }
    Ok(())
}

/// `sᵀ ∂V/∂ψ` through the sampler, checking the replayed `V` against pass 1.
fn through_sampler<T: Scalar>(
    dist: &RenderDistribution<T>,
    sample: &TrainSample<T>,
    s: &[T],
    index: usize,
    probe: &mut MemoryProbe,
) -> Result<Vec<T>> {
    let tape = Tape::new();
    let psi = tape.vars(&dist.psi());
    let v = dist.sample_params(&psi, &sample.noise, DrawMode::Relaxed)?.flatten();
    let recorded = sample.example.params.flatten();
    if v.len() != recorded.len() || v.iter().zip(&recorded).any(|(a, &b)| a.value() != b) {
        return Err(Error::ReplayMismatch {
            sample: index,
            pixel: usize::MAX,
        });
    }
    let out = tape.vjp(&v, s, &psi)?;
    probe.peak_sampler_tape = probe.peak_sampler_tape.max(tape.footprint());
    probe.buffer(out.len());
    Ok(out)
}

/// `sᵀ = wᵀ ∂x/∂V`, accumulated patch by patch. Each patch is replayed and
/// compared bit-wise with the pass-1 pixels.
fn through_renderer<T: Scalar, S: Renderer<T>>(
    scene: &S,
    sample: &TrainSample<T>,
    w: &[T],
    layout: &PatchLayout,
    index: usize,
    probe: &mut MemoryProbe,
) -> Result<Vec<T>> {
    let params = &sample.example.params;
    let has_lighting = params.lighting.is_some();
    let flat = params.flatten();
    let mut s = vec![T::zero(); flat.len()];
    for r in layout.ranges() {
        let tape = Tape::new();
        let v = tape.vars(&flat);
        let px = scene.render_range(sample.class, &RenderParams::unflatten(&v, has_lighting), r.clone())?;
        if let Some(k) = px
            .iter()
            .zip(&sample.example.pixels[r.clone()])
            .position(|(a, &b)| a.value() != b)
        {
            return Err(Error::ReplayMismatch {
                sample: index,
                pixel: r.start + k,
            });
        }
        let part = tape.vjp(&px, &w[r.clone()], &v)?;
        probe.peak_render_tape = probe.peak_render_tape.max(tape.footprint());
        for (a, b) in s.iter_mut().zip(part) {
            *a += b;
        }
    }
    probe.buffer(s.len());
    Ok(s)
}

/// Per-sample term `zᵀ ∂/∂ψ ∇_θ l(x_j, θ)`, contracted right to left: the
/// mixed partial against `z` first, then the renderer patch by patch, then
/// the sampler. `layout` overrides the sample's own patch layout.
pub fn grad_nerf_sample<T: Scalar, S: Renderer<T>, M: TaskModel<T>>(
    model: &M,
    scene: &S,
    dist: &RenderDistribution<T>,
    theta: &[T],
    z: &[T],
    sample: &TrainSample<T>,
    layout: Option<&PatchLayout>,
    index: usize,
    probe: &mut MemoryProbe,
) -> Result<Vec<T>> {
    check_sample(scene, sample)?;
    let layout = layout.unwrap_or(&sample.example.patch_layout);
    if layout.num_pixels() != scene.num_pixels() {
        return Err(Error::InvalidArgument("patch layout does not match the image".into()));
    }
    if z.iter().all(|&x| x == T::zero()) {
        return Ok(vec![T::zero(); dist.psi_len()]);
    }
    let w = mixed_contraction(model, theta, z, sample, probe)?;
    let s = through_renderer(scene, sample, &w, layout, index, probe)?;
    through_sampler(dist, sample, &s, index, probe)
}

/// The same term by explicit Jacobians, `zᵀ(M(J_x J_V))`: builds the
/// `m × d` mixed-partial matrix. Test oracle only.
pub fn grad_nerf_sample_dense<T: Scalar, S: Renderer<T>, M: TaskModel<T>>(
    model: &M,
    scene: &S,
    dist: &RenderDistribution<T>,
    theta: &[T],
    z: &[T],
    sample: &TrainSample<T>,
) -> Result<Vec<T>> {
    check_sample(scene, sample)?;
    let m = theta.len();
    let d = scene.num_pixels();
    // M = ∂²l/∂θ∂x, m × d
    let mixed: Vec<Vec<T>> = {
        let tape = Tape::new();
        let th = tape.vars(theta);
        let x = tape.vars(&sample.example.pixels);
        let l = model.example_loss(&th, &x, &sample.example);
        let g = tape.grad_graph(l, &th)?;
        (0..m)
            .map(|i| {
                let mut e = vec![T::zero(); m];
                e[i] = T::one();
                tape.vjp(&g, &e, &x)
            })
            .collect::<Result<_>>()?
    };
    // J_x = ∂x/∂V, d × nv
    let params = &sample.example.params;
    let flat = params.flatten();
    let nv = flat.len();
    let jx: Vec<Vec<T>> = {
        let tape = Tape::new();
        let v = tape.vars(&flat);
        let px = scene.render_range(
            sample.class,
            &RenderParams::unflatten(&v, params.lighting.is_some()),
            0..d,
        )?;
        px.iter().map(|&p| tape.grad(p, &v)).collect::<Result<_>>()?
    };
    // J_V = ∂V/∂ψ, nv × k
    let k = dist.psi_len();
    let jv: Vec<Vec<T>> = {
        let tape = Tape::new();
        let psi = tape.vars(&dist.psi());
        let v = dist.sample_params(&psi, &sample.noise, DrawMode::Relaxed)?.flatten();
        v.iter().map(|&c| tape.grad(c, &psi)).collect::<Result<_>>()?
    };
    let a: Vec<Vec<T>> = (0..d)
        .map(|p| (0..k).map(|c| (0..nv).fold(T::zero(), |s, q| s + jx[p][q] * jv[q][c])).collect())
        .collect();
    let b: Vec<Vec<T>> = (0..m)
        .map(|i| (0..k).map(|c| (0..d).fold(T::zero(), |s, p| s + mixed[i][p] * a[p][c])).collect())
        .collect();
    Ok((0..k)
        .map(|c| (0..m).fold(T::zero(), |s, i| s + z[i] * b[i][c]))
        .collect())
}

/// Score-function term `(zᵀ ∇_θ l_j) · ∇_ψ ln p(b_j)` over every learned bin block.
pub fn score_sample<T: Scalar, M: TaskModel<T>>(
    model: &M,
    dist: &RenderDistribution<T>,
    theta: &[T],
    z: &[T],
    sample: &TrainSample<T>,
) -> Result<Vec<T>> {
    if sample.mode != DrawMode::Hard {
        return Err(Error::InvalidArgument("score-function terms need hard draws".into()));
    }
    let payoff = influence(model, theta, z, sample)?;
    let mut g = vec![T::zero(); dist.psi_len()];
    for (kind, bin) in dist.hard_bins(&sample.noise) {
        let block = dist.block(kind).expect("hard bins come from blocks");
        let probs = dist.block_probs(kind).expect("bin block");
        accumulate_score(&mut g[block.range], &probs, bin, payoff);
    }
    Ok(g)
}
