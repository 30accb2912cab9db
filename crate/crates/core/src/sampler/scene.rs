use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bins::BinDistribution;
use super::gumbel::{relaxed_draw, rng_from_seed, BinNoise};
use super::lighting::{mix_lighting, LightingMixture};
use crate::error::{Error, Result};
use crate::renderer::RenderParams;
use crate::scalar::{Real, Scalar};

pub const DEFAULT_TAU: f64 = 0.1;

/// How a scalar rendering parameter other than `phi` is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource<T> {
    Fixed(T),
    Uniform { lo: T, hi: T },
    Learned { dist: BinDistribution<T>, trainable: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Phi,
    Rho,
    Zoom,
    Lighting,
}

/// A slice of the flat outer parameter vector `ψ`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub range: Range<usize>,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// Gumbel-softmax relaxation, differentiable in `ψ`.
    Relaxed,
    /// Exact categorical draws with the same noise (Gumbel-max).
    Hard,
}

/// The full sampling distribution over [`RenderParams`]. Its learnable parts
/// flatten into `ψ`: pose logits, optional rho and zoom logits, optional
/// lighting coefficients, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderDistribution<T> {
    pub phi: BinDistribution<T>,
    pub phi_trainable: bool,
    pub rho: ParamSource<T>,
    pub zoom: ParamSource<T>,
    pub lighting: Option<LightingMixture<T>>,
    pub lighting_trainable: bool,
    pub tau: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SourceNoise<T> {
    None,
    Uniform(T),
    Bins(BinNoise<T>),
}

/// All randomness behind one rendered image, reproducible from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneNoise<T> {
    pub seed: u64,
    pub phi: BinNoise<T>,
    pub rho: SourceNoise<T>,
    pub zoom: SourceNoise<T>,
}

impl<T: Scalar> ParamSource<T> {
    fn draw_noise<G: Rng + ?Sized>(&self, rng: &mut G) -> SourceNoise<T> {
        match self {
            ParamSource::Fixed(_) => SourceNoise::None,
            ParamSource::Uniform { .. } => SourceNoise::Uniform(T::c(rng.gen::<f64>())),
            ParamSource::Learned { dist, .. } => SourceNoise::Bins(BinNoise::draw(rng, dist.k())),
        }
    }

    fn len(&self) -> usize {
        match self {
            ParamSource::Learned { dist, .. } => dist.k(),
            _ => 0,
        }
    }
}

impl<T: Scalar> RenderDistribution<T> {
    /// Learned pose over `k` bins of `[0, 360)`, uniform `rho`, unit zoom.
    pub fn pose_only(phi: BinDistribution<T>) -> Self {
        Self {
            phi,
            phi_trainable: true,
            rho: ParamSource::Uniform {
                lo: T::zero(),
                hi: T::c(360.0),
            },
            zoom: ParamSource::Fixed(T::one()),
            lighting: None,
            lighting_trainable: false,
            tau: T::c(DEFAULT_TAU),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        let zoom_lo = match &self.zoom {
            ParamSource::Fixed(z) => *z,
            ParamSource::Uniform { lo, .. } => *lo,
            ParamSource::Learned { dist, .. } => dist.range().0,
        };
        if !(zoom_lo > T::zero()) {
            return Err(Error::InvalidArgument("zoom range must be positive".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut at = 0;
        let mut push = |kind, len: usize, trainable| {
            if len > 0 {
                out.push(Block {
                    kind,
                    range: at..at + len,
                    trainable,
                });
                at += len;
            }
        };
        push(BlockKind::Phi, self.phi.k(), self.phi_trainable);
        if let ParamSource::Learned { dist, trainable } = &self.rho {
            push(BlockKind::Rho, dist.k(), *trainable);
        }
        if let ParamSource::Learned { dist, trainable } = &self.zoom {
            push(BlockKind::Zoom, dist.k(), *trainable);
        }
        if let Some(mix) = &self.lighting {
            push(BlockKind::Lighting, mix.coeffs().len(), self.lighting_trainable);
        }
        out
    }

    pub fn block(&self, kind: BlockKind) -> Option<Block> {
        self.blocks().into_iter().find(|b| b.kind == kind)
    }

    pub fn psi_len(&self) -> usize {
        self.phi.k() + self.rho.len() + self.zoom.len() + self.lighting.as_ref().map_or(0, |m| m.coeffs().len())
    }

    /// The flat outer parameters `ψ`.
    pub fn psi(&self) -> Vec<T> {
        let mut v = self.phi.logits().to_vec();
        for src in [&self.rho, &self.zoom] {
            if let ParamSource::Learned { dist, .. } = src {
                v.extend_from_slice(dist.logits());
            }
        }
        if let Some(mix) = &self.lighting {
            v.extend_from_slice(mix.coeffs());
        }
        v
    }

    pub fn set_psi(&mut self, psi: &[T]) -> Result<()> {
        if psi.len() != self.psi_len() {
            return Err(Error::LengthMismatch {
                what: "psi",
                expected: self.psi_len(),
                got: psi.len(),
            });
        }
        for b in self.blocks() {
            let part = &psi[b.range];
            match b.kind {
                BlockKind::Phi => self.phi.set_logits(part)?,
                BlockKind::Rho => learned_mut(&mut self.rho)?.set_logits(part)?,
                BlockKind::Zoom => learned_mut(&mut self.zoom)?.set_logits(part)?,
                BlockKind::Lighting => self
                    .lighting
                    .as_mut()
                    .expect("lighting block implies a mixture")
                    .set_coeffs(part)?,
            }
        }
        Ok(())
    }

    /// Phi bin probabilities.
    pub fn probs(&self) -> Vec<T> {
        self.phi.probs()
    }

    pub fn draw_noise(&self, seed: u64) -> SceneNoise<T> {
        let mut rng = rng_from_seed(seed);
        let phi = BinNoise::draw(&mut rng, self.phi.k());
        let rho = self.rho.draw_noise(&mut rng);
        let zoom = self.zoom.draw_noise(&mut rng);
        SceneNoise { seed, phi, rho, zoom }
    }

    /// Rendering parameters as a function of `psi` (which may live on a tape).
    /// `psi` must be non-empty; constants are lifted through its first entry.
    pub fn sample_params<R: Real<T>>(
        &self,
        psi: &[R],
        noise: &SceneNoise<T>,
        mode: DrawMode,
    ) -> Result<RenderParams<R>> {
        if psi.len() != self.psi_len() {
            return Err(Error::LengthMismatch {
                what: "psi",
                expected: self.psi_len(),
                got: psi.len(),
            });
        }
        let anchor = psi[0];
        let mut phi = None;
        let mut rho = None;
        let mut zoom = None;
        let mut lighting = None;
        for b in self.blocks() {
            let part = &psi[b.range.clone()];
            match b.kind {
                BlockKind::Phi => {
                    phi = Some(self.draw_bins(part, &self.phi, &noise.phi, mode))
                }
                BlockKind::Rho | BlockKind::Zoom => {
                    let (src, nz) = if b.kind == BlockKind::Rho {
                        (&self.rho, &noise.rho)
                    } else {
                        (&self.zoom, &noise.zoom)
                    };
                    let (ParamSource::Learned { dist, .. }, SourceNoise::Bins(bn)) = (src, nz) else {
                        return Err(Error::MissingNoise(noise.seed as usize));
                    };
                    let v = self.draw_bins(part, dist, bn, mode);
                    if b.kind == BlockKind::Rho {
                        rho = Some(v);
                    } else {
                        zoom = Some(v);
                    }
                }
                BlockKind::Lighting => {
                    let mix = self.lighting.as_ref().expect("lighting block implies a mixture");
                    lighting = Some(mix_lighting(part, mix.embeddings()));
                }
            }
        }
        let constant = |src: &ParamSource<T>, nz: &SourceNoise<T>| -> Result<R> {
            match (src, nz) {
                (ParamSource::Fixed(v), _) => Ok(anchor.lift(*v)),
                (ParamSource::Uniform { lo, hi }, SourceNoise::Uniform(u)) => {
                    Ok(anchor.lift(*lo + (*hi - *lo) * *u))
                }
                _ => Err(Error::MissingNoise(noise.seed as usize)),
            }
        };
        let rho = match rho {
            Some(v) => v,
            None => constant(&self.rho, &noise.rho)?,
        };
        let zoom = match zoom {
            Some(v) => v,
            None => constant(&self.zoom, &noise.zoom)?,
        };
        Ok(RenderParams {
            phi: phi.expect("phi block always present"),
            rho,
            zoom,
            lighting,
        })
    }

    fn draw_bins<R: Real<T>>(
        &self,
        logits: &[R],
        dist: &BinDistribution<T>,
        noise: &BinNoise<T>,
        mode: DrawMode,
    ) -> R {
        match mode {
            DrawMode::Relaxed => relaxed_draw(logits, &dist.geometry(), noise, self.tau).value,
            DrawMode::Hard => {
                let vals: Vec<T> = logits.iter().map(|l| l.value()).collect();
                let d = BinDistribution::new(vals, dist.range().0, dist.range().1)
                    .expect("logits of a valid distribution");
                logits[0].lift(super::gumbel::hard_draw(&d, noise).1)
            }
        }
    }

    /// Hard (Gumbel-max) bin per learned block, in block order; lighting is skipped.
    pub fn hard_bins(&self, noise: &SceneNoise<T>) -> Vec<(BlockKind, usize)> {
        let mut out = vec![(BlockKind::Phi, noise.phi.hard_bin(&self.phi.probs()))];
        for (kind, src, nz) in [
            (BlockKind::Rho, &self.rho, &noise.rho),
            (BlockKind::Zoom, &self.zoom, &noise.zoom),
        ] {
            if let (ParamSource::Learned { dist, .. }, SourceNoise::Bins(bn)) = (src, nz) {
                out.push((kind, bn.hard_bin(&dist.probs())));
            }
        }
        out
    }

    /// Probabilities of a learned bin block.
    pub fn block_probs(&self, kind: BlockKind) -> Option<Vec<T>> {
        match kind {
            BlockKind::Phi => Some(self.phi.probs()),
            BlockKind::Rho => learned(&self.rho).map(|d| d.probs()),
            BlockKind::Zoom => learned(&self.zoom).map(|d| d.probs()),
            BlockKind::Lighting => None,
        }
    }
}

fn learned<T>(src: &ParamSource<T>) -> Option<&BinDistribution<T>> {
    match src {
        ParamSource::Learned { dist, .. } => Some(dist),
        _ => None,
    }
}

fn learned_mut<T>(src: &mut ParamSource<T>) -> Result<&mut BinDistribution<T>> {
    match src {
        ParamSource::Learned { dist, .. } => Ok(dist),
        _ => Err(Error::InvalidArgument("parameter is not learned".into())),
    }
}
