use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Silhouette family of an object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Disc,
    /// Rounded square (superellipse, exponent 8).
    Square,
    /// Elongated rounded rectangle (superellipse, exponent 4).
    Bar,
}

impl ShapeFamily {
    /// Even superellipse exponent.
    pub fn exponent(self) -> u32 {
        match self {
            ShapeFamily::Disc => 2,
            ShapeFamily::Square => 8,
            ShapeFamily::Bar => 4,
        }
    }
}

/// One object class and its pose-to-appearance law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec<T> {
    pub shape: ShapeFamily,
    /// Geometric-mean half-size in pixels at zoom 1.
    pub radius: T,
    /// Ratio of the long to the short half-axis (1 for isotropic shapes).
    pub aspect: T,
    /// Orientation at `phi = 0`, degrees.
    pub orientation: T,
    /// Relative change of the short axis with `cos(phi)`.
    pub eccentricity: T,
    /// Intensity logit of the object surface before lighting.
    pub intensity: T,
    /// Center offset from the image center, pixels.
    pub offset: [T; 2],
}

impl<T: Scalar> ObjectSpec<T> {
    pub fn new(shape: ShapeFamily, radius: T, orientation: T) -> Self {
        let aspect = match shape {
            ShapeFamily::Bar => T::c(2.5),
            _ => T::one(),
        };
        Self {
            shape,
            radius,
            aspect,
            orientation,
            eccentricity: T::c(0.15),
            intensity: T::c(1.0),
            offset: [T::zero(), T::zero()],
        }
    }
}

/// Desk-scale scene: a set of object classes rendered one per image over a
/// flat background. Grayscale; every pixel is a smooth function of the
/// render parameters and can be evaluated independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec<T> {
    pub width: usize,
    pub height: usize,
    pub background: T,
    /// Sigmoid edge width in pixels.
    pub edge_width: T,
    /// Orientation change per degree of `phi`. `0.5` keeps the law
    /// continuous across the `phi` wrap for shapes with 180° symmetry.
    pub orientation_gain: T,
    pub objects: Vec<ObjectSpec<T>>,
    /// Lighting vector `(brightness, directional, radial)` used when none is given.
    pub default_lighting: Vec<T>,
    /// Known appearance embeddings available for mixing.
    #[serde(default)]
    pub lighting_embeddings: Vec<Vec<T>>,
}

pub const LIGHTING_DIM: usize = 3;

impl<T: Scalar> SceneSpec<T> {
    /// Square image with the given objects and neutral lighting.
    pub fn new(size: usize, objects: Vec<ObjectSpec<T>>) -> Self {
        Self {
            width: size,
            height: size,
            background: T::c(0.3),
            edge_width: T::c(1.5),
            orientation_gain: T::c(0.5),
            objects,
            default_lighting: vec![T::zero(), T::c(0.8), T::c(0.5)],
            lighting_embeddings: Vec::new(),
        }
    }

    /// `n` bars whose orientations are spread evenly over 180°, so the class
    /// of an image cannot be read off without knowing the pose.
    pub fn rotated_bars(size: usize, n: usize) -> Self {
        let radius = T::from_usize_lossy(size) * T::c(0.17);
        let objects = (0..n)
            .map(|c| {
                let orient = T::c(180.0) * T::from_usize_lossy(c) / T::from_usize_lossy(n);
                ObjectSpec::new(ShapeFamily::Bar, radius, orient)
            })
            .collect();
        Self::new(size, objects)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn num_classes(&self) -> usize {
        self.objects.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::DegenerateScene("empty image".into()));
        }
        if self.objects.is_empty() {
            return Err(Error::DegenerateScene("no objects".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.radius > T::zero()) || !(o.aspect > T::zero()) {
                return Err(Error::DegenerateScene(format!("object {i} has zero size")));
            }
            if !(o.eccentricity.abs() < T::one()) {
                return Err(Error::DegenerateScene(format!(
                    "object {i} eccentricity must lie in (-1, 1)"
                )));
            }
        }
        if !(self.edge_width > T::zero()) {
            return Err(Error::DegenerateScene("edge width must be positive".into()));
        }
        if !(T::zero()..=T::one()).contains(&self.background) {
            return Err(Error::DegenerateScene("background outside [0, 1]".into()));
        }
        if self.default_lighting.len() != LIGHTING_DIM
            || self.lighting_embeddings.iter().any(|e| e.len() != LIGHTING_DIM)
        {
            return Err(Error::DegenerateScene(format!(
                "lighting vectors must have {LIGHTING_DIM} entries"
            )));
        }
        Ok(())
    }
}

/// Rendering parameters `V = (phi, rho)`, zoom and optional lighting vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderParams<R> {
    /// Degrees.
    pub phi: R,
    /// Degrees.
    pub rho: R,
    pub zoom: R,
    pub lighting: Option<Vec<R>>,
}

impl<T: Scalar> RenderParams<T> {
    /// Plain parameters with both angles wrapped into `[0, 360)`.
    pub fn new(phi: T, rho: T, zoom: T) -> Result<Self> {
        let p = Self {
            phi: wrap_degrees::<T, T>(phi),
            rho: wrap_degrees::<T, T>(rho),
            zoom,
            lighting: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_lighting(mut self, lighting: Vec<T>) -> Self {
        self.lighting = Some(lighting);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zoom > T::zero()) || !self.zoom.is_finite() {
            return Err(Error::InvalidArgument(format!("zoom must be positive, got {}", self.zoom)));
        }
        if !self.phi.is_finite() || !self.rho.is_finite() {
            return Err(Error::InvalidArgument("non-finite angle".into()));
        }
        Ok(())
    }
}

impl<R: Copy> RenderParams<R> {
    pub fn map<S, F: Fn(R) -> S>(&self, f: F) -> RenderParams<S> {
        RenderParams {
            phi: f(self.phi),
            rho: f(self.rho),
            zoom: f(self.zoom),
            lighting: self.lighting.as_ref().map(|l| l.iter().map(|&x| f(x)).collect()),
        }
    }

    /// `[phi, rho, zoom, lighting...]`
    pub fn flatten(&self) -> Vec<R> {
        let mut v = vec![self.phi, self.rho, self.zoom];
        if let Some(l) = &self.lighting {
            v.extend_from_slice(l);
        }
        v
    }

    /// Inverse of [`RenderParams::flatten`].
    pub fn unflatten(v: &[R], has_lighting: bool) -> Self {
        Self {
            phi: v[0],
            rho: v[1],
            zoom: v[2],
            lighting: has_lighting.then(|| v[3..].to_vec()),
        }
    }
}

/// Wraps an angle into `[0, 360)`; the derivative is 1 everywhere.
pub fn wrap_degrees<T: Scalar, R: Real<T>>(a: R) -> R {
    let turns = (a.value() / T::c(360.0)).floor();
    if turns == T::zero() {
        a
    } else {
        a - turns * T::c(360.0)
    }
}
