use std::ops::Range;

use super::label::{BBox, BoxLabel, Label};
use super::scene::{wrap_degrees, RenderParams, SceneSpec, LIGHTING_DIM};
use super::Renderer;
use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Keeps the superellipse root differentiable at the object center.
const ROOT_GUARD: f64 = 1e-9;
/// Squared radius (px²) at which a shrinking object has lost half its coverage.
const COVERAGE_HALF: f64 = 0.0625;

/// Per-image quantities shared by every pixel.
struct Pose<R> {
    cx: f64,
    cy: f64,
    cos_t: R,
    sin_t: R,
    inv_a: R,
    inv_b: R,
    r_eff: R,
    coverage: R,
    light_dx: R,
    light_dy: R,
    brightness: R,
    directional: R,
    radial: R,
    exponent: u32,
}

impl<T: Scalar> SceneSpec<T> {
    fn pose<R: Real<T>>(&self, class: usize, params: &RenderParams<R>) -> Result<Pose<R>> {
        let obj = self
            .objects
            .get(class)
            .ok_or_else(|| Error::InvalidArgument(format!("class {class} not in scene")))?;
        if !(params.zoom.value() > T::zero()) {
            return Err(Error::InvalidArgument("zoom must be positive".into()));
        }
        let deg = T::c(std::f64::consts::PI / 180.0);
        let phi = wrap_degrees(params.phi);
        let rho = wrap_degrees(params.rho);
        let phi_rad = phi * deg;
        let theta = (phi * self.orientation_gain + obj.orientation) * deg;
        let (cos_t, sin_t) = (theta.cos(), theta.sin());

        let size = params.zoom * obj.radius;
        let stretch = obj.aspect.sqrt();
        // short axis breathes with cos(phi); the area follows size²
        let ecc = phi_rad.cos() * obj.eccentricity + T::one();
        let a = size * stretch;
        let b = size / stretch * ecc;
        let r_eff = (a * b).sqrt();
        let r2 = r_eff * r_eff;
        let coverage = r2 / (r2 + T::c(COVERAGE_HALF));

        let rho_rad = rho * deg;
        let lighting: Vec<R> = match &params.lighting {
            Some(l) => {
                if l.len() != LIGHTING_DIM {
                    return Err(Error::LengthMismatch {
                        what: "lighting vector",
                        expected: LIGHTING_DIM,
                        got: l.len(),
                    });
                }
                l.clone()
            }
            None => self
                .default_lighting
                .iter()
                .map(|&x| params.zoom.lift(x))
                .collect(),
        };
        Ok(Pose {
            cx: self.width as f64 * 0.5 + obj.offset[0].to_f64_lossy(),
            cy: self.height as f64 * 0.5 + obj.offset[1].to_f64_lossy(),
            cos_t,
            sin_t,
            inv_a: a.rdiv(T::one()),
            inv_b: b.rdiv(T::one()),
            r_eff,
            coverage,
            light_dx: rho_rad.cos(),
            light_dy: rho_rad.sin(),
            brightness: lighting[0] + obj.intensity,
            directional: lighting[1],
            radial: lighting[2],
            exponent: obj.shape.exponent(),
        })
    }

    /// Normalized superellipse radius `s` (1 on the silhouette) and the
    /// pixel offsets from the object center.
    fn shape_radius<R: Real<T>>(&self, pose: &Pose<R>, idx: usize) -> (R, T, T) {
        let px = (idx % self.width) as f64 + 0.5;
        let py = (idx / self.width) as f64 + 0.5;
        let dx = T::c(px - pose.cx);
        let dy = T::c(py - pose.cy);
        let u = (pose.cos_t * dx + pose.sin_t * dy) * pose.inv_a;
        let v = (pose.sin_t * (-dx) + pose.cos_t * dy) * pose.inv_b;
        let (qu, qv) = (u * u, v * v);
        let (mu, mv) = match pose.exponent {
            2 => (qu, qv),
            4 => (qu * qu, qv * qv),
            _ => {
                let (qu2, qv2) = (qu * qu, qv * qv);
                (qu2 * qu2, qv2 * qv2)
            }
        };
        let p = T::from_u32(pose.exponent).expect("small exponent");
        let s = (mu + mv + T::c(ROOT_GUARD)).powf(T::one() / p);
        (s, dx, dy)
    }

    fn occupancy_at<R: Real<T>>(&self, pose: &Pose<R>, idx: usize) -> (R, R, T, T) {
        let (s, dx, dy) = self.shape_radius(pose, idx);
        let signed = (s - T::one()) * pose.r_eff;
        let sharp = T::c(-4.0) / self.edge_width;
        ((signed * sharp).sigmoid() * pose.coverage, s, dx, dy)
    }

    fn pixel<R: Real<T>>(&self, pose: &Pose<R>, idx: usize) -> R {
        let (occ, s, dx, dy) = self.occupancy_at(pose, idx);
        let shade = (pose.light_dx * dx + pose.light_dy * dy) / pose.r_eff;
        let radial = (s * s).rsub(T::one());
        let surface = (pose.brightness + pose.directional * shade + pose.radial * radial).sigmoid();
        (surface - self.background) * occ + self.background
    }

    /// Silhouette occupancy in `[0, 1)` before shading, one value per pixel.
    pub fn occupancy(&self, class: usize, params: &RenderParams<T>) -> Result<Vec<T>> {
        let pose = self.pose(class, params)?;
        Ok((0..self.num_pixels())
            .map(|i| self.occupancy_at(&pose, i).0)
            .collect())
    }
}

impl<T: Scalar> Renderer<T> for SceneSpec<T> {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn num_classes(&self) -> usize {
        self.objects.len()
    }

    fn render_range<R: Real<T>>(
        &self,
        class: usize,
        params: &RenderParams<R>,
        range: Range<usize>,
    ) -> Result<Vec<R>> {
        if range.start > range.end || range.end > self.num_pixels() {
            return Err(Error::PatchOutOfRange {
                start: range.start,
                end: range.end,
                len: self.num_pixels(),
            });
        }
        let pose = self.pose(class, params)?;
        Ok(range.map(|i| self.pixel(&pose, i)).collect())
    }

    fn label(&self, class: usize, params: &RenderParams<T>) -> Result<Label> {
        let occ = self.occupancy(class, params)?;
        let mut bbox: Option<BBox> = None;
        for (i, &o) in occ.iter().enumerate() {
            if o >= T::c(0.5) {
                let (x, y) = (i % self.width, i / self.width);
                bbox = Some(match bbox {
                    None => BBox { x0: x, y0: y, x1: x, y1: y },
                    Some(b) => BBox {
                        x0: b.x0.min(x),
                        y0: b.y0.min(y),
                        x1: b.x1.max(x),
                        y1: b.y1.max(y),
                    },
                });
            }
        }
        let bbox = match bbox {
            Some(b) => BoxLabel::Box(b),
            None => {
                // vanished object: minimum box at its center if that is in frame
                let obj = &self.objects[class];
                let cx = self.width as f64 * 0.5 + obj.offset[0].to_f64_lossy();
                let cy = self.height as f64 * 0.5 + obj.offset[1].to_f64_lossy();
                if cx >= 0.0 && cy >= 0.0 && cx < self.width as f64 && cy < self.height as f64 {
                    let (x, y) = (cx.floor() as usize, cy.floor() as usize);
                    BoxLabel::Box(BBox { x0: x, y0: y, x1: x, y1: y })
                } else {
                    BoxLabel::Empty
                }
            }
        };
        Ok(Label { class, bbox })
    }

    fn validate(&self) -> Result<()> {
        SceneSpec::validate(self)
    }
}
