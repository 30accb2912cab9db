use std::ops::Range;

use rand::Rng;

use super::label::Label;
use super::scene::{RenderParams, SceneSpec, LIGHTING_DIM};
use super::Renderer;
use crate::error::{Error, Result};
use crate::sampler::rng_from_seed;
use crate::scalar::{Real, Scalar};

/// Tiny neural field standing in for a trained radiance field: a fixed random
/// tanh layer over pixel position and pose features, with a per-class linear
/// read-out fitted by ridge regression to an analytic scene. Pixels are
/// evaluated independently and differentiably, like the analytic renderer.
#[derive(Clone, Debug)]
pub struct NeuralField<T> {
    width: usize,
    height: usize,
    default_lighting: Vec<T>,
    /// `hidden × POSE_FEATURES`
    pose_weights: Vec<Vec<T>>,
    /// `(w_x, w_y, bias)` per hidden unit.
    pixel_weights: Vec<[T; 3]>,
    /// One read-out per class; last entry is the bias.
    readout: Vec<Vec<T>>,
    labels_from: SceneSpec<T>,
}

const POSE_FEATURES: usize = 5 + LIGHTING_DIM;

/// Settings for [`NeuralField::fit`].
#[derive(Clone, Debug)]
pub struct FieldFit {
    pub hidden: usize,
    pub poses_per_class: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for FieldFit {
    fn default() -> Self {
        Self {
            hidden: 160,
            poses_per_class: 48,
            ridge: 1e-3,
            seed: 0,
        }
    }
}

impl<T: Scalar> NeuralField<T> {
    /// Fits the read-out of each class to renders of `scene` at random poses
    /// (zoom in `[0.8, 1.2]`, default lighting).
    pub fn fit(scene: &SceneSpec<T>, cfg: &FieldFit) -> Result<Self> {
        scene.validate()?;
        let mut rng = rng_from_seed(cfg.seed);
        let pose_weights: Vec<Vec<T>> = (0..cfg.hidden)
            .map(|_| {
                (0..POSE_FEATURES)
                    .map(|_| T::c(rng.gen_range(-1.5..1.5)))
                    .collect()
            })
            .collect();
        let pixel_weights: Vec<[T; 3]> = (0..cfg.hidden)
            .map(|_| {
                [
                    T::c(rng.gen_range(-4.0..4.0)),
                    T::c(rng.gen_range(-4.0..4.0)),
                    T::c(rng.gen_range(-2.0..2.0)),
                ]
            })
            .collect();
        let mut field = Self {
            width: scene.width,
            height: scene.height,
            default_lighting: scene.default_lighting.clone(),
            pose_weights,
            pixel_weights,
            readout: Vec::new(),
            labels_from: scene.clone(),
        };
        let h = cfg.hidden + 1;
        for class in 0..scene.num_classes() {
            let mut gram = vec![0.0f64; h * h];
            let mut rhs = vec![0.0f64; h];
            for _ in 0..cfg.poses_per_class {
                let params = RenderParams::new(
                    T::c(rng.gen_range(0.0..360.0)),
                    T::c(rng.gen_range(0.0..360.0)),
                    T::c(rng.gen_range(0.8..1.2)),
                )?;
                let target = scene.render_range(class, &params, 0..scene.num_pixels())?;
                let proj = field.project_pose(&params);
                for (idx, &px) in target.iter().enumerate() {
                    let feats: Vec<f64> = field
                        .hidden_at(&proj, idx)
                        .into_iter()
                        .map(|x| x.to_f64_lossy())
                        .chain(std::iter::once(1.0))
                        .collect();
                    let y = px.to_f64_lossy().clamp(0.01, 0.99);
                    let logit = (y / (1.0 - y)).ln();
                    for i in 0..h {
                        rhs[i] += feats[i] * logit;
                        for j in 0..=i {
                            gram[i * h + j] += feats[i] * feats[j];
                        }
                    }
                }
            }
            for i in 0..h {
                for j in 0..i {
                    gram[j * h + i] = gram[i * h + j];
                }
                gram[i * h + i] += cfg.ridge;
            }
            let beta = cholesky_solve(&mut gram, &rhs, h)?;
            field.readout.push(beta.into_iter().map(T::c).collect());
        }
        Ok(field)
    }

    fn pose_features<R: Real<T>>(&self, params: &RenderParams<R>) -> Vec<R> {
        let deg = T::c(std::f64::consts::PI / 180.0);
        let phi = params.phi * deg;
        let rho = params.rho * deg;
        let mut f = vec![phi.cos(), phi.sin(), rho.cos(), rho.sin(), params.zoom];
        match &params.lighting {
            Some(l) => f.extend_from_slice(l),
            None => f.extend(self.default_lighting.iter().map(|&x| params.zoom.lift(x))),
        }
        f
    }

    fn project_pose<R: Real<T>>(&self, params: &RenderParams<R>) -> Vec<R> {
        let f = self.pose_features(params);
        self.pose_weights
            .iter()
            .map(|w| {
                let terms: Vec<R> = f.iter().zip(w).map(|(&x, &wi)| x * wi).collect();
                R::sum(&terms)
            })
            .collect()
    }

    fn hidden_at<R: Real<T>>(&self, proj: &[R], idx: usize) -> Vec<R> {
        let x = T::c(((idx % self.width) as f64 + 0.5) / self.width as f64 * 2.0 - 1.0);
        let y = T::c(((idx / self.width) as f64 + 0.5) / self.height as f64 * 2.0 - 1.0);
        proj.iter()
            .zip(&self.pixel_weights)
            .map(|(&q, w)| (q + (w[0] * x + w[1] * y + w[2])).tanh())
            .collect()
    }
}

impl<T: Scalar> Renderer<T> for NeuralField<T> {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn num_classes(&self) -> usize {
        self.readout.len()
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
        let beta = self
            .readout
            .get(class)
            .ok_or_else(|| Error::InvalidArgument(format!("class {class} not in field")))?;
        if let Some(l) = &params.lighting {
            if l.len() != LIGHTING_DIM {
                return Err(Error::LengthMismatch {
                    what: "lighting vector",
                    expected: LIGHTING_DIM,
                    got: l.len(),
                });
            }
        }
        let proj = self.project_pose(params);
        let (w, bias) = beta.split_at(beta.len() - 1);
        Ok(range
            .map(|idx| {
                let hidden = self.hidden_at(&proj, idx);
                let terms: Vec<R> = hidden.iter().zip(w).map(|(&h, &b)| h * b).collect();
                (R::sum(&terms) + bias[0]).sigmoid()
            })
            .collect())
    }

    /// Labels come from the analytic scene the field was fitted to.
    fn label(&self, class: usize, params: &RenderParams<T>) -> Result<Label> {
        self.labels_from.label(class, params)
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 {
            return Err(Error::InvalidArgument("ridge system not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}
