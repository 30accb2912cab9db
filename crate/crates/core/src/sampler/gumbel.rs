use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bins::{BinDistribution, BinGeometry};
use crate::error::{Error, Result};
use crate::scalar::{softmax, Real, Scalar};

/// Probabilities are floored here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-8;

/// Seeded PRNG used for every random draw in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard Gumbel draw by inverse CDF, `-ln(-ln U)` with `U ∈ (0, 1)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// Frozen randomness for one draw from a bin distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinNoise<T> {
    pub gumbels: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> BinNoise<T> {
    /// Consumes `k` Gumbel draws followed by one uniform.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Self {
        let gumbels = (0..k).map(|_| T::c(gumbel(rng))).collect();
        let eps = T::c(rng.gen::<f64>());
        Self { gumbels, eps }
    }

    pub fn from_seed(seed: u64, k: usize) -> Self {
        Self::draw(&mut rng_from_seed(seed), k)
    }

    /// Gumbel-max bin: `argmax_i (G_i + ln p_i)`.
    pub fn hard_bin(&self, probs: &[T]) -> usize {
        let floor = T::c(PROB_FLOOR);
        let mut best = 0;
        let mut best_v = T::neg_infinity();
        for (i, (&g, &p)) in self.gumbels.iter().zip(probs).enumerate() {
            let v = g + p.max(floor).ln();
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }
}

/// `y_i = softmax((G_i + ln p_i)/τ)` with `p = softmax(logits)`.
pub fn gumbel_weights<T: Scalar, R: Real<T>>(logits: &[R], gumbels: &[T], tau: T) -> Vec<R> {
    let floor = T::c(PROB_FLOOR);
    let probs = softmax(logits);
    let scores: Vec<R> = probs
        .iter()
        .zip(gumbels)
        .map(|(&p, &g)| (p.max_c(floor).ln() + g) / tau)
        .collect();
    softmax(&scores)
}

/// Intermediate quantities of one relaxed draw, in any [`Real`].
#[derive(Clone, Debug)]
pub struct RelaxedDraw<R> {
    pub weights: Vec<R>,
    pub approx_center: R,
    pub bin_start: R,
    pub bin_end: R,
    pub value: R,
}

/// Relaxed bin sample: weights, soft center `Σ y_i c_i`, the bin around it
/// and the uniform reparametrization `(1-ε)·start + ε·end`.
pub fn relaxed_draw<T: Scalar, R: Real<T>>(
    logits: &[R],
    geom: &BinGeometry<T>,
    noise: &BinNoise<T>,
    tau: T,
) -> RelaxedDraw<R> {
    let weights = gumbel_weights(logits, &noise.gumbels, tau);
    let terms: Vec<R> = weights
        .iter()
        .zip(&geom.centers)
        .map(|(&y, &c)| y * c)
        .collect();
    let approx_center = R::sum(&terms);
    let half = geom.width * T::c(0.5);
    let bin_start = approx_center - half;
    let bin_end = approx_center + half;
    let value = bin_start * (T::one() - noise.eps) + bin_end * noise.eps;
    RelaxedDraw {
        weights,
        approx_center,
        bin_start,
        bin_end,
        value,
    }
}

/// Exact categorical sample followed by a uniform draw inside the bin.
pub fn hard_draw<T: Scalar>(dist: &BinDistribution<T>, noise: &BinNoise<T>) -> (usize, T) {
    let geom = dist.geometry();
    let bin = noise.hard_bin(&dist.probs());
    let half = geom.width * T::c(0.5);
    let (start, end) = (geom.centers[bin] - half, geom.centers[bin] + half);
    (bin, start * (T::one() - noise.eps) + end * noise.eps)
}

/// Output of [`gumbel_softmax`].
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample<T> {
    pub seed: Option<u64>,
    pub gumbels: Vec<T>,
    pub weights: Vec<T>,
}

/// One reparametrized draw with everything needed to replay it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace<T> {
    pub seed: u64,
    pub gumbels: Vec<T>,
    pub weights: Vec<T>,
    pub approx_center: T,
    pub bin_start: T,
    pub bin_end: T,
    pub eps: T,
    pub value: T,
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}

pub fn gumbel_softmax<T: Scalar>(
    dist: &BinDistribution<T>,
    tau: T,
    rng_seed: u64,
) -> Result<GumbelSample<T>> {
    let noise = BinNoise::<T>::from_seed(rng_seed, dist.k());
    let mut s = gumbel_softmax_with_noise(dist, tau, &noise.gumbels)?;
    s.seed = Some(rng_seed);
    Ok(s)
}

/// [`gumbel_softmax`] with caller-supplied Gumbel noise.
pub fn gumbel_softmax_with_noise<T: Scalar>(
    dist: &BinDistribution<T>,
    tau: T,
    gumbels: &[T],
) -> Result<GumbelSample<T>> {
    check_tau(tau)?;
    if gumbels.len() != dist.k() {
        return Err(Error::LengthMismatch {
            what: "gumbel noise",
            expected: dist.k(),
            got: gumbels.len(),
        });
    }
    let weights = gumbel_weights::<T, T>(dist.logits(), gumbels, tau);
    Ok(GumbelSample {
        seed: None,
        gumbels: gumbels.to_vec(),
        weights,
    })
}

pub fn draw_pose<T: Scalar>(
    dist: &BinDistribution<T>,
    geom: &BinGeometry<T>,
    tau: T,
    rng_seed: u64,
) -> Result<SampleTrace<T>> {
    let noise = BinNoise::from_seed(rng_seed, dist.k());
    draw_pose_with_noise(dist, geom, tau, rng_seed, &noise)
}

/// [`draw_pose`] with caller-supplied noise; `seed` is recorded as given.
pub fn draw_pose_with_noise<T: Scalar>(
    dist: &BinDistribution<T>,
    geom: &BinGeometry<T>,
    tau: T,
    seed: u64,
    noise: &BinNoise<T>,
) -> Result<SampleTrace<T>> {
    check_tau(tau)?;
    geom.check_matches(dist)?;
    if noise.gumbels.len() != dist.k() {
        return Err(Error::LengthMismatch {
            what: "gumbel noise",
            expected: dist.k(),
            got: noise.gumbels.len(),
        });
    }
    let d = relaxed_draw::<T, T>(dist.logits(), geom, noise, tau);
    Ok(SampleTrace {
        seed,
        gumbels: noise.gumbels.clone(),
        weights: d.weights,
        approx_center: d.approx_center,
        bin_start: d.bin_start,
        bin_end: d.bin_end,
        eps: noise.eps,
        value: d.value,
    })
}
