//! Gradient estimators for `∇_logits E[f]` under a bin distribution.

use super::bins::BinDistribution;
use super::gumbel::{hard_draw, relaxed_draw, rng_from_seed, BinNoise};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `∇_logits ln p(b) = e_b - p`, scaled by `payoff` and added into `out`.
pub fn accumulate_score<T: Scalar>(out: &mut [T], probs: &[T], bin: usize, payoff: T) {
    for (i, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
        let indicator = if i == bin { T::one() } else { T::zero() };
        *o += payoff * (indicator - p);
    }
}

/// REINFORCE estimate `(1/n) Σ_j payoff(b_j) ∇ ln p(b_j)` over categorical draws.
pub fn score_function_grad<T: Scalar>(
    dist: &BinDistribution<T>,
    per_bin_payoff: &[T],
    n_samples: usize,
    rng_seed: u64,
) -> Result<Vec<T>> {
    if per_bin_payoff.len() != dist.k() {
        return Err(Error::LengthMismatch {
            what: "per-bin payoff",
            expected: dist.k(),
            got: per_bin_payoff.len(),
        });
    }
    check_n(n_samples)?;
    let probs = dist.probs();
    let mut rng = rng_from_seed(rng_seed);
    let mut g = vec![T::zero(); dist.k()];
    for _ in 0..n_samples {
        let bin = BinNoise::<T>::draw(&mut rng, dist.k()).hard_bin(&probs);
        accumulate_score(&mut g, &probs, bin, per_bin_payoff[bin]);
    }
    let n = T::from_usize_lossy(n_samples);
    Ok(g.into_iter().map(|x| x / n).collect())
}

/// REINFORCE estimate of `∇ E[f(V)]` where `V` is uniform inside a
/// categorically drawn bin.
pub fn score_function_value_grad<T: Scalar>(
    dist: &BinDistribution<T>,
    payoff: impl Fn(T) -> T,
    n_samples: usize,
    rng_seed: u64,
) -> Result<Vec<T>> {
    check_n(n_samples)?;
    let probs = dist.probs();
    let mut rng = rng_from_seed(rng_seed);
    let mut g = vec![T::zero(); dist.k()];
    for _ in 0..n_samples {
        let noise = BinNoise::draw(&mut rng, dist.k());
        let (bin, v) = hard_draw(dist, &noise);
        accumulate_score(&mut g, &probs, bin, payoff(v));
    }
    let n = T::from_usize_lossy(n_samples);
    Ok(g.into_iter().map(|x| x / n).collect())
}

/// Reparametrized (pathwise) estimate of `∇ E[f(V)]` through the relaxed draw.
/// Consumes the random stream exactly like [`score_function_value_grad`].
pub fn pathwise_value_grad<T, F>(
    dist: &BinDistribution<T>,
    tau: T,
    payoff: F,
    n_samples: usize,
    rng_seed: u64,
) -> Result<Vec<T>>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    check_n(n_samples)?;
    let geom = dist.geometry();
    let mut rng = rng_from_seed(rng_seed);
    let mut g = vec![T::zero(); dist.k()];
    for _ in 0..n_samples {
        let noise = BinNoise::draw(&mut rng, dist.k());
        let tape = Tape::new();
        let logits = tape.vars(dist.logits());
        let d = relaxed_draw(&logits, &geom, &noise, tau);
        let y = payoff(d.value);
        for (acc, gi) in g.iter_mut().zip(tape.grad(y, &logits)?) {
            *acc += gi;
        }
    }
    let n = T::from_usize_lossy(n_samples);
    Ok(g.into_iter().map(|x| x / n).collect())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("n_samples must be >= 1".into()))
    } else {
        Ok(())
    }
}
