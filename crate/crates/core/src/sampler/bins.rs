use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{softmax, Scalar};

/// Categorical distribution over `k` equal-width bins of `[lo, hi]`,
/// stored as unconstrained logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinDistribution<T> {
    logits: Vec<T>,
    lo: T,
    hi: T,
}

impl<T: Scalar> BinDistribution<T> {
    pub fn new(logits: Vec<T>, lo: T, hi: T) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "bin distribution needs k >= 2, got {}",
                logits.len()
            )));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("bin range [{lo}, {hi}] is empty")));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        Ok(Self { logits, lo, hi })
    }

    pub fn uniform(k: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(vec![T::zero(); k], lo, hi)
    }

    /// Logits `ln p`; probabilities are normalized first.
    pub fn from_probs(probs: &[T], lo: T, hi: T) -> Result<Self> {
        if probs.iter().any(|&p| !(p > T::zero()) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "bin probabilities must be positive and finite".into(),
            ));
        }
        let total: T = probs.iter().copied().sum();
        Self::new(probs.iter().map(|&p| (p / total).ln()).collect(), lo, hi)
    }

    /// Bin `dominant` holds `mass`; the rest share `1 - mass` evenly.
    pub fn dominant(k: usize, dominant: usize, mass: T, lo: T, hi: T) -> Result<Self> {
        if dominant >= k || !(mass > T::zero() && mass < T::one()) {
            return Err(Error::InvalidArgument(format!(
                "dominant bin {dominant} of {k} with mass {mass}"
            )));
        }
        let rest = (T::one() - mass) / T::from_usize_lossy(k - 1);
        let probs: Vec<T> = (0..k).map(|i| if i == dominant { mass } else { rest }).collect();
        Self::from_probs(&probs, lo, hi)
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    pub fn range(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn set_logits(&mut self, logits: &[T]) -> Result<()> {
        if logits.len() != self.k() {
            return Err(Error::LengthMismatch {
                what: "bin logits",
                expected: self.k(),
                got: logits.len(),
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        self.logits.copy_from_slice(logits);
        Ok(())
    }

    pub fn probs(&self) -> Vec<T> {
        softmax::<T, T>(&self.logits)
    }

    pub fn geometry(&self) -> BinGeometry<T> {
        BinGeometry::new(self.k(), self.lo, self.hi)
    }

    /// Bin index containing `x`; values at `hi` land in the last bin.
    pub fn bin_of(&self, x: T) -> Option<usize> {
        if x < self.lo || x > self.hi {
            return None;
        }
        let k = self.k();
        let idx = ((x - self.lo) / (self.hi - self.lo) * T::from_usize_lossy(k))
            .floor()
            .to_usize()
            .unwrap_or(0);
        Some(idx.min(k - 1))
    }
}

/// Centers and common width of the bins of a [`BinDistribution`].
#[derive(Clone, Debug, PartialEq)]
pub struct BinGeometry<T> {
    pub centers: Vec<T>,
    pub width: T,
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> BinGeometry<T> {
    /// `centers[i] = lo + (hi - lo)(i + 1/2)/k` for zero-based `i`.
    pub fn new(k: usize, lo: T, hi: T) -> Self {
        let kk = T::from_usize_lossy(k);
        let span = hi - lo;
        let centers = (0..k)
            .map(|i| lo + span * (T::from_usize_lossy(i) + T::c(0.5)) / kk)
            .collect();
        Self {
            centers,
            width: span / kk,
            lo,
            hi,
        }
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn check_matches(&self, dist: &BinDistribution<T>) -> Result<()> {
        if self.k() != dist.k() || self.lo != dist.lo || self.hi != dist.hi {
            return Err(Error::InvalidArgument(format!(
                "bin geometry (k={}, [{}, {}]) does not match distribution (k={}, [{}, {}])",
                self.k(),
                self.lo,
                self.hi,
                dist.k(),
                dist.lo,
                dist.hi
            )));
        }
        Ok(())
    }
}

/// Total variation distance `½ Σ |p_i - q_i|`.
pub fn tv_distance<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .map(|(a, b)| (*a - *b).abs())
        .sum::<T>()
        * T::c(0.5)
}
