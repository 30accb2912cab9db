use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Tolerance on `Σ coeffs = 1` accepted by [`LightingMixture`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Appearance embedding written as a convex combination of known embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingMixture<T> {
    coeffs: Vec<T>,
    embeddings: Vec<Vec<T>>,
}

impl<T: Scalar> LightingMixture<T> {
    pub fn new(coeffs: Vec<T>, embeddings: Vec<Vec<T>>) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::InvalidArgument("no lighting embeddings".into()));
        }
        let dim = embeddings[0].len();
        if dim == 0 || embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::InvalidArgument(
                "lighting embeddings must share a non-zero dimension".into(),
            ));
        }
        if coeffs.len() != embeddings.len() {
            return Err(Error::LengthMismatch {
                what: "lighting coefficients",
                expected: embeddings.len(),
                got: coeffs.len(),
            });
        }
        check_simplex(&coeffs)?;
        Ok(Self { coeffs, embeddings })
    }

    pub fn uniform(embeddings: Vec<Vec<T>>) -> Result<Self> {
        let n = embeddings.len().max(1);
        Self::new(vec![T::one() / T::from_usize_lossy(n); embeddings.len()], embeddings)
    }

    pub fn one_hot(index: usize, embeddings: Vec<Vec<T>>) -> Result<Self> {
        let mut c = vec![T::zero(); embeddings.len()];
        if index >= c.len() {
            return Err(Error::InvalidArgument(format!("embedding {index} out of range")));
        }
        c[index] = T::one();
        Self::new(c, embeddings)
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn embeddings(&self) -> &[Vec<T>] {
        &self.embeddings
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }

    pub fn set_coeffs(&mut self, coeffs: &[T]) -> Result<()> {
        if coeffs.len() != self.coeffs.len() {
            return Err(Error::LengthMismatch {
                what: "lighting coefficients",
                expected: self.coeffs.len(),
                got: coeffs.len(),
            });
        }
        check_simplex(coeffs)?;
        self.coeffs.copy_from_slice(coeffs);
        Ok(())
    }

    /// `ℓ = Σ_i ψ_i ℓ_i`
    pub fn mix(&self) -> Vec<T> {
        mix_lighting::<T, T>(&self.coeffs, &self.embeddings)
    }
}

fn check_simplex<T: Scalar>(c: &[T]) -> Result<()> {
    let total: T = c.iter().copied().sum();
    if c.iter().any(|&x| !x.is_finite() || x < T::zero())
        || (total - T::one()).abs() > T::c(SIMPLEX_TOL)
    {
        return Err(Error::InvalidArgument(format!(
            "lighting coefficients off the simplex (sum {total})"
        )));
    }
    Ok(())
}

/// Convex combination of `embeddings` with differentiable coefficients.
pub fn mix_lighting<T: Scalar, R: Real<T>>(coeffs: &[R], embeddings: &[Vec<T>]) -> Vec<R> {
    let dim = embeddings[0].len();
    (0..dim)
        .map(|d| {
            let terms: Vec<R> = coeffs
                .iter()
                .zip(embeddings)
                .map(|(&c, e)| c * e[d])
                .collect();
            R::sum(&terms)
        })
        .collect()
}

/// Euclidean projection onto `{w : Σ w_i = 1, w_i ≥ 0}` by sort and threshold.
pub fn project_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let total: T = v.iter().copied().sum();
    let slack = T::epsilon() * T::from_usize_lossy(4 * n);
    if v.iter().all(|&x| x >= T::zero()) && (total - T::one()).abs() <= slack {
        return v.to_vec();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cumsum = T::zero();
    let mut threshold = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - T::one()) / T::from_usize_lossy(j + 1);
        if uj - t > T::zero() {
            threshold = t;
        }
    }
    let mut w: Vec<T> = v.iter().map(|&x| (x - threshold).max(T::zero())).collect();
    // fold the rounding residue into the largest coordinate
    let s: T = w.iter().copied().sum();
    let imax = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    w[imax] += T::one() - s;
    w
}
