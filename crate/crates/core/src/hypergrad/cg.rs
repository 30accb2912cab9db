use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Conjugate-gradient settings for `(H + λI) z = g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgConfig {
    /// `None` means `min(m, 100)`.
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default = "default_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_damping() -> f64 {
    1e-3
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: None,
            residual_tol: default_tol(),
            damping: default_damping(),
        }
    }
}

impl CgConfig {
    pub fn iters_for(&self, m: usize) -> usize {
        self.max_iters.unwrap_or(m.min(100))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) || !(self.damping >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cg needs residual_tol > 0 and damping >= 0, got {} and {}",
                self.residual_tol, self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution<T> {
    pub z: Vec<T>,
    /// `‖(H+λI)z − g‖ / ‖g‖` from the recurrence.
    pub residual: T,
    pub iters: usize,
    pub converged: bool,
}

/// Solves `(A + λI) z = b` where `apply` computes `A·v`. Fails on a
/// direction of non-positive curvature.
pub fn conjugate_gradient<T, F>(mut apply: F, b: &[T], cfg: &CgConfig) -> Result<CgSolution<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Vec<T>>,
{
    cfg.validate()?;
    let n = b.len();
    let lambda = T::c(cfg.damping);
    let tol = T::c(cfg.residual_tol);
    let b_norm = dot(b, b).sqrt();
    let mut z = vec![T::zero(); n];
    if b_norm == T::zero() {
        return Ok(CgSolution {
            z,
            residual: T::zero(),
            iters: 0,
            converged: true,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let max_iters = cfg.iters_for(n);
    let mut iters = 0;
    while iters < max_iters && rr.sqrt() > tol * b_norm {
        let mut ap = apply(&p)?;
        if ap.len() != n {
            return Err(Error::LengthMismatch {
                what: "operator output",
                expected: n,
                got: ap.len(),
            });
        }
        for (a, &pi) in ap.iter_mut().zip(&p) {
            *a += lambda * pi;
        }
        let curv = dot(&p, &ap);
        if !(curv > T::zero()) {
            return Err(Error::CgBreakdown {
                iter: iters,
                curvature: curv.to_f64_lossy(),
            });
        }
        let alpha = rr / curv;
        for i in 0..n {
            z[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iters += 1;
    }
    let residual = rr.sqrt() / b_norm;
    Ok(CgSolution {
        z,
        residual,
        iters,
        converged: residual <= tol,
    })
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
