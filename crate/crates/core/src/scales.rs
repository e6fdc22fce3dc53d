//! Model parameters and the deterministic time scales.
//!
//! Everything here is a pure function of `(alpha, beta)` and `t`. Logarithms
//! are natural throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pareto exponent `alpha`, offspring stability index `beta` and the
/// exponents derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    /// Fractal dimension of the tree, `beta / (beta - 1)`.
    pub d: f64,
    /// `d / (alpha - d)`.
    pub q: f64,
    /// `d alpha / (alpha - d)`.
    pub z: f64,
    /// `q + 2`.
    pub p: f64,
    /// `p d / alpha + z + 1`.
    pub c: f64,
}

impl ModelParams {
    /// Derives all exponents. Requires `beta` in `(1, 2]` and `alpha > d`;
    /// for `alpha <= d` the solution has infinite mass.
    pub fn derive(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta > 1.0 && beta <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (1, 2], got {beta}"
            )));
        }
        let d = beta / (beta - 1.0);
        if !alpha.is_finite() || alpha <= d {
            return Err(Error::InvalidParameter(format!(
                "alpha must exceed d = {d}, got {alpha}"
            )));
        }
        let q = d / (alpha - d);
        let z = d * alpha / (alpha - d);
        let p = q + 2.0;
        let c = p * d / alpha + z + 1.0;
        Ok(Self {
            alpha,
            beta,
            d,
            q,
            z,
            p,
            c,
        })
    }

    /// `a(t) = (t / log t)^q`, the height of the relevant potential.
    pub fn scale_a(&self, t: f64) -> Result<f64> {
        Ok(base(t)?.powf(self.q))
    }

    /// `r(t) = (t / log t)^(q+1)`, the localisation radius.
    pub fn scale_r(&self, t: f64) -> Result<f64> {
        Ok(base(t)?.powf(self.q + 1.0))
    }

    /// `R(t) = r(t) (log t)^p`, the truncation radius.
    pub fn scale_big_r(&self, t: f64) -> Result<f64> {
        Ok(self.scale_r(t)? * t.ln().powf(self.p))
    }

    /// Upper limit (exclusive) for the `delta` used in the `G_t` threshold.
    pub fn delta_max(&self) -> f64 {
        self.d / (3.0 * self.alpha) * (self.q / (self.q + 1.0))
    }

    pub fn default_delta(&self) -> f64 {
        0.5 * self.delta_max()
    }
}

fn base(t: f64) -> Result<f64> {
    if !(t > 1.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "scale functions need t > 1, got {t}"
        )));
    }
    Ok(t / t.ln())
}
