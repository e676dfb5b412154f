//! Geometric prior on the change point.
//!
//! The candidate change points `k = 0, 1, 2, ...` are weighted by
//! `π_k = ρ (1 − ρ)^k` with a fixed `ρ ∈ (0, 1)`; the tail mass
//! `Σ_{l ≥ n} π_l = (1 − ρ)^n` is the denominator of the diagonal entries
//! of the decision matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric change-point prior with parameter `ρ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricPrior {
    rho: f64,
}

impl GeometricPrior {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || !rho.is_finite() {
            return Err(Error::invalid(format!(
                "geometric prior parameter must lie in (0, 1), got {rho}"
            )));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `π_k = ρ (1 − ρ)^k`.
    pub fn mass(&self, k: u64) -> f64 {
        self.rho * (1.0 - self.rho).powi(k as i32)
    }

    /// `log π_k`, used directly by the log-domain mixture recursions.
    pub fn log_mass(&self, k: u64) -> f64 {
        self.rho.ln() + k as f64 * (-self.rho).ln_1p()
    }

    /// Tail mass `Σ_{l ≥ n} π_l = (1 − ρ)^n`.
    pub fn tail(&self, n: u64) -> f64 {
        (1.0 - self.rho).powi(n as i32)
    }

    /// `log` of the tail mass, `n · log(1 − ρ)`.
    pub fn log_tail(&self, n: u64) -> f64 {
        n as f64 * (-self.rho).ln_1p()
    }

    /// Sample a change point from the prior (support `0, 1, 2, ...`).
    pub fn sample(&self, rng: &mut impl rand::Rng) -> u64 {
        // Inverse transform on the geometric CDF.
        let u: f64 = rng.gen::<f64>();
        let k = (1.0 - u).ln() / (1.0 - self.rho).ln();
        k.floor().max(0.0) as u64
    }
}

/// Convenience alias for an operation-style call site.
pub fn prior_mass(prior: &GeometricPrior, k: u64) -> f64 {
    prior.mass(k)
}

/// Convenience alias for an operation-style call site.
pub fn prior_tail(prior: &GeometricPrior, n: u64) -> f64 {
    prior.tail(n)
}
