//! Error-probability constraint matrices and threshold matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N×N matrix of error-probability constraints (`β` or `α`), every entry
/// strictly inside `(0, 1)`.
///
/// Entry `(i, j)` with `i ≠ j` constrains misidentification of stream `i`
/// as stream `j`; the diagonal constrains false alarms on stream `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    entries: Vec<Vec<f64>>,
}

impl ErrorMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::invalid("error matrix must be nonempty"));
        }
        for row in &entries {
            if row.len() != n {
                return Err(Error::Dimension("error matrix must be square".into()));
            }
            for &v in row {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::invalid(format!(
                        "error matrix entries must lie strictly in (0, 1), got {v}"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Constant matrix with all entries equal to `value`.
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![vec![value; n]; n])
    }

    /// The `ε/(i+j)` pattern (1-based indices), the pattern used by the
    /// operating-characteristics tables.
    pub fn scaled_inverse_sum(n: usize, epsilon: f64) -> Result<Self> {
        let entries = (1..=n)
            .map(|i| (1..=n).map(|j| epsilon / (i + j) as f64).collect())
            .collect();
        Self::new(entries)
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn max_entry(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.entries[i][i]).sum()
    }

    /// Entrywise scaling by `factor`; fails if any scaled entry leaves (0, 1).
    pub fn scale(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.entries
                .iter()
                .map(|row| row.iter().map(|v| v * factor).collect())
                .collect(),
        )
    }
}

/// Provenance of a threshold matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdProvenance {
    /// Inverted from a PFA/PMI constraint matrix `α`.
    FromAlpha,
    /// Derived from a `β` constraint matrix with schedule parameters.
    FromBeta,
    /// The `β`-derived variant evaluated at the optimized prior parameter.
    Optimal,
    /// Supplied directly by the user.
    Manual,
}

/// N×N matrix of positive stopping thresholds `A` with calibration
/// provenance.  Stored together with the entrywise logs, which are what
/// the stopping rule actually compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMatrix {
    entries: Vec<Vec<f64>>,
    provenance: ThresholdProvenance,
}

impl ThresholdMatrix {
    pub fn new(entries: Vec<Vec<f64>>, provenance: ThresholdProvenance) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::invalid("threshold matrix must be nonempty"));
        }
        for row in &entries {
            if row.len() != n {
                return Err(Error::Dimension("threshold matrix must be square".into()));
            }
            for &v in row {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "threshold entries must be positive and finite, got {v}"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            provenance,
        })
    }

    pub fn manual(entries: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(entries, ThresholdProvenance::Manual)
    }

    /// Constant matrix, mostly useful in tests and toy runs.
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(
            vec![vec![value; n]; n],
            ThresholdProvenance::Manual,
        )
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn log(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j].ln()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn provenance(&self) -> ThresholdProvenance {
        self.provenance
    }

    /// Copy with one entry replaced (used by the pathwise monotonicity
    /// checks).
    pub fn with_entry(&self, i: usize, j: usize, value: f64) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries[i][j] = value;
        Self::new(entries, ThresholdProvenance::Manual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_matrix_rejects_out_of_range() {
        assert!(ErrorMatrix::new(vec![vec![0.5, 1.0], vec![0.1, 0.2]]).is_err());
        assert!(ErrorMatrix::new(vec![vec![0.5, 0.0], vec![0.1, 0.2]]).is_err());
        assert!(ErrorMatrix::new(vec![vec![0.5], vec![0.1]]).is_err());
    }

    #[test]
    fn derived_scalars() {
        let m = ErrorMatrix::scaled_inverse_sum(5, 0.3).unwrap();
        assert!((m.max_entry() - 0.15).abs() < 1e-15);
        assert!((m.min_entry() - 0.03).abs() < 1e-15);
        // tr β = 0.3·(1/2 + 1/4 + 1/6 + 1/8 + 1/10)
        let expect = 0.3 * (0.5 + 0.25 + 1.0 / 6.0 + 0.125 + 0.1);
        assert!((m.trace() - expect).abs() < 1e-15);
    }

    #[test]
    fn threshold_matrix_requires_positive_entries() {
        assert!(ThresholdMatrix::constant(2, 0.0).is_err());
        assert!(ThresholdMatrix::constant(2, f64::INFINITY).is_err());
        assert!(ThresholdMatrix::constant(2, 3.0).is_ok());
    }
}
