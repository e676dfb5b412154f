//! Discretized weight measures over post-change parameter sets.
//!
//! Each stream carries a finite grid of candidate post-change parameter
//! vectors together with strictly positive weights summing to one.  The
//! mixture statistic integrates over this grid; the sup statistic takes
//! the max over the same points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite grid of parameter vectors with strictly positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl ParameterGrid {
    /// Grid with explicit weights.  Weights must be strictly positive and
    /// are normalized to sum to one; points must be pairwise distinct.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("parameter grid must not be empty"));
        }
        if points.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} grid points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::invalid("grid points must have dimension >= 1"));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::Dimension(
                    "grid points have inconsistent dimensions".into(),
                ));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("grid points must be finite"));
            }
        }
        for (i, a) in points.iter().enumerate() {
            for b in points.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::invalid(format!(
                        "grid points must be pairwise distinct, found duplicate {a:?}"
                    )));
                }
            }
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("grid weights must be strictly positive"));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            points,
            weights,
            log_weights,
        })
    }

    /// Uniformly weighted grid.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n.max(1)])
    }

    /// Uniform grid over scalar parameters `lo, ..., hi` with `count` points.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("linspace grid needs count >= 1"));
        }
        if count == 1 {
            return Self::uniform(vec![vec![lo]]);
        }
        let step = (hi - lo) / (count - 1) as f64;
        let points = (0..count).map(|i| vec![lo + step * i as f64]).collect();
        Self::uniform(points)
    }

    /// Product grid from per-coordinate `(lo, hi, count)` descriptors.
    pub fn linspace_product(lo: &[f64], hi: &[f64], count: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != count.len() || lo.is_empty() {
            return Err(Error::Dimension(
                "linspace descriptors must have equal nonzero lengths".into(),
            ));
        }
        let axes: Vec<Vec<f64>> = lo
            .iter()
            .zip(hi)
            .zip(count)
            .map(|((&l, &h), &c)| {
                if c == 0 {
                    return Err(Error::invalid("linspace grid needs count >= 1"));
                }
                if c == 1 {
                    return Ok(vec![l]);
                }
                let step = (h - l) / (c - 1) as f64;
                Ok((0..c).map(|i| l + step * i as f64).collect())
            })
            .collect::<Result<_>>()?;
        let mut points = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            points = next;
        }
        Self::uniform(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dimension of each parameter vector.
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.points[idx]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}
