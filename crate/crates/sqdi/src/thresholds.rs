//! Threshold calibration and information delay bounds.
//!
//! A threshold matrix `A` can be calibrated three ways:
//!
//! * from a Bayesian constraint matrix `α`:
//!   `A_{i,i} = 1/α_{i,i} − 1`, `A_{i,j} = 1/α_{j,i}` (note the transposed
//!   index), which makes the false-alarm/misidentification bounds
//!   `1/(1+A_{i,i})` and `1/A_{j,i}` exact algebraic inverses;
//! * from a conditional constraint matrix `β` with schedule parameters
//!   `(ρ, k*)`:
//!   `A_{i,i} = (1+tr β)/(β_{i,i}(1−ρ)^{k*}) − 1`,
//!   `A_{i,j} = (1+tr β)/(β_{j,i} ρ (1−ρ)^{k*})`;
//! * the optimal variant: the same formulas evaluated at the optimized
//!   prior parameter `ρ_opt`.
//!
//! The delay bounds divide logarithms of the constraints by per-stream
//! information numbers `ι_{i,j}`: `ι_{i,i}` is the ergodic information of
//! the changed stream, and `ι_{i,j} = J̄_i − max_ϑ J̄*_j(ϑ)` for `j ≠ i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::Hyperparams;
use crate::matrices::{ErrorMatrix, ThresholdMatrix, ThresholdProvenance};

/// Where the Kullback–Leibler numbers feeding a bound came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlSource {
    ClosedForm,
    McEstimated,
}

impl std::fmt::Display for KlSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KlSource::ClosedForm => write!(f, "closed-form"),
            KlSource::McEstimated => write!(f, "mc-estimated"),
        }
    }
}

/// Ergodic Kullback–Leibler numbers per stream and grid point.
///
/// `pairs[i][t] = (J̄_i(θ_t), J̄*_i(θ_t))` for stream `i` and grid point
/// index `t` in that stream's grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlTable {
    pub pairs: Vec<Vec<(f64, f64)>>,
    pub source: KlSource,
}

impl KlTable {
    pub fn n_streams(&self) -> usize {
        self.pairs.len()
    }

    /// Largest `J̄*_j` across stream `j`'s grid (closest to zero; `J̄* ≤ 0`).
    fn max_j_star(&self, j: usize) -> f64 {
        self.pairs[j]
            .iter()
            .map(|&(_, js)| js)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `A` from a Bayesian constraint matrix `α`.
pub fn thresholds_from_alpha(alpha: &ErrorMatrix) -> Result<ThresholdMatrix> {
    let n = alpha.n();
    let mut entries = vec![vec![0.0; n]; n];
    for (i, row) in entries.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            *e = if i == j {
                1.0 / alpha.get(i, i) - 1.0
            } else {
                1.0 / alpha.get(j, i)
            };
        }
    }
    ThresholdMatrix::new(entries, ThresholdProvenance::FromAlpha)
}

/// `A` from a conditional constraint matrix `β` at prior parameter `rho`.
pub fn thresholds_from_beta(
    beta: &ErrorMatrix,
    hp: &Hyperparams,
    rho: f64,
) -> Result<ThresholdMatrix> {
    build_from_beta(beta, hp.k_star, rho, ThresholdProvenance::FromBeta)
}

/// The optimal variant: `β`-derived thresholds at `ρ = rho_opt`.
pub fn thresholds_optimal(beta: &ErrorMatrix, hp: &Hyperparams) -> Result<ThresholdMatrix> {
    build_from_beta(beta, hp.k_star, hp.rho_opt, ThresholdProvenance::Optimal)
}

fn build_from_beta(
    beta: &ErrorMatrix,
    k_star: u64,
    rho: f64,
    provenance: ThresholdProvenance,
) -> Result<ThresholdMatrix> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!(
            "prior parameter must lie in (0, 1), got {rho}"
        )));
    }
    let tail = (1.0 - rho).powi(k_star as i32);
    if tail < 1e-300 {
        return Err(Error::numerical(format!(
            "(1-rho)^k_star underflowed ({tail:.3e}); use a smaller k_star or rho"
        )));
    }
    let n = beta.n();
    let scale = (1.0 + beta.trace()) / tail;
    let mut entries = vec![vec![0.0; n]; n];
    for (i, row) in entries.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            *e = if i == j {
                scale / beta.get(i, i) - 1.0
            } else {
                scale / (beta.get(j, i) * rho)
            };
        }
    }
    ThresholdMatrix::new(entries, provenance)
}

/// Per-stream false-alarm bounds `1/(1+A_{i,i})`.
pub fn pfa_bound(a: &ThresholdMatrix) -> Vec<f64> {
    (0..a.n()).map(|i| 1.0 / (1.0 + a.get(i, i))).collect()
}

/// Misidentification bounds: entry `(i, j)` is `1/A_{j,i}`, the bound on
/// deciding `j` when stream `i` changed.  The diagonal is unused and set
/// to zero.
pub fn pmi_bound(a: &ThresholdMatrix) -> Vec<Vec<f64>> {
    let n = a.n();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { 1.0 / a.get(j, i) })
                .collect()
        })
        .collect()
}

/// Information numbers `ι_{i,j}(θ)` for stream `i` at grid point index
/// `theta_idx`:
///
/// `ι_{i,i} = J̄_i(θ)` and
/// `ι_{i,j} = J̄_i(θ) − max_{ϑ ∈ grid_j} J̄*_j(ϑ)` for `j ≠ i`
/// (the infimum of `J̄_i − J̄*_j` over `ϑ` is attained at the `ϑ`
/// maximizing `J̄*_j`).
///
/// Nonpositive entries are a hard error: the delay bounds are undefined
/// without strictly positive information.
pub fn iota(kl_table: &KlTable, i: usize, theta_idx: usize) -> Result<Vec<f64>> {
    let n = kl_table.n_streams();
    if i >= n || theta_idx >= kl_table.pairs[i].len() {
        return Err(Error::Dimension("iota: index out of range".into()));
    }
    let j_bar = kl_table.pairs[i][theta_idx].0;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let v = if j == i {
            j_bar
        } else {
            j_bar - kl_table.max_j_star(j)
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::numerical(format!(
                "information number iota[{},{}] = {v} must be strictly positive",
                i + 1,
                j + 1
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Lower delay bound `b^r` with `b = max_j |log β_{j,i}| / ι_{i,j}`.
pub fn lower_bound_delay(beta: &ErrorMatrix, i: usize, iota_row: &[f64], r: f64) -> f64 {
    let b = (0..beta.n())
        .map(|j| (-beta.get(j, i).ln()) / iota_row[j])
        .fold(f64::NEG_INFINITY, f64::max);
    b.powf(r)
}

/// Upper delay bound `B^r` with `B = max_j log A_{i,j} / ι_{i,j}`.
pub fn upper_bound_delay(a: &ThresholdMatrix, i: usize, iota_row: &[f64], r: f64) -> f64 {
    let b = (0..a.n())
        .map(|j| a.log(i, j) / iota_row[j])
        .fold(f64::NEG_INFINITY, f64::max);
    b.powf(r)
}

/// First-moment theoretical delay for stream `i`:
/// `max_j |log β_{j,i}| / ι_{i,j}(θ)`.  This is the "theory" column of the
/// operating-characteristics tables; it equals [`lower_bound_delay`] at
/// `r = 1` and is usually fed MC-estimated information numbers.
pub fn theoretic_add(beta: &ErrorMatrix, i: usize, iota_row: &[f64]) -> f64 {
    lower_bound_delay(beta, i, iota_row, 1.0)
}

/// Window-length heuristic for the window-limited detector:
/// `4·⌈max_{i,j} log A_{i,j} / min positive ι⌉`.
pub fn suggested_window(a: &ThresholdMatrix, min_information: f64) -> Result<usize> {
    if !(min_information > 0.0) {
        return Err(Error::invalid(
            "window heuristic needs a positive information lower bound",
        ));
    }
    let max_log_a = (0..a.n())
        .flat_map(|i| (0..a.n()).map(move |j| (i, j)))
        .map(|(i, j)| a.log(i, j))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(4 * (max_log_a / min_information).ceil().max(1.0) as usize)
}

/// One row of a bound report: stream, grid point, information numbers and
/// the two delay bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRow {
    pub stream: usize,
    pub theta_index: usize,
    pub iota: Vec<f64>,
    pub lower_r: f64,
    pub upper_r: f64,
    pub kl_source: KlSource,
}

/// Delay bounds for every (stream, grid point) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub r: f64,
}

impl BoundReport {
    pub fn compute(
        beta: &ErrorMatrix,
        a: &ThresholdMatrix,
        kl_table: &KlTable,
        r: f64,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for i in 0..kl_table.n_streams() {
            for theta_idx in 0..kl_table.pairs[i].len() {
                let iota_row = iota(kl_table, i, theta_idx)?;
                rows.push(BoundRow {
                    stream: i + 1,
                    theta_index: theta_idx,
                    lower_r: lower_bound_delay(beta, i, &iota_row, r),
                    upper_r: upper_bound_delay(a, i, &iota_row, r),
                    iota: iota_row,
                    kl_source: kl_table.source,
                });
            }
        }
        Ok(Self { rows, r })
    }

    /// CSV rows `i, theta_index, iota_1..N, b_r, B_r, kl_source`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.rows.first().map_or(0, |r| r.iota.len());
        let mut header = vec!["i".to_string(), "theta_index".to_string()];
        header.extend((1..=n).map(|j| format!("iota_{j}")));
        header.push("b_r".into());
        header.push("B_r".into());
        header.push("kl_source".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.stream.to_string(), row.theta_index.to_string()];
            rec.extend(row.iota.iter().map(|v| format!("{v}")));
            rec.push(format!("{}", row.lower_r));
            rec.push(format!("{}", row.upper_r));
            rec.push(row.kl_source.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
