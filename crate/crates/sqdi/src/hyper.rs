//! Hyperparameter schedules derived from a constraint matrix `β`.
//!
//! Natural logarithms throughout.  `⌊x⌋` is used wherever the schedules
//! call for an integer part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrices::ErrorMatrix;

/// Schedule parameters derived from `β`:
///
/// * `rho_beta  = 1 / (1 + |log β_max|)`
/// * `m_star    = ⌊|log β_min| / rho_beta⌋`
/// * `k_star    = ⌊k_check · m_star⌋` for a fixed `k_check > 1`
/// * `rho_opt   = |log β_max| · rho_beta / (|log β_min| · (1 + |log rho_beta|))`
///
/// `r` is the moment order the delay bounds are reported for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub rho_beta: f64,
    pub m_star: u64,
    pub k_star: u64,
    pub k_check: f64,
    pub rho_opt: f64,
    pub r: f64,
}

/// Derive the schedule from `β`.  `r` defaults to 1 in callers that do not
/// care about higher moments.
pub fn hyperparams_from_beta(beta: &ErrorMatrix, k_check: f64, r: f64) -> Result<Hyperparams> {
    if !(k_check > 1.0) {
        return Err(Error::invalid(format!("k_check must exceed 1, got {k_check}")));
    }
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("moment order r must be >= 1, got {r}")));
    }
    let beta_max = beta.max_entry();
    let beta_min = beta.min_entry();
    if !(beta_max < 1.0) || !(beta_min > 0.0) {
        return Err(Error::invalid(
            "beta entries must lie strictly in (0, 1)".to_string(),
        ));
    }
    let abs_log_max = -beta_max.ln();
    let abs_log_min = -beta_min.ln();
    let rho_beta = 1.0 / (1.0 + abs_log_max);
    let m_star = (abs_log_min / rho_beta).floor() as u64;
    let k_star = (k_check * m_star as f64).floor() as u64;
    if m_star == 0 || k_star <= m_star {
        return Err(Error::Degenerate(format!(
            "schedule collapsed: m_star={m_star}, k_star={k_star} (need 1 <= m_star < k_star)"
        )));
    }
    let rho_opt = abs_log_max * rho_beta / (abs_log_min * (1.0 + rho_beta.ln().abs()));
    if !(rho_opt > 0.0 && rho_opt < 1.0) {
        return Err(Error::Degenerate(format!(
            "optimized prior parameter {rho_opt} outside (0, 1)"
        )));
    }
    Ok(Hyperparams {
        rho_beta,
        m_star,
        k_star,
        k_check,
        rho_opt,
        r,
    })
}

/// The two constraint matrices that sandwich the conditional-error class
/// between Bayesian classes:
///
/// * `α1_{i,i} = β_{i,i} (1−ρ)^{k*} / (1 + tr β)`,
///   `α1_{i,j} = β_{i,j} ρ (1−ρ)^{k*} / (1 + tr β)` for `i ≠ j`;
/// * `α2_{i,i} = β_{i,i} + (1−ρ)^{m*+1}`,
///   `α2_{i,j} = β_{i,j} + (1−ρ)^{k*+1}` for `i ≠ j`,
///
/// evaluated at `ρ = rho_opt`.  Configurations where either embedding
/// leaves `(0, 1)` are rejected as degenerate.
pub fn alpha_embeddings(
    beta: &ErrorMatrix,
    hp: &Hyperparams,
) -> Result<(ErrorMatrix, ErrorMatrix)> {
    let n = beta.n();
    let rho = hp.rho_opt;
    let trace = beta.trace();
    let shrink = (1.0 - rho).powi(hp.k_star as i32) / (1.0 + trace);
    let tail_m = (1.0 - rho).powi(hp.m_star as i32 + 1);
    let tail_k = (1.0 - rho).powi(hp.k_star as i32 + 1);

    let mut a1 = vec![vec![0.0; n]; n];
    let mut a2 = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                a1[i][j] = beta.get(i, i) * shrink;
                a2[i][j] = beta.get(i, i) + tail_m;
            } else {
                a1[i][j] = beta.get(i, j) * rho * shrink;
                a2[i][j] = beta.get(i, j) + tail_k;
            }
        }
    }
    let degenerate = |which: &str| {
        Error::Degenerate(format!(
            "{which} embedding has entries outside (0, 1); shrink the prior tail \
             (larger k_star / smaller rho) or the beta entries"
        ))
    };
    let a1 = ErrorMatrix::new(a1).map_err(|_| degenerate("alpha1"))?;
    let a2 = ErrorMatrix::new(a2).map_err(|_| degenerate("alpha2"))?;
    Ok((a1, a2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_beta() -> ErrorMatrix {
        ErrorMatrix::scaled_inverse_sum(5, 0.3).unwrap()
    }

    #[test]
    fn schedule_for_table_configuration() {
        // Hand evaluation: β_max = 0.15, β_min = 0.03,
        // rho_beta = 1/(1 + |ln 0.15|) = 0.345174...,
        // m* = ⌊|ln 0.03| / rho_beta⌋ = ⌊10.159...⌋ = 10, k* = 20.
        let hp = hyperparams_from_beta(&table_beta(), 2.0, 1.0).unwrap();
        // Frozen from an independent high-precision evaluation.
        assert!((hp.rho_beta - 0.345_170_377_898_377_03).abs() < 1e-15);
        assert_eq!(hp.m_star, 10);
        assert_eq!(hp.k_star, 20);
    }

    #[test]
    fn optimized_rho_for_table_configuration() {
        // rho_opt = |ln 0.15|·rho_beta / (|ln 0.03|·(1 + |ln rho_beta|)).
        let hp = hyperparams_from_beta(&table_beta(), 2.0, 1.0).unwrap();
        // Frozen from an independent high-precision evaluation.
        assert!((hp.rho_opt - 0.090_489_280_069_016_94).abs() < 1e-15);
        assert!((hp.rho_opt - 0.0905).abs() < 2e-5);
    }

    #[test]
    fn all_entries_inverse_e() {
        let beta = ErrorMatrix::constant(3, (-1.0f64).exp()).unwrap();
        let hp = hyperparams_from_beta(&beta, 2.5, 1.0).unwrap();
        assert_eq!(hp.rho_beta, 0.5);
        assert_eq!(hp.m_star, 2);
        assert_eq!(hp.k_star, 5);
    }

    #[test]
    fn rejects_bad_k_check() {
        assert!(hyperparams_from_beta(&table_beta(), 1.0, 1.0).is_err());
        assert!(hyperparams_from_beta(&table_beta(), 0.5, 1.0).is_err());
    }

    #[test]
    fn embedding_diagonal_matches_hand_evaluation() {
        let beta = table_beta();
        let hp = hyperparams_from_beta(&beta, 2.0, 1.0).unwrap();
        let (a1, a2) = alpha_embeddings(&beta, &hp).unwrap();
        let rho = hp.rho_opt;
        // α1_{1,1} = 0.15·(1−ρ)^20 / 1.3425
        let expect = 0.15 * (1.0 - rho).powi(20) / (1.0 + beta.trace());
        assert!((a1.get(0, 0) - expect).abs() < 1e-15);
        // α2 off-diagonal: β_{i,j} + (1−ρ)^21
        let expect2 = beta.get(0, 1) + (1.0 - rho).powi(21);
        assert!((a2.get(0, 1) - expect2).abs() < 1e-15);
    }

    #[test]
    fn near_zero_rho_is_flagged_degenerate() {
        // As ρ → 0 the α2 diagonal tends to β_{i,i} + 1 > 1.
        let beta = table_beta();
        let mut hp = hyperparams_from_beta(&beta, 2.0, 1.0).unwrap();
        hp.rho_opt = 1e-12;
        assert!(matches!(
            alpha_embeddings(&beta, &hp),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn monotonicity_under_common_shrink() {
        let beta = table_beta();
        let hp = hyperparams_from_beta(&beta, 2.0, 1.0).unwrap();
        for &factor in &[0.5, 0.1, 0.01] {
            let shrunk = beta.scale(factor).unwrap();
            let hp2 = hyperparams_from_beta(&shrunk, 2.0, 1.0).unwrap();
            assert!(hp2.m_star > hp.m_star);
            assert!(hp2.k_star > hp.k_star);
            assert!(hp2.rho_beta <= hp.rho_beta);
        }
    }

    #[test]
    fn embedding_ordering_alpha1_below_alpha2() {
        let beta = table_beta();
        let hp = hyperparams_from_beta(&beta, 2.0, 1.0).unwrap();
        let (a1, a2) = alpha_embeddings(&beta, &hp).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!(a1.get(i, j) < a2.get(i, j));
            }
        }
    }
}
