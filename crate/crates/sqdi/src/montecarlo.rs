//! Trial batteries and operating-characteristics estimators.
//!
//! A [`TrialPlan`] describes `M` independent replications of a multistream
//! detection run: where the change happens (a fixed time, never, or drawn
//! from the geometric prior), which stream is affected and with what
//! parameter, the horizon, and the base seed.  Per-trial seeds derive
//! deterministically from `(base seed, trial index)`, so results do not
//! depend on execution order or parallelism.
//!
//! The estimators compute:
//!
//! * expected detection delay `R̂` (censored trials contribute the horizon
//!   and are counted separately);
//! * the windowed false-alarm estimate
//!   `P̂ = max_ℓ Σ 1{ℓ ≤ T < ℓ+m*, d} / Σ 1{T ≥ ℓ}` over `ℓ ∈ [1, k*−m*]`;
//! * the windowed misidentification estimates
//!   `P̌_j = max_ℓ Σ 1{T > ℓ, d = j} / Σ 1{T > ℓ}` over `ℓ ∈ (ν, ν+k*]`;
//! * their prior-weighted counterparts used to verify the analytic
//!   false-alarm/misidentification bounds;
//! * Monte Carlo Kullback–Leibler numbers: path averages of the
//!   conditional informations `J(θ, X_n)` (post-change path) and
//!   `J*(θ, X_n)` (pre-change path).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorConfig, SimulatedSource, StreamId, WindowMode};
use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::hyper::{hyperparams_from_beta, Hyperparams};
use crate::matrices::{ErrorMatrix, ThresholdMatrix};
use crate::models::{ModelSpec, Regime};
use crate::numeric::mean_and_se;
use crate::prior::GeometricPrior;
use crate::thresholds::{theoretic_add, thresholds_optimal};

/// Where the change point sits in a trial battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangePoint {
    /// Change after sample `ν` (0 = from the first sample).
    At(u64),
    /// No change ever (false-alarm batteries).
    Never,
    /// Drawn per trial from the detector's geometric prior (used by the
    /// prior-weighted error estimates).
    FromPrior,
}

/// A battery of independent replications.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub m: u64,
    pub nu: ChangePoint,
    /// 0-based index of the affected stream.
    pub affected: usize,
    pub theta: Vec<f64>,
    pub horizon: u64,
    pub base_seed: u64,
    pub parallel: bool,
}

/// One replication's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub stopped: bool,
    /// Stopping time, or the horizon when censored.
    pub time: u64,
    pub decision: Option<StreamId>,
    /// Change point used in this trial (`None` = never).
    pub nu: Option<u64>,
}

/// A point estimate with its standard error and effective count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub count: u64,
}

/// SplitMix64 step; decorrelates per-trial seeds from the base seed.
fn mix_seed(base: u64, trial: u64) -> u64 {
    let mut z = base
        .wrapping_add((trial.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `plan.m` independent replications of the detection procedure.
pub fn run_trials(
    plan: &TrialPlan,
    config: &DetectorConfig,
    models: &[ModelSpec],
    thresholds: &ThresholdMatrix,
) -> Result<Vec<TrialRecord>> {
    if plan.m == 0 {
        return Err(Error::invalid("trial count must be >= 1"));
    }
    if plan.horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    if plan.affected >= models.len() {
        return Err(Error::Dimension("affected stream out of range".into()));
    }
    if !matches!(plan.nu, ChangePoint::Never)
        && !models[plan.affected].stationarity_check(&plan.theta)
    {
        return Err(Error::NotAdmissible(
            "post-change parameter outside the affected model's admissible set".into(),
        ));
    }
    let one = |trial: u64| -> Result<TrialRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(plan.base_seed, trial));
        let nu = match plan.nu {
            ChangePoint::At(v) => Some(v),
            ChangePoint::Never => None,
            ChangePoint::FromPrior => Some(config.prior.sample(&mut rng)),
        };
        let mut detector = Detector::with_default_states(config, models)?;
        let mut source =
            SimulatedSource::new(models, nu, plan.affected, plan.theta.clone(), rng);
        let horizon = match nu {
            // Leave the same post-change exposure regardless of ν.
            Some(v) if matches!(plan.nu, ChangePoint::FromPrior) => plan.horizon + v,
            _ => plan.horizon,
        };
        let outcome = detector.run_to_decision(thresholds, &mut source, horizon)?;
        Ok(TrialRecord {
            trial,
            stopped: outcome.stopped,
            time: outcome.time,
            decision: outcome.stream,
            nu,
        })
    };
    if plan.parallel {
        (0..plan.m).into_par_iter().map(one).collect()
    } else {
        (0..plan.m).map(one).collect()
    }
}

/// Expected detection delay
/// `R̂ = Σ (T−ν) 1{T > ν} 1{d = affected} / Σ 1{T > ν}`
/// (for `ν = 0` this is the plain average of `T·1{d = affected}`).
/// Censored trials contribute their horizon time.
pub fn estimate_add(records: &[TrialRecord], nu: u64, affected: StreamId) -> Result<Estimate> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.time > nu)
        .map(|r| {
            if r.stopped && r.decision == Some(affected) {
                (r.time - nu) as f64
            } else if !r.stopped {
                // Censored: counts the full horizon exposure.
                (r.time - nu) as f64
            } else {
                0.0
            }
        })
        .collect();
    if values.is_empty() {
        return Err(Error::numerical(
            "delay estimate undefined: no trial survived past the change point",
        ));
    }
    let (value, se) = mean_and_se(&values);
    Ok(Estimate {
        value,
        se,
        count: values.len() as u64,
    })
}

/// Windowed false-alarm estimate over no-change records:
/// `max_{1 ≤ ℓ ≤ k*−m*} Σ 1{ℓ ≤ T < ℓ+m*, d} / Σ 1{T ≥ ℓ}`.
/// Window points with empty denominators are excluded; if no trial ever
/// stops the estimate is zero.
pub fn estimate_pfa(records: &[TrialRecord], hp: &Hyperparams, d: StreamId) -> Result<Estimate> {
    if hp.k_star <= hp.m_star {
        return Err(Error::invalid("schedule must satisfy m_star < k_star"));
    }
    let mut best: Option<(f64, u64)> = None;
    for l in 1..=(hp.k_star - hp.m_star) {
        let denom = records.iter().filter(|r| r.time >= l).count() as u64;
        if denom == 0 {
            continue;
        }
        let num = records
            .iter()
            .filter(|r| {
                r.stopped && r.decision == Some(d) && r.time >= l && r.time < l + hp.m_star
            })
            .count() as f64;
        let ratio = num / denom as f64;
        if best.map_or(true, |(b, _)| ratio > b) {
            best = Some((ratio, denom));
        }
    }
    let (value, count) = best.unwrap_or((0.0, records.len() as u64));
    let se = binomial_se(value, count);
    Ok(Estimate { value, se, count })
}

/// Windowed misidentification estimate over post-change records:
/// `max_{ν < ℓ ≤ ν+k*} Σ 1{T > ℓ, d = j} / Σ 1{T > ℓ}`.
pub fn estimate_pmi(
    records: &[TrialRecord],
    hp: &Hyperparams,
    nu: u64,
    j: StreamId,
) -> Result<Estimate> {
    let mut best: Option<(f64, u64)> = None;
    for l in (nu + 1)..=(nu + hp.k_star) {
        let denom = records.iter().filter(|r| r.time > l).count() as u64;
        if denom == 0 {
            continue;
        }
        let num = records
            .iter()
            .filter(|r| r.time > l && r.stopped && r.decision == Some(j))
            .count() as f64;
        let ratio = num / denom as f64;
        if best.map_or(true, |(b, _)| ratio > b) {
            best = Some((ratio, denom));
        }
    }
    let (value, count) = best.unwrap_or((0.0, records.len() as u64));
    let se = binomial_se(value, count);
    Ok(Estimate { value, se, count })
}

/// Prior-weighted false-alarm probability over no-change records:
/// the per-trial value is `(1−ρ)^T 1{d = i, stopped}`, whose mean
/// estimates `Σ_k π_k P(T ≤ k, d = i)` under no change.
pub fn estimate_pfa_bayes(
    records: &[TrialRecord],
    prior: &GeometricPrior,
    i: StreamId,
) -> Estimate {
    let values: Vec<f64> = records
        .iter()
        .map(|r| {
            if r.stopped && r.decision == Some(i) {
                prior.tail(r.time)
            } else {
                0.0
            }
        })
        .collect();
    let (value, se) = mean_and_se(&values);
    Estimate {
        value,
        se,
        count: values.len() as u64,
    }
}

/// Prior-weighted misidentification probability over records whose change
/// points were drawn from the prior: the mean of `1{T > ν, d = j}`
/// estimates `Σ_k π_k P_{i,k,θ}(T > k, d = j)`.
pub fn estimate_pmi_bayes(records: &[TrialRecord], j: StreamId) -> Result<Estimate> {
    let values: Vec<f64> = records
        .iter()
        .map(|r| {
            let nu = r.nu.ok_or_else(|| {
                Error::invalid("prior-weighted PMI needs records with sampled change points")
            })?;
            Ok(if r.stopped && r.time > nu && r.decision == Some(j) {
                1.0
            } else {
                0.0
            })
        })
        .collect::<Result<_>>()?;
    let (value, se) = mean_and_se(&values);
    Ok(Estimate {
        value,
        se,
        count: values.len() as u64,
    })
}

fn binomial_se(p: f64, n: u64) -> f64 {
    if n == 0 {
        f64::INFINITY
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

/// Options for the Monte Carlo Kullback–Leibler estimator.
#[derive(Debug, Clone, Copy)]
pub struct KlEstimateOptions {
    /// Samples discarded before averaging begins.  The default (1000)
    /// targets the ergodic limit; zero reproduces the literal
    /// from-the-start path average.
    pub burn_in: u64,
}

impl Default for KlEstimateOptions {
    fn default() -> Self {
        Self { burn_in: 1000 }
    }
}

/// Monte Carlo ergodic Kullback–Leibler number.
///
/// Simulates one path of `model` under the requested regime and averages
/// the conditional information at the visited states: `J(θ, X_n)` on a
/// post-change path (estimating `J̄`), `J*(θ, X_n)` on a pre-change path
/// (estimating `J̄*`).  The standard error uses batch means, which stays
/// honest under serial correlation.
pub fn estimate_kl(
    model: &ModelSpec,
    theta: &[f64],
    k_samples: u64,
    post_regime: bool,
    seed: u64,
    opts: KlEstimateOptions,
) -> Result<Estimate> {
    if k_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if !model.stationarity_check(theta) {
        return Err(Error::NotAdmissible(
            "parameter outside the model's stability region; the path average would diverge"
                .into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = model.initial_state();
    let regime = if post_regime {
        Regime::Post(theta)
    } else {
        Regime::Pre
    };
    let mut values = Vec::with_capacity(k_samples as usize);
    for step in 0..(opts.burn_in + k_samples) {
        let (_, next) = model.simulate_step(regime, &state, &mut rng)?;
        state = next;
        if step >= opts.burn_in {
            let (j, j_star) = model.conditional_information(theta, &state)?;
            values.push(if post_regime { j } else { j_star });
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let se = batch_means_se(&values);
    Ok(Estimate {
        value: mean,
        se,
        count: k_samples,
    })
}

/// Standard error of the mean of a serially correlated sequence via batch
/// means (32 batches when the sample is large enough).
fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let n_batches = 32.min(n / 2).max(2);
    let batch_len = n / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| {
            let chunk = &values[b * batch_len..(b + 1) * batch_len];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    mean_and_se(&means).1
}

/// Configuration of one operating-characteristics run: `N` epidemic
/// streams with `p*_i = 1/(p_star_offset + i)`, initial susceptible counts
/// `V_i = v_scale·(i+1)`, constraints `β_{i,j} = ε/(i+j)`, schedule factor
/// `ǩ`, and a change at `ν = 0` in stream `N` to `p̄ = q·p*_N`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableConfig {
    pub n_streams: usize,
    pub epsilon: f64,
    pub k_check: f64,
    pub q: f64,
    pub p_star_offset: f64,
    pub v_scale: f64,
    pub r: f64,
    /// Samples per Kullback–Leibler path estimate.  Defaults to
    /// `⌈3/p̄⌉`, the 95%-depletion horizon of the expected epidemic.
    pub kl_samples: Option<u64>,
    /// Independent KL paths averaged per number.
    pub kl_replicates: u64,
    pub horizon: Option<u64>,
}

impl TableConfig {
    pub fn new(epsilon: f64, k_check: f64, q: f64, p_star_offset: f64) -> Self {
        Self {
            n_streams: 5,
            epsilon,
            k_check,
            q,
            p_star_offset,
            v_scale: 5_000.0,
            r: 1.0,
            kl_samples: None,
            kl_replicates: 8,
            horizon: None,
        }
    }

    pub fn p_star(&self, i: usize) -> f64 {
        1.0 / (self.p_star_offset + (i + 1) as f64)
    }

    pub fn capacity(&self, i: usize) -> f64 {
        self.v_scale * (i + 2) as f64
    }

    pub fn p_bar(&self) -> f64 {
        self.q * self.p_star(self.n_streams - 1)
    }

    pub fn models(&self) -> Result<Vec<ModelSpec>> {
        (0..self.n_streams)
            .map(|i| ModelSpec::epidemic_gaussian(self.p_star(i), self.capacity(i), 1.0))
            .collect()
    }

    pub fn grids(&self) -> Result<Vec<ParameterGrid>> {
        (0..self.n_streams)
            .map(|i| ParameterGrid::uniform(vec![vec![self.q * self.p_star(i)]]))
            .collect()
    }
}

/// Full operating characteristics of one table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub epsilon: f64,
    pub k_check: f64,
    pub q: f64,
    /// `P̌_{j,N}` for `j = 1..N−1`.
    pub pmi: Vec<Estimate>,
    /// `P̂_N`.
    pub pfa: Estimate,
    /// `R̂`.
    pub delay: Estimate,
    /// Theoretical first-moment delay from MC information numbers.
    pub theory: f64,
    pub censored_post: u64,
    pub censored_null: u64,
    pub m: u64,
    pub seed: u64,
    pub horizon: u64,
}

impl OperatingCharacteristics {
    /// CSV rows in the table layout
    /// `epsilon,k_check,q,pmi_1..,pfa,delay,theory` plus standard errors.
    pub fn csv_header(n_streams: usize) -> String {
        let mut cols = vec!["epsilon".into(), "k_check".into(), "q".into()];
        for j in 1..n_streams {
            cols.push(format!("pmi_{j}"));
            cols.push(format!("pmi_{j}_se"));
        }
        cols.extend(
            ["pfa", "pfa_se", "delay", "delay_se", "theory"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            format!("{}", self.epsilon),
            format!("{}", self.k_check),
            format!("{}", self.q),
        ];
        for e in &self.pmi {
            cols.push(format!("{}", e.value));
            cols.push(format!("{}", e.se));
        }
        cols.push(format!("{}", self.pfa.value));
        cols.push(format!("{}", self.pfa.se));
        cols.push(format!("{}", self.delay.value));
        cols.push(format!("{}", self.delay.se));
        cols.push(format!("{}", self.theory));
        cols.join(",")
    }
}

/// Assemble the schedule, thresholds and trial batteries for one table
/// configuration and estimate its operating characteristics.
pub fn operating_characteristics(
    table: &TableConfig,
    m: u64,
    seed: u64,
) -> Result<OperatingCharacteristics> {
    let n = table.n_streams;
    if n < 2 {
        return Err(Error::invalid("table runs need at least two streams"));
    }
    let beta = ErrorMatrix::scaled_inverse_sum(n, table.epsilon)?;
    let hp = hyperparams_from_beta(&beta, table.k_check, table.r)?;
    let thresholds = thresholds_optimal(&beta, &hp)?;
    let models = table.models()?;
    let grids = table.grids()?;
    let prior = GeometricPrior::new(hp.rho_opt)?;
    let config = DetectorConfig::new(prior, grids).with_window(WindowMode::Full);

    let theory = table_theory(table, &beta, &models, seed)?;
    let horizon = table
        .horizon
        .unwrap_or(((50.0 * theory).ceil() as u64).max(hp.k_star + hp.m_star + 2));

    let p_bar = table.p_bar();
    let affected = n - 1;
    let post_plan = TrialPlan {
        m,
        nu: ChangePoint::At(0),
        affected,
        theta: vec![p_bar],
        horizon,
        base_seed: seed,
        parallel: true,
    };
    let post_records = run_trials(&post_plan, &config, &models, &thresholds)?;
    let delay = estimate_add(&post_records, 0, StreamId(n))?;
    let mut pmi = Vec::with_capacity(n - 1);
    for j in 1..n {
        pmi.push(estimate_pmi(&post_records, &hp, 0, StreamId(j))?);
    }
    let censored_post = post_records.iter().filter(|r| !r.stopped).count() as u64;

    let null_plan = TrialPlan {
        m,
        nu: ChangePoint::Never,
        affected,
        theta: vec![p_bar],
        horizon,
        base_seed: seed.wrapping_add(0x5EED_0FF5),
        parallel: true,
    };
    let null_records = run_trials(&null_plan, &config, &models, &thresholds)?;
    let pfa = estimate_pfa(&null_records, &hp, StreamId(n))?;
    let censored_null = null_records.iter().filter(|r| !r.stopped).count() as u64;

    Ok(OperatingCharacteristics {
        epsilon: table.epsilon,
        k_check: table.k_check,
        q: table.q,
        pmi,
        pfa,
        delay,
        theory,
        censored_post,
        censored_null,
        m,
        seed,
        horizon,
    })
}

/// The theory column: `max_j |log β_{j,N}| / ι_{N,j}(p̄)` with the
/// information numbers estimated from `kl_replicates` transient paths
/// started at the declared initial level (no burn-in; the epidemic decays,
/// so the averaging horizon is part of the estimate's meaning).
pub fn table_theory(
    table: &TableConfig,
    beta: &ErrorMatrix,
    models: &[ModelSpec],
    seed: u64,
) -> Result<f64> {
    let n = table.n_streams;
    let p_bar = table.p_bar();
    let k = table.kl_samples.unwrap_or((3.0 / p_bar).ceil() as u64);
    let opts = KlEstimateOptions { burn_in: 0 };
    let reps = table.kl_replicates.max(1);
    let average = |model: &ModelSpec, theta: f64, post: bool, tag: u64| -> Result<f64> {
        let mut acc = 0.0;
        for rep in 0..reps {
            let est = estimate_kl(
                model,
                &[theta],
                k,
                post,
                mix_seed(seed ^ 0x6B6C_7061_7468, tag * 1000 + rep),
                opts,
            )?;
            acc += est.value;
        }
        Ok(acc / reps as f64)
    };
    let i_bar_post = average(&models[n - 1], p_bar, true, 1)?;
    let mut iota_row = Vec::with_capacity(n);
    for j in 0..n {
        if j == n - 1 {
            iota_row.push(i_bar_post);
        } else {
            let theta_j = table.q * table.p_star(j);
            let i_star = average(&models[j], theta_j, false, 10 + j as u64)?;
            iota_row.push(i_bar_post - i_star);
        }
    }
    if iota_row.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::numerical(
            "nonpositive Monte Carlo information number in the theory column",
        ));
    }
    Ok(theoretic_add(beta, n - 1, &iota_row))
}

/// One cell of a robust-risk study: an empirical delay and the matching
/// lower bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RiskCell {
    pub r_hat: f64,
    pub lower_r: f64,
}

/// Robust risk: the worst ratio `R̂ / b^r` across the supplied cells.
/// Cells with nonpositive bounds are skipped; `None` when nothing remains.
pub fn robust_risk_estimate(cells: &[RiskCell]) -> Option<f64> {
    cells
        .iter()
        .filter(|c| c.lower_r > 0.0)
        .map(|c| c.r_hat / c.lower_r)
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(time: u64, d: Option<usize>, stopped: bool) -> TrialRecord {
        TrialRecord {
            trial: 0,
            stopped,
            time,
            decision: d.map(StreamId),
            nu: Some(0),
        }
    }

    #[test]
    fn delay_estimate_arithmetic() {
        let records = vec![rec(3, Some(2), true), rec(5, Some(2), true)];
        let e = estimate_add(&records, 0, StreamId(2)).unwrap();
        assert_eq!(e.value, 4.0);

        // A misidentified trial contributes zero to the sum but stays in
        // the denominator.
        let records = vec![rec(3, Some(1), true), rec(4, Some(2), true)];
        let e = estimate_add(&records, 0, StreamId(2)).unwrap();
        assert_eq!(e.value, 2.0);
    }

    #[test]
    fn delay_estimate_requires_survivors() {
        let records = vec![rec(2, Some(1), true)];
        assert!(estimate_add(&records, 5, StreamId(1)).is_err());
    }

    #[test]
    fn pfa_estimate_extremes() {
        let hp = Hyperparams {
            rho_beta: 0.3,
            m_star: 2,
            k_star: 6,
            k_check: 3.0,
            rho_opt: 0.1,
            r: 1.0,
        };
        // No trial ever stops → 0.
        let quiet = vec![rec(50, None, false); 10];
        assert_eq!(estimate_pfa(&quiet, &hp, StreamId(1)).unwrap().value, 0.0);

        // Every trial stops at T = 1 with the watched decision → ratio 1.
        let noisy = vec![rec(1, Some(1), true); 10];
        assert_eq!(estimate_pfa(&noisy, &hp, StreamId(1)).unwrap().value, 1.0);
    }

    #[test]
    fn pmi_estimate_all_correct_is_zero() {
        let hp = Hyperparams {
            rho_beta: 0.3,
            m_star: 2,
            k_star: 6,
            k_check: 3.0,
            rho_opt: 0.1,
            r: 1.0,
        };
        let records = vec![rec(9, Some(2), true); 20];
        let e = estimate_pmi(&records, &hp, 0, StreamId(1)).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn robust_risk_basics() {
        let one = RiskCell {
            r_hat: 6.0,
            lower_r: 4.0,
        };
        assert_eq!(robust_risk_estimate(&[one]), Some(1.5));
        let cells = [one, one, one];
        assert_eq!(robust_risk_estimate(&cells), Some(1.5));
        assert_eq!(robust_risk_estimate(&[]), None);
    }

    fn two_stream_setup() -> (DetectorConfig, Vec<ModelSpec>, ThresholdMatrix) {
        let models = vec![
            ModelSpec::iid_gaussian(0.0, 1.0).unwrap(),
            ModelSpec::iid_gaussian(0.0, 1.0).unwrap(),
        ];
        let grids = vec![
            ParameterGrid::uniform(vec![vec![1.0]]).unwrap(),
            ParameterGrid::uniform(vec![vec![1.0]]).unwrap(),
        ];
        let config = DetectorConfig::new(GeometricPrior::new(0.1).unwrap(), grids);
        let a = ThresholdMatrix::constant(2, 40.0).unwrap();
        (config, models, a)
    }

    #[test]
    fn censoring_under_huge_thresholds() {
        let (config, models, _) = two_stream_setup();
        let a = ThresholdMatrix::constant(2, 1e15).unwrap();
        let plan = TrialPlan {
            m: 8,
            nu: ChangePoint::Never,
            affected: 0,
            theta: vec![1.0],
            horizon: 25,
            base_seed: 5,
            parallel: false,
        };
        let records = run_trials(&plan, &config, &models, &a).unwrap();
        assert!(records.iter().all(|r| !r.stopped && r.time == 25));
    }

    #[test]
    fn strong_signal_mostly_identified() {
        let (config, models, a) = two_stream_setup();
        let plan = TrialPlan {
            m: 60,
            nu: ChangePoint::At(0),
            affected: 1,
            theta: vec![1.0],
            horizon: 300,
            base_seed: 7,
            parallel: false,
        };
        let records = run_trials(&plan, &config, &models, &a).unwrap();
        let hits = records
            .iter()
            .filter(|r| r.decision == Some(StreamId(2)))
            .count();
        assert!(hits * 2 > records.len(), "{hits}/{}", records.len());
    }

    #[test]
    fn parallel_and_serial_runs_are_identical() {
        let (config, models, a) = two_stream_setup();
        let mut plan = TrialPlan {
            m: 24,
            nu: ChangePoint::At(2),
            affected: 0,
            theta: vec![1.0],
            horizon: 200,
            base_seed: 99,
            parallel: false,
        };
        let serial = run_trials(&plan, &config, &models, &a).unwrap();
        plan.parallel = true;
        let parallel = run_trials(&plan, &config, &models, &a).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn inadmissible_theta_rejected() {
        let models = vec![ModelSpec::ar(vec![0.0]).unwrap()];
        let grids = vec![ParameterGrid::uniform(vec![vec![0.5]]).unwrap()];
        let config = DetectorConfig::new(GeometricPrior::new(0.1).unwrap(), grids);
        let a = ThresholdMatrix::constant(1, 10.0).unwrap();
        let plan = TrialPlan {
            m: 1,
            nu: ChangePoint::At(0),
            affected: 0,
            theta: vec![1.5],
            horizon: 10,
            base_seed: 0,
            parallel: false,
        };
        assert!(run_trials(&plan, &config, &models, &a).is_err());
    }

    #[test]
    fn kl_estimate_at_theta_star_is_zero() {
        let model = ModelSpec::epidemic_gaussian(0.01, 1.0, 1.0).unwrap();
        let e = estimate_kl(
            &model,
            &[0.01],
            5_000,
            true,
            3,
            KlEstimateOptions::default(),
        )
        .unwrap();
        assert!(e.value.abs() <= 3.0 * e.se.max(1e-12), "{e:?}");
    }

    #[test]
    fn kl_estimate_matches_ar1_closed_form() {
        let model = ModelSpec::ar(vec![0.0]).unwrap();
        let post = estimate_kl(
            &model,
            &[0.5],
            20_000,
            true,
            11,
            KlEstimateOptions::default(),
        )
        .unwrap();
        assert!(
            (post.value - 0.25 / 1.5).abs() < 3.0 * post.se,
            "post: {post:?}"
        );
        let pre = estimate_kl(
            &model,
            &[0.5],
            20_000,
            false,
            12,
            KlEstimateOptions::default(),
        )
        .unwrap();
        assert!((pre.value + 0.125).abs() < 3.0 * pre.se, "pre: {pre:?}");
    }

    #[test]
    fn kl_estimate_reproducible_across_seeds() {
        let model = ModelSpec::epidemic_gaussian(1.0 / 101.0, 1.0, 1.0).unwrap();
        let theta = [1.1 / 101.0];
        let a = estimate_kl(&model, &theta, 30_000, true, 21, KlEstimateOptions::default())
            .unwrap();
        let b = estimate_kl(&model, &theta, 30_000, true, 22, KlEstimateOptions::default())
            .unwrap();
        let tol = 3.0 * (a.se * a.se + b.se * b.se).sqrt();
        assert!((a.value - b.value).abs() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn kl_estimate_rejects_unstable_parameter() {
        let model = ModelSpec::ar(vec![0.0]).unwrap();
        assert!(estimate_kl(
            &model,
            &[1.01],
            100,
            true,
            0,
            KlEstimateOptions::default()
        )
        .is_err());
    }

    #[test]
    fn single_trial_row_has_unusable_se() {
        let records = vec![rec(4, Some(1), true)];
        let e = estimate_add(&records, 0, StreamId(1)).unwrap();
        assert_eq!(e.count, 1);
        assert!(e.se.is_infinite());
    }
}
