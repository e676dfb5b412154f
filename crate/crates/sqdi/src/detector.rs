//! Online decision statistics and the stopping/identification rule.
//!
//! For each stream `i` and time `n`, two mixture statistics are maintained
//! over the candidate change points `k = 0..n−1` and the stream's parameter
//! grid:
//!
//! ```text
//! L_i(n)  = Σ_k π_k Σ_θ w(θ) exp(Z_i^k(n, θ))        (weighted mixture)
//! L̂_i(n)  = Σ_k π_k max_θ   exp(Z_i^k(n, θ))         (sup mixture)
//! ```
//!
//! where `Z_i^k(n, θ)` is the cumulative log likelihood ratio of stream `i`
//! over samples `k+1..n` at parameter `θ`.  The decision matrix has entries
//! `U_{i,j} = L_i / L̂_j` off the diagonal and `U_{i,i} = L_i / Σ_{l≥n} π_l`,
//! and the procedure stops at the first `n` at which some row dominates its
//! threshold row: `min_j U_{i,j} / A_{i,j} ≥ 1`.
//!
//! Everything is carried in the log domain.  The weighted mixture admits a
//! per-parameter one-step recursion; the sup mixture does not (the per-`k`
//! max cannot be collapsed), so each step walks the retained change-point
//! hypotheses: `O(n·|grid|)` per step in full-history mode, `O(ℓ·|grid|)`
//! with a window of length `ℓ`.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::matrices::ThresholdMatrix;
use crate::models::{ModelSpec, Regime, StreamState};
use crate::numeric::{log_add_exp, log_sum_exp, KahanSum, LogSumAcc};
use crate::prior::GeometricPrior;

/// 1-based stream identity, as reported in decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId(pub usize);

impl StreamId {
    /// 0-based index into internal arrays.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(idx: usize) -> Self {
        StreamId(idx + 1)
    }
}

/// History retention for the change-point hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    /// Keep every hypothesis `k = 0..n−1`.
    Full,
    /// Keep only the trailing `ℓ` hypotheses `k = n−ℓ..n−1`.  Dropped
    /// hypotheses can only lower both mixtures, so this lower-bounds the
    /// full statistics.
    Limited(usize),
}

/// Static detector configuration.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub prior: GeometricPrior,
    pub grids: Vec<ParameterGrid>,
    pub window: WindowMode,
}

impl DetectorConfig {
    pub fn new(prior: GeometricPrior, grids: Vec<ParameterGrid>) -> Self {
        Self {
            prior,
            grids,
            window: WindowMode::Full,
        }
    }

    pub fn with_window(mut self, window: WindowMode) -> Self {
        self.window = window;
        self
    }
}

/// Outcome of a detection run, serializable as the decision record
/// `{stopped, T, d, snapshot}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub stopped: bool,
    /// Stopping time `T` when stopped; samples consumed otherwise.
    #[serde(rename = "T")]
    pub time: u64,
    /// Identified stream `d` (1-based) when stopped.
    #[serde(rename = "d")]
    pub stream: Option<StreamId>,
    /// `log U` matrix at the final step.
    #[serde(rename = "snapshot")]
    pub statistic_snapshot: Vec<Vec<f64>>,
}

struct StreamStats {
    model: ModelSpec,
    grid: ParameterGrid,
    state: StreamState,
    /// Cumulative LLR `C_n(θ)` per grid point.
    cum: Vec<f64>,
    /// `C_k(θ)` for each retained hypothesis `k`; the front entry
    /// corresponds to `k = hist_start`.
    history: VecDeque<Vec<f64>>,
    hist_start: u64,
    /// Per-θ log of `Σ_k π_k exp(Z^k(θ))`, maintained recursively
    /// (full-history mode only).
    log_mix: Vec<f64>,
    log_l: f64,
    log_l_hat: f64,
}

/// Online detector state over `N` streams.  Single writer; distinct
/// detectors may run concurrently.
pub struct Detector {
    prior: GeometricPrior,
    window: WindowMode,
    n: u64,
    streams: Vec<StreamStats>,
    clamp_events: u64,
}

impl Detector {
    /// Build the initial state (`n = 0`, all statistics empty).
    pub fn new(
        config: &DetectorConfig,
        models: &[ModelSpec],
        initial_states: Vec<StreamState>,
    ) -> Result<Self> {
        let n_streams = models.len();
        if n_streams == 0 {
            return Err(Error::invalid("need at least one stream"));
        }
        if config.grids.len() != n_streams || initial_states.len() != n_streams {
            return Err(Error::Dimension(format!(
                "{} models, {} grids, {} initial states",
                n_streams,
                config.grids.len(),
                initial_states.len()
            )));
        }
        if let WindowMode::Limited(0) = config.window {
            return Err(Error::invalid(
                "window length must be >= 1 (at least one retained hypothesis)",
            ));
        }
        let mut streams = Vec::with_capacity(n_streams);
        for (i, model) in models.iter().enumerate() {
            let grid = &config.grids[i];
            if grid.dim() != model.param_dim() {
                return Err(Error::Dimension(format!(
                    "stream {}: grid dimension {} but model parameter dimension {}",
                    i + 1,
                    grid.dim(),
                    model.param_dim()
                )));
            }
            if initial_states[i].values().len() != model.state_dim() {
                return Err(Error::Dimension(format!(
                    "stream {}: initial state dimension {} but model state dimension {}",
                    i + 1,
                    initial_states[i].values().len(),
                    model.state_dim()
                )));
            }
            for point in grid.points() {
                if !model.stationarity_check(point) {
                    return Err(Error::NotAdmissible(format!(
                        "stream {}: grid point {point:?} outside the model's stability region",
                        i + 1
                    )));
                }
            }
            streams.push(StreamStats {
                model: model.clone(),
                grid: grid.clone(),
                state: initial_states[i].clone(),
                cum: vec![0.0; grid.len()],
                history: VecDeque::new(),
                hist_start: 0,
                log_mix: vec![f64::NEG_INFINITY; grid.len()],
                log_l: f64::NEG_INFINITY,
                log_l_hat: f64::NEG_INFINITY,
            });
        }
        Ok(Self {
            prior: config.prior,
            window: config.window,
            n: 0,
            streams,
            clamp_events: 0,
        })
    }

    /// Constructor using each model's default initial state.
    pub fn with_default_states(config: &DetectorConfig, models: &[ModelSpec]) -> Result<Self> {
        let states = models.iter().map(|m| m.initial_state()).collect();
        Self::new(config, models, states)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }

    /// Number of epidemic LLR evaluations at near-zero states so far.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    pub fn log_l(&self, i: usize) -> f64 {
        self.streams[i].log_l
    }

    pub fn log_l_hat(&self, i: usize) -> f64 {
        self.streams[i].log_l_hat
    }

    /// `log U_{i,j}` (0-based indices).
    pub fn log_u(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.streams[i].log_l - self.prior.log_tail(self.n)
        } else {
            self.streams[i].log_l - self.streams[j].log_l_hat
        }
    }

    /// Full `log U` matrix.
    pub fn log_u_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.streams.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.log_u(i, j)).collect())
            .collect()
    }

    /// Advance one step with one observation vector per stream.
    pub fn update(&mut self, observations: &[Vec<f64>]) -> Result<()> {
        if observations.len() != self.streams.len() {
            return Err(Error::Dimension(format!(
                "{} observations for {} streams",
                observations.len(),
                self.streams.len()
            )));
        }
        for obs in observations {
            if obs.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("non-finite observation"));
            }
        }
        let n_old = self.n;
        let prior = self.prior;
        let window = self.window;
        for (idx, stream) in self.streams.iter_mut().enumerate() {
            if stream.model.state_is_clamped(&stream.state) {
                self.clamp_events += 1;
            }
            let y = &observations[idx];
            // Retain C_{n_old} as the newest hypothesis, then fold the new
            // increment into the cumulative LLRs.
            stream.history.push_back(stream.cum.clone());
            if let WindowMode::Limited(len) = window {
                while stream.history.len() > len {
                    stream.history.pop_front();
                    stream.hist_start += 1;
                }
            }
            let log_pi_new = prior.log_mass(n_old);
            for (t, theta) in stream.grid.points().iter().enumerate() {
                let g = stream
                    .model
                    .llr_increment(theta, y, &stream.state)
                    .map_err(|e| match e {
                        Error::Domain { reason, .. } => Error::Domain {
                            stream: idx + 1,
                            reason,
                        },
                        other => other,
                    })?;
                stream.cum[t] += g;
                stream.log_mix[t] = g + log_add_exp(stream.log_mix[t], log_pi_new);
            }
            stream.state = advance_state(&stream.model, &stream.state, y);

            // Sup mixture: walk the retained hypotheses.
            let mut l_hat = LogSumAcc::new();
            for (off, snapshot) in stream.history.iter().enumerate() {
                let k = stream.hist_start + off as u64;
                let mut best = f64::NEG_INFINITY;
                for (t, c_k) in snapshot.iter().enumerate() {
                    best = best.max(stream.cum[t] - c_k);
                }
                l_hat.add(prior.log_mass(k) + best);
            }
            stream.log_l_hat = l_hat.value();

            stream.log_l = match window {
                WindowMode::Full => {
                    // Weighted mixture via the per-θ recursion.
                    let mut l = LogSumAcc::new();
                    for (t, &lw) in stream.grid.log_weights().iter().enumerate() {
                        l.add(lw + stream.log_mix[t]);
                    }
                    l.value()
                }
                WindowMode::Limited(_) => {
                    let mut l = LogSumAcc::new();
                    for (off, snapshot) in stream.history.iter().enumerate() {
                        let k = stream.hist_start + off as u64;
                        let log_pi = prior.log_mass(k);
                        for (t, c_k) in snapshot.iter().enumerate() {
                            l.add(log_pi + stream.grid.log_weights()[t] + stream.cum[t] - c_k);
                        }
                    }
                    l.value()
                }
            };
        }
        self.n = n_old + 1;
        Ok(())
    }

    /// Apply the stopping rule at the current time.  Returns the decision
    /// when some stream's row dominates its threshold row; simultaneous
    /// crossings resolve to the smallest stream index.
    pub fn decision_step(&self, thresholds: &ThresholdMatrix) -> Option<DecisionOutcome> {
        if self.n == 0 || thresholds.n() != self.streams.len() {
            return None;
        }
        let n_streams = self.streams.len();
        for i in 0..n_streams {
            let mut margin = f64::INFINITY;
            for j in 0..n_streams {
                margin = margin.min(self.log_u(i, j) - thresholds.log(i, j));
            }
            if margin >= 0.0 {
                return Some(DecisionOutcome {
                    stopped: true,
                    time: self.n,
                    stream: Some(StreamId::from_index(i)),
                    statistic_snapshot: self.log_u_matrix(),
                });
            }
        }
        None
    }

    /// Iterate `update` + `decision_step` against an observation source.
    ///
    /// Returns the first decision, or a `stopped: false` outcome at the
    /// horizon (or when the source runs dry, with the samples consumed).
    pub fn run_to_decision<S: ObservationSource>(
        &mut self,
        thresholds: &ThresholdMatrix,
        source: &mut S,
        horizon: u64,
    ) -> Result<DecisionOutcome> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        while self.n < horizon {
            let Some(observations) = source.next_observations()? else {
                return Ok(DecisionOutcome {
                    stopped: false,
                    time: self.n,
                    stream: None,
                    statistic_snapshot: self.log_u_matrix(),
                });
            };
            self.update(&observations)?;
            if let Some(outcome) = self.decision_step(thresholds) {
                return Ok(outcome);
            }
        }
        Ok(DecisionOutcome {
            stopped: false,
            time: self.n,
            stream: None,
            statistic_snapshot: self.log_u_matrix(),
        })
    }
}

/// New Markov state after observing `y`.
fn advance_state(model: &ModelSpec, state: &StreamState, y: &[f64]) -> StreamState {
    match model {
        ModelSpec::IidGaussian(_) => StreamState::empty(),
        ModelSpec::RandomCoeffLinear(_) => StreamState(y.to_vec()),
        ModelSpec::ArP(_) => {
            let mut next = state.values().to_vec();
            next.rotate_right(1);
            next[0] = y[0];
            StreamState(next)
        }
        ModelSpec::EpidemicBinomial(_) | ModelSpec::EpidemicGaussian(_) => {
            StreamState::scalar(y[0])
        }
    }
}

// ---------------------------------------------------------------------------
// Observation sources
// ---------------------------------------------------------------------------

/// Anything that can feed the detector one observation per stream per step.
pub trait ObservationSource {
    /// `Ok(None)` signals exhaustion.
    fn next_observations(&mut self) -> Result<Option<Vec<Vec<f64>>>>;
}

/// Replays a recorded observation matrix (`data[stream][time]`).
pub struct RecordedSource {
    data: Vec<Vec<Vec<f64>>>,
    cursor: usize,
}

impl RecordedSource {
    pub fn new(data: Vec<Vec<Vec<f64>>>) -> Self {
        Self { data, cursor: 0 }
    }
}

impl ObservationSource for RecordedSource {
    fn next_observations(&mut self) -> Result<Option<Vec<Vec<f64>>>> {
        let len = self.data.iter().map(|s| s.len()).min().unwrap_or(0);
        if self.cursor >= len {
            return Ok(None);
        }
        let obs = self.data.iter().map(|s| s[self.cursor].clone()).collect();
        self.cursor += 1;
        Ok(Some(obs))
    }
}

/// Simulates the multistream model with a change to parameter `theta` in
/// one affected stream after time `nu` (`None` = no change ever; the
/// other streams stay pre-change throughout).
pub struct SimulatedSource<'a, R: Rng> {
    models: &'a [ModelSpec],
    states: Vec<StreamState>,
    nu: Option<u64>,
    affected: usize,
    theta: Vec<f64>,
    step: u64,
    rng: R,
}

impl<'a, R: Rng> SimulatedSource<'a, R> {
    pub fn new(
        models: &'a [ModelSpec],
        nu: Option<u64>,
        affected: usize,
        theta: Vec<f64>,
        rng: R,
    ) -> Self {
        let states = models.iter().map(|m| m.initial_state()).collect();
        Self {
            models,
            states,
            nu,
            affected,
            theta,
            step: 0,
            rng,
        }
    }
}

impl<'a, R: Rng> ObservationSource for SimulatedSource<'a, R> {
    fn next_observations(&mut self) -> Result<Option<Vec<Vec<f64>>>> {
        self.step += 1;
        let mut out = Vec::with_capacity(self.models.len());
        for (i, model) in self.models.iter().enumerate() {
            let post = match self.nu {
                Some(nu) => i == self.affected && self.step > nu,
                None => false,
            };
            let regime = if post {
                Regime::Post(&self.theta)
            } else {
                Regime::Pre
            };
            let (obs, next) = model.simulate_step(regime, &self.states[i], &mut self.rng)?;
            self.states[i] = next;
            out.push(obs);
        }
        Ok(Some(out))
    }
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// Statistics recomputed from scratch by the defining sums.
#[derive(Debug, Clone)]
pub struct BruteForceStats {
    pub log_l: Vec<f64>,
    pub log_l_hat: Vec<f64>,
    pub log_u: Vec<Vec<f64>>,
}

/// Evaluate the defining sums directly: for every retained hypothesis `k`
/// and grid point `θ`, `Z^k(n, θ)` is re-summed over samples `k+1..n` with
/// compensated addition — no recursion, no reuse across hypotheses.  This
/// is the test oracle for [`Detector::update`].
pub fn brute_force_statistics(
    observations: &[Vec<Vec<f64>>],
    config: &DetectorConfig,
    models: &[ModelSpec],
    initial_states: &[StreamState],
    upto: usize,
) -> Result<BruteForceStats> {
    let n_streams = models.len();
    if observations.len() != n_streams
        || config.grids.len() != n_streams
        || initial_states.len() != n_streams
    {
        return Err(Error::Dimension("stream count mismatch".into()));
    }
    let n = upto;
    if n == 0 || observations.iter().any(|s| s.len() < n) {
        return Err(Error::Dimension("not enough observations".into()));
    }
    let retained_from = match config.window {
        WindowMode::Full => 0usize,
        WindowMode::Limited(len) => n.saturating_sub(len),
    };
    let mut log_l = Vec::with_capacity(n_streams);
    let mut log_l_hat = Vec::with_capacity(n_streams);
    for i in 0..n_streams {
        let model = &models[i];
        let grid = &config.grids[i];
        // Increment table g[j][θ] for j = 1..n, with the state evolved once.
        let mut states = Vec::with_capacity(n + 1);
        states.push(initial_states[i].clone());
        for j in 0..n {
            states.push(advance_state(model, &states[j], &observations[i][j]));
        }
        let mut increments = vec![vec![0.0f64; grid.len()]; n];
        for (j, row) in increments.iter_mut().enumerate() {
            for (t, theta) in grid.points().iter().enumerate() {
                row[t] = model.llr_increment(theta, &observations[i][j], &states[j])?;
            }
        }
        let mut l_terms = Vec::new();
        let mut l_hat_terms = Vec::new();
        for k in retained_from..n {
            let log_pi = config.prior.log_mass(k as u64);
            let mut best = f64::NEG_INFINITY;
            for t in 0..grid.len() {
                let mut z = KahanSum::default();
                for row in increments.iter().take(n).skip(k) {
                    z.add(row[t]);
                }
                l_terms.push(log_pi + grid.log_weights()[t] + z.value());
                best = best.max(z.value());
            }
            l_hat_terms.push(log_pi + best);
        }
        log_l.push(log_sum_exp(&l_terms));
        log_l_hat.push(log_sum_exp(&l_hat_terms));
    }
    let log_tail = config.prior.log_tail(n as u64);
    let log_u = (0..n_streams)
        .map(|i| {
            (0..n_streams)
                .map(|j| {
                    if i == j {
                        log_l[i] - log_tail
                    } else {
                        log_l[i] - log_l_hat[j]
                    }
                })
                .collect()
        })
        .collect();
    Ok(BruteForceStats {
        log_l,
        log_l_hat,
        log_u,
    })
}
