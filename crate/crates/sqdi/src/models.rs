//! Pluggable per-stream stochastic models.
//!
//! Every model exposes the same small surface: a one-step log likelihood
//! ratio `g(θ, y, x)` between the post-change transition density at `θ`
//! and the pre-change density, a one-step simulator for either regime,
//! a stationarity check for candidate parameters, and Kullback–Leibler
//! numbers (closed form where available, conditional form otherwise).
//!
//! Five kinds are provided:
//!
//! * `iid_gaussian` — i.i.d. `N(μ*, σ²)` shifting to `N(θ, σ²)`;
//! * `random_coeff_linear` — `X_n = (θ + B_n) X_{n−1} + w_n` in `R^p`
//!   with a Gaussian random coefficient matrix `B_n`;
//! * `ar_p` — scalar AR(p) with unit-variance Gaussian noise and a
//!   change in the coefficient vector;
//! * `epidemic_binomial` — binomial susceptible-depletion counts;
//! * `epidemic_gaussian` — the diffusion approximation
//!   `X_n = (1−ϑ) X_{n−1} + σ_ϑ √|X_{n−1}| ξ_n`, optionally scaled by an
//!   initial population size `V` (then `σ_ϑ² = ϑ(1−ϑ)/V`).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// States with magnitude below this are clamped away from zero in the
/// epidemic Gaussian LLR (the transition density is undefined at 0).
pub const STATE_CLAMP: f64 = 1e-12;

/// Which regime a simulation step follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime<'a> {
    Pre,
    Post(&'a [f64]),
}

/// Per-stream Markov state.
///
/// Empty for i.i.d. models, the last observation for Markov-order-1
/// models, and the stacked vector `(X_n, …, X_{n−p+1})` for AR(p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState(pub Vec<f64>);

impl StreamState {
    pub fn empty() -> Self {
        StreamState(Vec::new())
    }

    pub fn scalar(x: f64) -> Self {
        StreamState(vec![x])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn as_scalar(&self) -> f64 {
        self.0[0]
    }
}

/// Closed-form Kullback–Leibler numbers for a (model, θ) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlForm {
    /// Both ergodic numbers in closed form.
    Exact { j_bar: f64, j_star_bar: f64 },
    /// Epidemic Gaussian semi-closed form: the ergodic numbers are affine
    /// in the mean absolute stationary state,
    /// `J̄ = j_base + j_slope · E|ς_θ|` and
    /// `J̄* = j_star_base − j_star_slope · E|ς*|`.
    EpidemicAffine {
        j_base: f64,
        j_slope: f64,
        j_star_base: f64,
        j_star_slope: f64,
    },
    /// No closed form; use Monte Carlo estimation.
    Unavailable,
}

// ---------------------------------------------------------------------------
// Model kinds
// ---------------------------------------------------------------------------

/// i.i.d. Gaussian mean shift: pre `N(mean, std²)`, post `N(θ, std²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IidGaussian {
    pub mean: f64,
    pub std: f64,
}

/// `X_n = (θ + B_n) X_{n−1} + w_n` in `R^p`: a linear difference equation
/// with Gaussian random coefficients.
///
/// `q_coeff` is the `p²×p²` covariance of `vec(B)` (column-major vec);
/// `q_noise` is the `p×p` noise covariance, required positive definite.
/// The conditional covariance of `X_n` given `X_{n−1} = x` is
/// `G(x) = E[(Bx)(Bx)'] + q_noise`, which stays positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCoeffLinear {
    dim: usize,
    theta_star: DMatrix<f64>,
    q_coeff: DMatrix<f64>,
    q_coeff_sqrt: DMatrix<f64>,
    q_noise: DMatrix<f64>,
    q_noise_chol: DMatrix<f64>,
}

/// Scalar AR(p) with unit-variance Gaussian innovations and coefficient
/// vector `θ* → θ` at the change.
#[derive(Debug, Clone, PartialEq)]
pub struct ArP {
    pub theta_star: Vec<f64>,
}

/// Binomial susceptible-depletion counts: `X_n | X_{n−1} = x` is
/// `Binomial(x, 1 − ϑ)` (each susceptible stays susceptible with
/// probability `1 − ϑ`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicBinomial {
    pub p_star: f64,
    pub initial: u64,
}

/// Gaussian diffusion approximation of the binomial epidemic model.
///
/// With `scale = V` (initial susceptible count), the normalized process
/// `X = Y/V` follows `X_n = (1−ϑ) X_{n−1} + σ_ϑ √|X_{n−1}| ξ_n` with
/// `σ_ϑ² = ϑ(1−ϑ)/V`.  `scale = 1` recovers the unnormalized model.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicGaussian {
    pub p_star: f64,
    pub scale: f64,
    pub initial: f64,
}

/// A per-stream stochastic model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    IidGaussian(IidGaussian),
    RandomCoeffLinear(RandomCoeffLinear),
    ArP(ArP),
    EpidemicBinomial(EpidemicBinomial),
    EpidemicGaussian(EpidemicGaussian),
}

impl ModelSpec {
    pub fn iid_gaussian(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::invalid("iid_gaussian needs finite mean and std > 0"));
        }
        Ok(ModelSpec::IidGaussian(IidGaussian { mean, std }))
    }

    pub fn ar(theta_star: Vec<f64>) -> Result<Self> {
        if theta_star.is_empty() {
            return Err(Error::invalid("ar_p needs order p >= 1"));
        }
        let model = ArP { theta_star };
        if !companion_stable(&model.theta_star) {
            return Err(Error::NotAdmissible(
                "pre-change AR coefficients are outside the stability region".into(),
            ));
        }
        Ok(ModelSpec::ArP(model))
    }

    pub fn random_coeff_linear(
        theta_star: Vec<Vec<f64>>,
        q_coeff: Vec<Vec<f64>>,
        q_noise: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let p = theta_star.len();
        if p == 0 || theta_star.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("theta_star must be square p×p".into()));
        }
        if q_coeff.len() != p * p || q_coeff.iter().any(|r| r.len() != p * p) {
            return Err(Error::Dimension("q_coeff must be p²×p²".into()));
        }
        if q_noise.len() != p || q_noise.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("q_noise must be p×p".into()));
        }
        let theta_star = DMatrix::from_fn(p, p, |i, j| theta_star[i][j]);
        let q_coeff = DMatrix::from_fn(p * p, p * p, |i, j| q_coeff[i][j]);
        let q_noise = DMatrix::from_fn(p, p, |i, j| q_noise[i][j]);
        if (&q_coeff - q_coeff.transpose()).abs().max() > 1e-10 {
            return Err(Error::invalid("q_coeff must be symmetric"));
        }
        let q_coeff_sqrt = psd_sqrt(&q_coeff)?;
        let q_noise_chol = Cholesky::new(q_noise.clone())
            .ok_or_else(|| Error::invalid("q_noise must be positive definite"))?
            .l()
            .into();
        let model = RandomCoeffLinear {
            dim: p,
            theta_star,
            q_coeff,
            q_coeff_sqrt,
            q_noise,
            q_noise_chol,
        };
        if !model.stable(&row_major(&model.theta_star)) {
            return Err(Error::NotAdmissible(
                "pre-change coefficient matrix is outside the stability region".into(),
            ));
        }
        Ok(ModelSpec::RandomCoeffLinear(model))
    }

    pub fn epidemic_binomial(p_star: f64, initial: u64) -> Result<Self> {
        if !(p_star > 0.0 && p_star < 1.0) {
            return Err(Error::invalid("epidemic p_star must lie in (0, 1)"));
        }
        Ok(ModelSpec::EpidemicBinomial(EpidemicBinomial {
            p_star,
            initial,
        }))
    }

    pub fn epidemic_gaussian(p_star: f64, scale: f64, initial: f64) -> Result<Self> {
        if !(p_star > 0.0 && p_star < 1.0) {
            return Err(Error::invalid("epidemic p_star must lie in (0, 1)"));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid("epidemic scale must be positive"));
        }
        if !initial.is_finite() {
            return Err(Error::invalid("epidemic initial state must be finite"));
        }
        Ok(ModelSpec::EpidemicGaussian(EpidemicGaussian {
            p_star,
            scale,
            initial,
        }))
    }

    /// Dimension of one observation.
    pub fn obs_dim(&self) -> usize {
        match self {
            ModelSpec::RandomCoeffLinear(m) => m.dim,
            _ => 1,
        }
    }

    /// Dimension of the Markov state.
    pub fn state_dim(&self) -> usize {
        match self {
            ModelSpec::IidGaussian(_) => 0,
            ModelSpec::RandomCoeffLinear(m) => m.dim,
            ModelSpec::ArP(m) => m.theta_star.len(),
            ModelSpec::EpidemicBinomial(_) | ModelSpec::EpidemicGaussian(_) => 1,
        }
    }

    /// Dimension of a post-change parameter vector.
    pub fn param_dim(&self) -> usize {
        match self {
            ModelSpec::IidGaussian(_) => 1,
            ModelSpec::RandomCoeffLinear(m) => m.dim * m.dim,
            ModelSpec::ArP(m) => m.theta_star.len(),
            ModelSpec::EpidemicBinomial(_) | ModelSpec::EpidemicGaussian(_) => 1,
        }
    }

    /// Number of standard-normal draws consumed by one simulation step.
    pub fn noise_dim(&self) -> usize {
        match self {
            ModelSpec::IidGaussian(_) | ModelSpec::ArP(_) => 1,
            ModelSpec::RandomCoeffLinear(m) => m.dim + m.dim * m.dim,
            ModelSpec::EpidemicBinomial(_) => 0,
            ModelSpec::EpidemicGaussian(_) => 1,
        }
    }

    /// Default initial state: zeros for linear models, the declared
    /// initial level for the epidemic models.
    pub fn initial_state(&self) -> StreamState {
        match self {
            ModelSpec::IidGaussian(_) => StreamState::empty(),
            ModelSpec::RandomCoeffLinear(m) => StreamState(vec![0.0; m.dim]),
            ModelSpec::ArP(m) => StreamState(vec![0.0; m.theta_star.len()]),
            ModelSpec::EpidemicBinomial(m) => StreamState::scalar(m.initial as f64),
            ModelSpec::EpidemicGaussian(m) => StreamState::scalar(m.initial),
        }
    }

    /// The pre-change parameter expressed as a parameter vector, so that
    /// `llr_increment(theta_star(), ..) == 0` identically.
    pub fn theta_star(&self) -> Vec<f64> {
        match self {
            ModelSpec::IidGaussian(m) => vec![m.mean],
            ModelSpec::RandomCoeffLinear(m) => row_major(&m.theta_star),
            ModelSpec::ArP(m) => m.theta_star.clone(),
            ModelSpec::EpidemicBinomial(m) => vec![m.p_star],
            ModelSpec::EpidemicGaussian(m) => vec![m.p_star],
        }
    }

    fn check_dims(&self, theta: &[f64], y: &[f64], state: &StreamState) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::Dimension(format!(
                "parameter has dimension {}, model expects {}",
                theta.len(),
                self.param_dim()
            )));
        }
        if y.len() != self.obs_dim() {
            return Err(Error::Dimension(format!(
                "observation has dimension {}, model expects {}",
                y.len(),
                self.obs_dim()
            )));
        }
        if state.0.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "state has dimension {}, model expects {}",
                state.0.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// One-step log likelihood ratio
    /// `g(θ, y, x) = log f_θ(y | x) − log f*(y | x)`.
    pub fn llr_increment(&self, theta: &[f64], y: &[f64], state: &StreamState) -> Result<f64> {
        self.check_dims(theta, y, state)?;
        match self {
            ModelSpec::IidGaussian(m) => {
                let d = theta[0] - m.mean;
                let s2 = m.std * m.std;
                Ok(d * (y[0] - 0.5 * (theta[0] + m.mean)) / s2)
            }
            ModelSpec::ArP(m) => {
                // y(θ−θ*)'x + ((θ*'x)² − (θ'x)²)/2
                let u_star: f64 = dot(&m.theta_star, &state.0);
                let u: f64 = dot(theta, &state.0);
                Ok(y[0] * (u - u_star) + 0.5 * (u_star * u_star - u * u))
            }
            ModelSpec::RandomCoeffLinear(m) => m.llr(theta, y, &state.0),
            ModelSpec::EpidemicBinomial(m) => {
                let x = state.as_scalar();
                let yy = y[0];
                if yy < 0.0 || yy > x {
                    return Err(Error::Domain {
                        stream: 0,
                        reason: format!("binomial observation {yy} outside support [0, {x}]"),
                    });
                }
                let t = theta[0];
                Ok((x - yy) * (t / m.p_star).ln() + yy * ((1.0 - t) / (1.0 - m.p_star)).ln())
            }
            ModelSpec::EpidemicGaussian(m) => {
                let x = state.as_scalar();
                if x == 0.0 {
                    return Err(Error::Domain {
                        stream: 0,
                        reason: "epidemic transition density is undefined at state 0".into(),
                    });
                }
                let x = clamp_state(x);
                let t = theta[0];
                let s2_star = m.sigma2(m.p_star);
                let s2_t = m.sigma2(t);
                let ax = x.abs();
                let eta_star = (y[0] - (1.0 - m.p_star) * x) / (s2_star * ax).sqrt();
                let eta_t = (y[0] - (1.0 - t) * x) / (s2_t * ax).sqrt();
                Ok(0.5 * (s2_star / s2_t).ln() + 0.5 * (eta_star * eta_star - eta_t * eta_t))
            }
        }
    }

    /// Whether evaluating the LLR at this state will clamp it away from
    /// zero (epidemic Gaussian only).  Callers may count these events.
    pub fn state_is_clamped(&self, state: &StreamState) -> bool {
        match self {
            ModelSpec::EpidemicGaussian(_) => {
                let x = state.0.first().copied().unwrap_or(1.0);
                x != 0.0 && x.abs() < STATE_CLAMP
            }
            _ => false,
        }
    }

    /// One Markov transition with the Gaussian noise vector supplied
    /// explicitly (length [`Self::noise_dim`]).  Deterministic; the
    /// random variant is [`Self::simulate_step`].
    pub fn step_with_noise(
        &self,
        regime: Regime<'_>,
        state: &StreamState,
        noise: &[f64],
    ) -> Result<(Vec<f64>, StreamState)> {
        if noise.len() != self.noise_dim() {
            return Err(Error::Dimension(format!(
                "noise has dimension {}, model expects {}",
                noise.len(),
                self.noise_dim()
            )));
        }
        if let Regime::Post(theta) = regime {
            if theta.len() != self.param_dim() {
                return Err(Error::Dimension(
                    "post-change parameter has wrong dimension".into(),
                ));
            }
        }
        match self {
            ModelSpec::IidGaussian(m) => {
                let mu = match regime {
                    Regime::Pre => m.mean,
                    Regime::Post(t) => t[0],
                };
                Ok((vec![mu + m.std * noise[0]], StreamState::empty()))
            }
            ModelSpec::ArP(m) => {
                let coeffs = match regime {
                    Regime::Pre => &m.theta_star[..],
                    Regime::Post(t) => t,
                };
                let y = dot(coeffs, &state.0) + noise[0];
                let mut next = state.0.clone();
                next.rotate_right(1);
                next[0] = y;
                Ok((vec![y], StreamState(next)))
            }
            ModelSpec::RandomCoeffLinear(m) => {
                let theta = match regime {
                    Regime::Pre => m.theta_star.clone(),
                    Regime::Post(t) => DMatrix::from_row_slice(m.dim, m.dim, t),
                };
                let p = m.dim;
                let w = &m.q_noise_chol * DVector::from_column_slice(&noise[..p]);
                let b_vec = &m.q_coeff_sqrt * DVector::from_column_slice(&noise[p..]);
                // vec is column-major: vec(B)[j·p + i] = B[i, j].
                let b = DMatrix::from_fn(p, p, |i, j| b_vec[j * p + i]);
                let x = DVector::from_column_slice(&state.0);
                let y = (theta + b) * x + w;
                let obs: Vec<f64> = y.iter().cloned().collect();
                Ok((obs.clone(), StreamState(obs)))
            }
            ModelSpec::EpidemicBinomial(_) => Err(Error::invalid(
                "epidemic_binomial steps are integer-valued; use simulate_step",
            )),
            ModelSpec::EpidemicGaussian(m) => {
                let t = match regime {
                    Regime::Pre => m.p_star,
                    Regime::Post(t) => t[0],
                };
                let x = state.as_scalar();
                let y = (1.0 - t) * x + m.sigma2(t).sqrt() * x.abs().sqrt() * noise[0];
                Ok((vec![y], StreamState::scalar(y)))
            }
        }
    }

    /// One Markov transition with noise drawn from `rng`.
    pub fn simulate_step<R: Rng + ?Sized>(
        &self,
        regime: Regime<'_>,
        state: &StreamState,
        rng: &mut R,
    ) -> Result<(Vec<f64>, StreamState)> {
        if let ModelSpec::EpidemicBinomial(m) = self {
            let t = match regime {
                Regime::Pre => m.p_star,
                Regime::Post(theta) => theta[0],
            };
            let x = state.as_scalar().max(0.0).round() as u64;
            let y = if x == 0 {
                0.0
            } else {
                Binomial::new(x, 1.0 - t)
                    .map_err(|e| Error::numerical(format!("binomial sampling: {e}")))?
                    .sample(rng) as f64
            };
            return Ok((vec![y], StreamState::scalar(y)));
        }
        let noise: Vec<f64> = (0..self.noise_dim())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.step_with_noise(regime, state, &noise)
    }

    /// True iff `theta` lies inside the model's stability/validity region.
    pub fn stationarity_check(&self, theta: &[f64]) -> bool {
        if theta.len() != self.param_dim() {
            return false;
        }
        match self {
            ModelSpec::IidGaussian(_) => theta[0].is_finite(),
            ModelSpec::ArP(_) => companion_stable(theta),
            ModelSpec::RandomCoeffLinear(m) => m.stable(theta),
            ModelSpec::EpidemicBinomial(_) | ModelSpec::EpidemicGaussian(_) => {
                theta[0] > 0.0 && theta[0] < 1.0
            }
        }
    }

    /// Closed-form ergodic Kullback–Leibler numbers `(J̄, J̄*)` where the
    /// model admits them.
    ///
    /// The binomial epidemic chain is absorbed at 0, so its ergodic pair
    /// degenerates to `(0, 0)`; it is a simulation cross-check model, not
    /// a source of threshold or bound computations.
    pub fn closed_form_kl(&self, theta: &[f64]) -> Result<KlForm> {
        if theta.len() != self.param_dim() {
            return Err(Error::Dimension("parameter has wrong dimension".into()));
        }
        match self {
            ModelSpec::IidGaussian(m) => {
                let d = theta[0] - m.mean;
                let v = 0.5 * d * d / (m.std * m.std);
                Ok(KlForm::Exact {
                    j_bar: v,
                    j_star_bar: -v,
                })
            }
            ModelSpec::ArP(m) => {
                if !companion_stable(theta) {
                    return Err(Error::NotAdmissible(
                        "AR parameter outside the stability region".into(),
                    ));
                }
                let p = m.theta_star.len();
                let d = DVector::from_fn(p, |i, _| theta[i] - m.theta_star[i]);
                let f_post = stationary_covariance(theta)?;
                let f_pre = stationary_covariance(&m.theta_star)?;
                let j_bar = 0.5 * (&f_post * &d).dot(&d);
                let j_star_bar = -0.5 * (&f_pre * &d).dot(&d);
                Ok(KlForm::Exact { j_bar, j_star_bar })
            }
            ModelSpec::RandomCoeffLinear(_) => Ok(KlForm::Unavailable),
            ModelSpec::EpidemicBinomial(_) => Ok(KlForm::Exact {
                j_bar: 0.0,
                j_star_bar: 0.0,
            }),
            ModelSpec::EpidemicGaussian(m) => {
                let t = theta[0];
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::NotAdmissible(
                        "epidemic parameter outside (0, 1)".into(),
                    ));
                }
                let s2_star = m.sigma2(m.p_star);
                let s2_t = m.sigma2(t);
                let d2 = (t - m.p_star).powi(2);
                let log_ratio = (s2_star / s2_t).ln();
                Ok(KlForm::EpidemicAffine {
                    j_base: 0.5 * (log_ratio - 1.0 + s2_t / s2_star),
                    j_slope: 0.5 * d2 / s2_star,
                    j_star_base: 0.5 * (log_ratio + 1.0 - s2_star / s2_t),
                    j_star_slope: 0.5 * d2 / s2_t,
                })
            }
        }
    }

    /// Conditional informations `(J(θ, x), J*(θ, x))`: the expected LLR
    /// increment from state `x` under the post- and pre-change transition
    /// kernels respectively.  `J ≥ 0` and `J* ≤ 0` always.
    pub fn conditional_information(&self, theta: &[f64], state: &StreamState) -> Result<(f64, f64)> {
        if theta.len() != self.param_dim() || state.0.len() != self.state_dim() {
            return Err(Error::Dimension(
                "conditional_information: dimension mismatch".into(),
            ));
        }
        match self {
            ModelSpec::IidGaussian(m) => {
                let d = theta[0] - m.mean;
                let v = 0.5 * d * d / (m.std * m.std);
                Ok((v, -v))
            }
            ModelSpec::ArP(m) => {
                let a = dot(theta, &state.0) - dot(&m.theta_star, &state.0);
                Ok((0.5 * a * a, -0.5 * a * a))
            }
            ModelSpec::RandomCoeffLinear(m) => {
                let p = m.dim;
                let theta_m = DMatrix::from_row_slice(p, p, theta);
                let x = DVector::from_column_slice(&state.0);
                let a = (&theta_m - &m.theta_star) * &x;
                let g = m.conditional_covariance(&state.0);
                let chol = Cholesky::new(g)
                    .ok_or_else(|| Error::numerical("conditional covariance not SPD"))?;
                let v = 0.5 * chol.solve(&a).dot(&a);
                Ok((v, -v))
            }
            ModelSpec::EpidemicBinomial(m) => {
                let t = theta[0];
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::Domain {
                        stream: 0,
                        reason: "epidemic parameter must lie strictly in (0, 1)".into(),
                    });
                }
                let x = state.as_scalar();
                let kl = |a: f64, b: f64| {
                    a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
                };
                Ok((x * kl(t, m.p_star), -x * kl(m.p_star, t)))
            }
            ModelSpec::EpidemicGaussian(m) => {
                let t = theta[0];
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::Domain {
                        stream: 0,
                        reason: "epidemic parameter must lie strictly in (0, 1)".into(),
                    });
                }
                let x = state.as_scalar().abs();
                let s2_star = m.sigma2(m.p_star);
                let s2_t = m.sigma2(t);
                let d2 = (t - m.p_star).powi(2);
                let log_ratio = (s2_star / s2_t).ln();
                let j = 0.5 * (log_ratio - 1.0 + s2_t / s2_star + d2 * x / s2_star);
                let j_star = 0.5 * (log_ratio + 1.0 - s2_star / s2_t - d2 * x / s2_t);
                Ok((j, j_star))
            }
        }
    }
}

impl RandomCoeffLinear {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `G(x) = E[(Bx)(Bx)'] + q_noise` with
    /// `E[(Bx)(Bx)']_{ab} = Σ_{c,d} Q[c·p+a, d·p+b] x_c x_d`.
    fn conditional_covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.dim;
        let mut g = self.q_noise.clone();
        for a in 0..p {
            for b in 0..p {
                let mut acc = 0.0;
                for c in 0..p {
                    for d in 0..p {
                        acc += self.q_coeff[(c * p + a, d * p + b)] * x[c] * x[d];
                    }
                }
                g[(a, b)] += acc;
            }
        }
        g
    }

    fn llr(&self, theta: &[f64], y: &[f64], x: &[f64]) -> Result<f64> {
        let p = self.dim;
        let theta_m = DMatrix::from_row_slice(p, p, theta);
        let g = self.conditional_covariance(x);
        let chol =
            Cholesky::new(g).ok_or_else(|| Error::numerical("conditional covariance not SPD"))?;
        let xv = DVector::from_column_slice(x);
        let yv = DVector::from_column_slice(y);
        let u_star = &self.theta_star * &xv;
        let u = theta_m * &xv;
        let diff = &u - &u_star;
        // y'G⁻¹(θ−θ*)x + (x'θ*'G⁻¹θ*x − x'θ'G⁻¹θx)/2
        let t1 = chol.solve(&diff).dot(&yv);
        let t2 = 0.5 * (chol.solve(&u_star).dot(&u_star) - chol.solve(&u).dot(&u));
        Ok(t1 + t2)
    }

    /// Second-moment stability operator `θ⊗θ + E[B⊗B]` (spectral radius
    /// below one required).
    fn second_moment_operator(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.dim;
        DMatrix::from_fn(p * p, p * p, |row, col| {
            let (i, k) = (row / p, row % p);
            let (j, l) = (col / p, col % p);
            theta[(i, j)] * theta[(k, l)] + self.q_coeff[(j * p + i, l * p + k)]
        })
    }

    fn stable(&self, theta: &[f64]) -> bool {
        if theta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let theta_m = DMatrix::from_row_slice(self.dim, self.dim, theta);
        spectral_radius(&self.second_moment_operator(&theta_m)) < 1.0
    }
}

impl EpidemicGaussian {
    pub fn sigma2(&self, theta: f64) -> f64 {
        theta * (1.0 - theta) / self.scale
    }
}

// ---------------------------------------------------------------------------
// Shared numerics
// ---------------------------------------------------------------------------

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_state(x: f64) -> f64 {
    if x.abs() >= STATE_CLAMP {
        x
    } else if x >= 0.0 {
        STATE_CLAMP
    } else {
        -STATE_CLAMP
    }
}

/// Companion matrix of an AR(p) coefficient vector.
pub fn companion_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    let p = coeffs.len();
    DMatrix::from_fn(p, p, |i, j| {
        if i == 0 {
            coeffs[j]
        } else if j + 1 == i {
            1.0
        } else {
            0.0
        }
    })
}

/// Spectral radius via normalized repeated squaring:
/// `ρ(M) = lim ||M^{2^k}||^{1/2^k}` with the iterate renormalized at every
/// squaring, so the computation neither overflows nor stalls.  Sixty
/// squarings drive the polynomial correction factors to machine precision.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let a0 = m.norm();
    if a0 == 0.0 || !a0.is_finite() {
        return if a0 == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let mut current = m / a0;
    let mut log_rho = a0.ln();
    let mut weight = 0.5;
    for _ in 0..60 {
        let squared = &current * &current;
        let norm = squared.norm();
        if norm == 0.0 {
            return 0.0; // nilpotent
        }
        log_rho += weight * norm.ln();
        weight *= 0.5;
        current = squared / norm;
    }
    log_rho.exp()
}

fn companion_stable(coeffs: &[f64]) -> bool {
    if coeffs.iter().any(|v| !v.is_finite()) {
        return false;
    }
    spectral_radius(&companion_matrix(coeffs)) < 1.0
}

/// Stationary covariance `F = Σ_n Λ^n B (Λ')^n` of the stacked AR(p)
/// recursion (`B = e₁e₁'`), computed by iterating the Lyapunov map
/// `F ← Λ F Λ' + B` until the increment's max-norm falls below 1e-12
/// (capped at 1e5 iterations).
pub fn stationary_covariance(coeffs: &[f64]) -> Result<DMatrix<f64>> {
    let p = coeffs.len();
    let lambda = companion_matrix(coeffs);
    let mut b = DMatrix::zeros(p, p);
    b[(0, 0)] = 1.0;
    let mut f = b.clone();
    for _ in 0..100_000 {
        let next = &lambda * &f * lambda.transpose() + &b;
        let delta = (&next - &f).abs().max();
        f = next;
        if delta < 1e-12 {
            return Ok(f);
        }
    }
    Err(Error::numerical(
        "stationary covariance iteration did not converge; parameter too close to instability",
    ))
}

/// Symmetric PSD square root via eigendecomposition (tolerates zero
/// eigenvalues; rejects genuinely negative ones).
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let tol = 1e-10 * m.abs().max().max(1.0);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -tol {
            return Err(Error::invalid("q_coeff must be positive semidefinite"));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&vals);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}
