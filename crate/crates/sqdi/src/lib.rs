//! Multistream sequential change detection and identification.
//!
//! `sqdi` watches `N` independent observation streams for a distributional
//! change that occurs in at most one of them at an unknown time, and jointly
//! decides *when* to raise an alarm and *which* stream changed.  The decision
//! statistics are geometric-prior mixtures of likelihood ratios over a grid
//! of candidate post-change parameters; an N×N matrix of these statistics is
//! compared row-wise against a calibrated threshold matrix.
//!
//! Crate layout:
//!
//! * [`prior`], [`grid`], [`matrices`], [`hyper`] — shared domain types:
//!   the change-point prior, parameter grids, error/threshold matrices and
//!   the schedule parameters derived from a constraint matrix;
//! * [`models`] — pluggable per-stream stochastic models (i.i.d. Gaussian,
//!   random-coefficient linear, AR(p), binomial and Gaussian epidemic);
//! * [`detector`] — the online statistics, stopping rule and a brute-force
//!   oracle used by the test suites;
//! * [`thresholds`] — threshold calibration from constraint matrices plus
//!   the information lower/upper delay bounds;
//! * [`montecarlo`] — trial batteries and the operating-characteristics
//!   estimators (expected delay, false alarm, misidentification, MC
//!   Kullback–Leibler numbers);
//! * [`surveillance`] — CSV ingestion for regional hospitalization series,
//!   pre-change calibration, offline detection and report emission.

pub mod config;
pub mod detector;
pub mod error;
pub mod grid;
pub mod hyper;
pub mod matrices;
pub mod models;
pub mod montecarlo;
pub mod numeric;
pub mod prior;
pub mod surveillance;
pub mod thresholds;

pub use error::{Error, Result};
pub use grid::ParameterGrid;
pub use hyper::{alpha_embeddings, hyperparams_from_beta, Hyperparams};
pub use matrices::{ErrorMatrix, ThresholdMatrix, ThresholdProvenance};
pub use models::{ModelSpec, Regime, StreamState};
pub use prior::GeometricPrior;
