//! JSON run configuration.
//!
//! Top-level keys:
//!
//! * `n_streams` — number of streams;
//! * `rho` *or* `auto_rho: true` — prior parameter, explicit or derived
//!   from `beta_matrix` via the optimized schedule;
//! * `beta_matrix` *or* `alpha_matrix` — the error constraint matrix the
//!   thresholds are calibrated from;
//! * `k_check` — schedule factor (`> 1`, used with `beta_matrix`);
//! * `r` — moment order for delay bounds (default 1);
//! * `window` — optional window length for the window-limited detector;
//! * `streams` — one `{model, grid}` block per stream.
//!
//! Model blocks are tagged by `kind`; grids are explicit point lists
//! (optionally weighted) or per-coordinate `linspace` descriptors.
//! Values round-trip bit-exactly through serialization (shortest-exact
//! float encoding).

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, WindowMode};
use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::hyper::{hyperparams_from_beta, Hyperparams};
use crate::matrices::{ErrorMatrix, ThresholdMatrix};
use crate::models::ModelSpec;
use crate::prior::GeometricPrior;
use crate::thresholds::{thresholds_from_alpha, thresholds_from_beta, thresholds_optimal};

/// Model block, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelBlock {
    IidGaussian {
        mean: f64,
        std: f64,
    },
    ArP {
        theta_star: Vec<f64>,
    },
    RandomCoeffLinear {
        theta_star: Vec<Vec<f64>>,
        q_coeff: Vec<Vec<f64>>,
        q_noise: Vec<Vec<f64>>,
    },
    EpidemicBinomial {
        p_star: f64,
        initial: u64,
    },
    EpidemicGaussian {
        p_star: f64,
        scale: f64,
        initial: f64,
    },
}

impl ModelBlock {
    pub fn build(&self) -> Result<ModelSpec> {
        match self.clone() {
            ModelBlock::IidGaussian { mean, std } => ModelSpec::iid_gaussian(mean, std),
            ModelBlock::ArP { theta_star } => ModelSpec::ar(theta_star),
            ModelBlock::RandomCoeffLinear {
                theta_star,
                q_coeff,
                q_noise,
            } => ModelSpec::random_coeff_linear(theta_star, q_coeff, q_noise),
            ModelBlock::EpidemicBinomial { p_star, initial } => {
                ModelSpec::epidemic_binomial(p_star, initial)
            }
            ModelBlock::EpidemicGaussian {
                p_star,
                scale,
                initial,
            } => ModelSpec::epidemic_gaussian(p_star, scale, initial),
        }
    }
}

/// Per-coordinate uniform subdivision descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinspaceBlock {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub count: Vec<usize>,
}

/// Grid block: explicit points or a linspace product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linspace: Option<LinspaceBlock>,
}

impl GridBlock {
    pub fn build(&self) -> Result<ParameterGrid> {
        match (&self.points, &self.linspace) {
            (Some(points), None) => match &self.weights {
                Some(w) => ParameterGrid::new(points.clone(), w.clone()),
                None => ParameterGrid::uniform(points.clone()),
            },
            (None, Some(ls)) => {
                if self.weights.is_some() {
                    return Err(Error::invalid(
                        "linspace grids are uniformly weighted; drop the weights key",
                    ));
                }
                ParameterGrid::linspace_product(&ls.lo, &ls.hi, &ls.count)
            }
            (Some(_), Some(_)) => Err(Error::invalid(
                "grid block must have either points or linspace, not both",
            )),
            (None, None) => Err(Error::invalid("grid block needs points or linspace")),
        }
    }
}

/// One stream: a model plus its parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamBlock {
    pub model: ModelBlock,
    pub grid: GridBlock,
}

/// The JSON run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_streams: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auto_rho: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_check: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub streams: Vec<StreamBlock>,
}

/// Everything a run needs, resolved and validated.
pub struct BuiltConfig {
    pub detector: DetectorConfig,
    pub models: Vec<ModelSpec>,
    pub thresholds: ThresholdMatrix,
    pub beta: Option<ErrorMatrix>,
    pub alpha: Option<ErrorMatrix>,
    pub hyperparams: Option<Hyperparams>,
    pub r: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Resolve models, grids, prior and thresholds, validating every
    /// cross-reference (dimensions, admissibility, exclusive keys).
    pub fn build(&self) -> Result<BuiltConfig> {
        if self.streams.len() != self.n_streams {
            return Err(Error::invalid(format!(
                "n_streams = {} but {} stream blocks",
                self.n_streams,
                self.streams.len()
            )));
        }
        let r = self.r.unwrap_or(1.0);
        let beta = self
            .beta_matrix
            .as_ref()
            .map(|m| ErrorMatrix::new(m.clone()))
            .transpose()?;
        let alpha = self
            .alpha_matrix
            .as_ref()
            .map(|m| ErrorMatrix::new(m.clone()))
            .transpose()?;
        if beta.is_some() == alpha.is_some() {
            return Err(Error::invalid(
                "exactly one of beta_matrix / alpha_matrix is required",
            ));
        }
        if let Some(m) = beta.as_ref().or(alpha.as_ref()) {
            if m.n() != self.n_streams {
                return Err(Error::Dimension(format!(
                    "constraint matrix is {}×{} but n_streams = {}",
                    m.n(),
                    m.n(),
                    self.n_streams
                )));
            }
        }
        let hyperparams = match &beta {
            Some(b) => {
                let k_check = self.k_check.ok_or_else(|| {
                    Error::invalid("k_check is required with beta_matrix")
                })?;
                Some(hyperparams_from_beta(b, k_check, r)?)
            }
            None => None,
        };

        let auto = self.auto_rho.unwrap_or(false);
        let rho = match (self.rho, auto) {
            (Some(_), true) => {
                return Err(Error::invalid("rho and auto_rho are mutually exclusive"))
            }
            (Some(v), false) => v,
            (None, true) => {
                hyperparams
                    .as_ref()
                    .ok_or_else(|| Error::invalid("auto_rho requires beta_matrix"))?
                    .rho_opt
            }
            (None, false) => {
                return Err(Error::invalid("one of rho / auto_rho is required"))
            }
        };
        let prior = GeometricPrior::new(rho)?;

        let thresholds = match (&alpha, &beta) {
            (Some(a), None) => thresholds_from_alpha(a)?,
            (None, Some(b)) => {
                let hp = hyperparams.as_ref().unwrap();
                if auto {
                    thresholds_optimal(b, hp)?
                } else {
                    thresholds_from_beta(b, hp, rho)?
                }
            }
            _ => unreachable!(),
        };

        let mut models = Vec::with_capacity(self.n_streams);
        let mut grids = Vec::with_capacity(self.n_streams);
        for (i, block) in self.streams.iter().enumerate() {
            let model = block.model.build()?;
            let grid = block.grid.build()?;
            if grid.dim() != model.param_dim() {
                return Err(Error::Dimension(format!(
                    "stream {}: grid dimension {} but model parameter dimension {}",
                    i + 1,
                    grid.dim(),
                    model.param_dim()
                )));
            }
            for point in grid.points() {
                if !model.stationarity_check(point) {
                    return Err(Error::NotAdmissible(format!(
                        "stream {}: grid point {point:?} outside the model's admissible set",
                        i + 1
                    )));
                }
            }
            models.push(model);
            grids.push(grid);
        }
        let window = match self.window {
            Some(l) => WindowMode::Limited(l),
            None => WindowMode::Full,
        };
        let detector = DetectorConfig::new(prior, grids).with_window(window);
        Ok(BuiltConfig {
            detector,
            models,
            thresholds,
            beta,
            alpha,
            hyperparams,
            r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        serde_json::json!({
            "n_streams": 2,
            "auto_rho": true,
            "beta_matrix": [[0.05, 0.025], [0.025, 0.05]],
            "k_check": 2.0,
            "r": 1.0,
            "streams": [
                {
                    "model": {"kind": "ar_p", "theta_star": [0.0]},
                    "grid": {"points": [[0.5]]}
                },
                {
                    "model": {"kind": "iid_gaussian", "mean": 0.0, "std": 1.0},
                    "grid": {"linspace": {"lo": [0.25], "hi": [1.25], "count": [5]}}
                }
            ]
        })
        .to_string()
    }

    #[test]
    fn builds_from_json() {
        let config = RunConfig::from_json(&sample_json()).unwrap();
        let built = config.build().unwrap();
        assert_eq!(built.models.len(), 2);
        assert_eq!(built.detector.grids[1].len(), 5);
        assert!(built.hyperparams.is_some());
        // auto_rho resolves to the optimized schedule value.
        let hp = built.hyperparams.unwrap();
        assert!((built.detector.prior.rho() - hp.rho_opt).abs() < 1e-15);
    }

    #[test]
    fn floats_round_trip_bit_exactly() {
        let mut config = RunConfig::from_json(&sample_json()).unwrap();
        config.rho = None;
        config.beta_matrix = Some(vec![
            vec![0.1 + 1e-17, 0.2f64.next_up()],
            vec![std::f64::consts::PI / 31.0, 0.05],
        ]);
        let text = config.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(config, back);
        let a = config.beta_matrix.as_ref().unwrap();
        let b = back.beta_matrix.as_ref().unwrap();
        for (ra, rb) in a.iter().zip(b) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_conflicting_prior_keys() {
        let mut config = RunConfig::from_json(&sample_json()).unwrap();
        config.rho = Some(0.1);
        assert!(config.build().is_err()); // rho + auto_rho
        config.auto_rho = None;
        assert!(config.build().is_ok());
        config.rho = None;
        assert!(config.build().is_err()); // neither
    }

    #[test]
    fn rejects_both_constraint_matrices() {
        let mut config = RunConfig::from_json(&sample_json()).unwrap();
        config.alpha_matrix = Some(vec![vec![0.05, 0.05], vec![0.05, 0.05]]);
        assert!(config.build().is_err());
        config.beta_matrix = None;
        config.auto_rho = None;
        config.rho = Some(0.1);
        let built = config.build().unwrap();
        assert_eq!(built.thresholds.get(0, 0), 19.0);
    }

    #[test]
    fn rejects_inadmissible_grid_points() {
        let mut config = RunConfig::from_json(&sample_json()).unwrap();
        config.streams[0].grid.points = Some(vec![vec![1.5]]); // unstable AR
        assert!(matches!(
            config.build(),
            Err(Error::NotAdmissible(_))
        ));
    }

    #[test]
    fn window_key_selects_limited_mode() {
        let mut config = RunConfig::from_json(&sample_json()).unwrap();
        config.window = Some(25);
        let built = config.build().unwrap();
        assert_eq!(built.detector.window, WindowMode::Limited(25));
    }
}
