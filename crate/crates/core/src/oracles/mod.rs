//! Reference solvers used to check the two estimators: Blahut-Arimoto for
//! discrete sources, reverse water-filling for diagonal Gaussians, and a
//! histogram discretizer that turns a low-dimensional continuous source into
//! a tabular one.

mod ba;
mod discretize;
mod waterfill;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ba::{ba_for_distortion, ba_solve, BaConfig, BaSolution, DiscreteChannel};
pub use discretize::{discretize, GridSpec, MAX_GRID_CELLS};
pub use waterfill::{
    binary_entropy, binary_rd, gaussian_intercept, reverse_waterfill, standard_gaussian_intercept, water_level,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("distortion must be positive for a continuous source (got {0}); the rate is infinite at D <= 0")]
    NonPositiveDistortion(f64),
    #[error("grid has {cells} cells, limit is {limit}")]
    GridTooLarge { cells: usize, limit: usize },
    #[error(transparent)]
    Source(#[from] crate::sources::SourceError),
}

/// One point on a rate-distortion curve. Rates are in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub distortion: f64,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_ci: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion_ci: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl RdPoint {
    pub fn new(distortion: f64, rate: f64) -> Self {
        Self {
            distortion,
            rate,
            rate_ci: None,
            distortion_ci: None,
            lambda: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    /// Half-width of the rate interval, zero when there is none.
    pub fn rate_half_width(&self) -> f64 {
        self.rate_ci.map_or(0.0, |(lo, hi)| 0.5 * (hi - lo))
    }

    pub fn rate_bits(&self) -> f64 {
        self.rate / std::f64::consts::LN_2
    }
}
