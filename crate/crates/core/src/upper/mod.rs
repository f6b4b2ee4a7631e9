//! Upper bounds on `R(D)` from a beta-VAE trained on the rate-distortion
//! Lagrangian `E[KL(Q(Z|X) || Q(Z))] + lambda E[rho(X, omega(Z))]`.
//!
//! Any encoder, prior and decoder give an achievable `(D, R)` pair, so every
//! trained model is an upper bound; the estimate is reported with 95% normal
//! confidence intervals from fresh samples.

mod model;
mod prior;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, DiffError};
use crate::sources::SourceError;

pub use model::{DecoderSpec, NelboTerms, RateDistortionSamples, UpperBoundModel, LOGVAR_RANGE};
pub use prior::{gaussian_log_density, Prior, PriorSpec, FLOW_LOG_SCALE_BOUND};
pub use train::{
    evaluate_rd_point, sweep_upper, train_upper_bound, RdEvaluation, SweepFailure, SweepPoint, TraceRow, UpperRun, UpperSweep,
};

#[derive(Debug, Error)]
pub enum UpperError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("non-finite {component} term ({value})")]
    NonFinite { component: &'static str, value: f64 },
    #[error("training diverged at step {step}: {cause}")]
    Diverged {
        step: usize,
        cause: String,
        trace: Vec<TraceRow>,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Everything needed to train and evaluate one upper-bound model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperConfig {
    pub lambda: f64,
    pub latent_dim: usize,
    pub prior: PriorSpec,
    pub encoder_hidden: Vec<usize>,
    /// Hidden activation of the encoder.
    pub activation: Activation,
    pub decoder: DecoderSpec,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples drawn by [`evaluate_rd_point`] after training.
    pub m_eval: usize,
    /// Converged when the mean loss of the last window differs from the one
    /// before by less than `convergence_tol` relative.
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl UpperConfig {
    pub fn new(lambda: f64, latent_dim: usize) -> Self {
        Self {
            lambda,
            latent_dim,
            prior: PriorSpec::FactorizedGaussian,
            encoder_hidden: vec![100, 100],
            activation: Activation::Softplus,
            decoder: DecoderSpec::Identity,
            batch_size: 256,
            steps: 50_000,
            lr: 1e-4,
            seed: 0,
            m_eval: 10_000,
            convergence_window: 5_000,
            convergence_tol: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<(), UpperError> {
        let bad = |m: String| Err(UpperError::Invalid(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.latent_dim == 0 {
            return bad("latent dimension must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.m_eval < 30 {
            return bad(format!("m_eval must be at least 30 for the normal CI, got {}", self.m_eval));
        }
        Ok(())
    }
}
