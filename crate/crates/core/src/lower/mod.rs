//! Lower bounds on `R(D)` from the dual characterization
//! `R(D) = max_{lambda, u} E[-log u(X)] - lambda D` subject to
//! `sup_x_hat E[exp(-lambda rho(X, x_hat)) / u(X)] <= 1`.
//!
//! The sup-partition function is over-estimated by `C_k`, the maximum of a
//! `k`-component Gaussian mixture built from samples, found by hill climbing.
//! Training ascends the linearized objective
//! `E[-log u] - E[C_k] / alpha - log alpha + 1`; the final intercept is a
//! one-sided 90% lower confidence bound. Squared error only.

mod ck;
mod envelope;
mod gamma;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, DiffError, Mlp, MlpSpec, ParamStore, Tensor};
use crate::sources::SourceError;

pub use ck::{climb, compute_ck, compute_ck_mixture, Climb, CkEstimate, CkMode, HillClimb};
pub use envelope::{envelope, EnvelopeLine, LowerEnvelope};
pub use gamma::{log_gamma_k, Mixture};
pub use train::{
    ck_monotonicity_check, evaluate_intercept, lower_objective, sweep_lower, train_lower_bound, AlphaTracker, CkRow,
    InterceptEstimate, LowerRun, LowerSweep, LowerSweepFailure, LowerSweepPoint, LowerTraceRow, ObjectiveTerms,
};

#[derive(Debug, Error)]
pub enum LowerError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("non-finite {term} ({value})")]
    NonFinite { term: &'static str, value: f64 },
    #[error("training diverged at step {step}: {cause}")]
    Diverged {
        step: usize,
        cause: String,
        trace: Vec<LowerTraceRow>,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Anything that supplies `log u(x)` for a batch of samples.
pub trait LogU: Sync {
    fn log_u(&self, x: &Tensor) -> Result<Vec<f64>, LowerError>;
}

/// `log u` constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantU(pub f64);

impl LogU for ConstantU {
    fn log_u(&self, x: &Tensor) -> Result<Vec<f64>, LowerError> {
        Ok(vec![self.0; x.rows()])
    }
}

/// `log u` given by a function of one sample.
pub struct FnLogU<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> LogU for FnLogU<F> {
    fn log_u(&self, x: &Tensor) -> Result<Vec<f64>, LowerError> {
        Ok((0..x.rows()).map(|i| (self.0)(x.row_slice(i))).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerConfig {
    pub lambda: f64,
    /// Samples per `C_k` draw.
    pub k: usize,
    /// `C_k` draws per step.
    pub m: usize,
    /// Climbs per draw during training.
    pub top_t: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub climb: HillClimb,
    /// Weight of the new estimate in the `alpha` moving average.
    pub alpha_ema: f64,
    /// Draws used for the final intercept, and again for its `alpha`.
    pub m_eval: usize,
    pub convergence_window: usize,
    /// Absolute tolerance in nats between trailing window means.
    pub convergence_tol: f64,
}

impl LowerConfig {
    pub fn new(lambda: f64, k: usize) -> Self {
        Self {
            lambda,
            k,
            m: 8,
            top_t: 10,
            steps: 5_000,
            lr: 1e-4,
            seed: 0,
            hidden: vec![20, 20],
            activation: Activation::Selu,
            climb: HillClimb::default(),
            alpha_ema: 0.8,
            m_eval: 100,
            convergence_window: 500,
            convergence_tol: 1e-2,
        }
    }

    /// `k = 1024`, two hidden layers of `20 n` SeLU units.
    pub fn gaussian(n: usize, lambda: f64) -> Self {
        Self {
            hidden: vec![20 * n, 20 * n],
            ..Self::new(lambda, 1024)
        }
    }

    /// `k = 2048`, three hidden layers of `min(100 n, 1000)` SeLU units.
    pub fn banana(n: usize, lambda: f64) -> Self {
        let w = (100 * n).min(1000);
        Self {
            hidden: vec![w, w, w],
            ..Self::new(lambda, 2048)
        }
    }

    pub fn validate(&self) -> Result<(), LowerError> {
        let bad = |m: String| Err(LowerError::Invalid(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if self.m == 0 || self.top_t == 0 {
            return bad("m and top_t must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.alpha_ema > 0.0 && self.alpha_ema <= 1.0) {
            return bad(format!("alpha_ema must be in (0, 1], got {}", self.alpha_ema));
        }
        if self.m_eval < 2 {
            return bad("m_eval must be at least 2".into());
        }
        Ok(())
    }
}

/// The network `log u_theta` plus the fixed slope and the `alpha` tracker.
#[derive(Clone, Debug)]
pub struct LowerBoundModel {
    pub lambda: f64,
    pub k: usize,
    pub log_u: Mlp,
    pub params: ParamStore,
    pub alpha: AlphaTracker,
}

impl LowerBoundModel {
    pub fn new(input_dim: usize, cfg: &LowerConfig) -> Result<Self, LowerError> {
        cfg.validate()?;
        let mut widths = vec![input_dim];
        widths.extend(&cfg.hidden);
        widths.push(1);
        let log_u = Mlp::new(MlpSpec::new(widths, cfg.activation, Activation::Linear)?, "logu")?;
        let mut params = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(crate::sources::mix_seed(cfg.seed, 3));
        log_u.init(&mut params, &mut rng);
        Ok(Self {
            lambda: cfg.lambda,
            k: cfg.k,
            log_u,
            params,
            alpha: AlphaTracker::new(cfg.alpha_ema),
        })
    }
}

impl LogU for LowerBoundModel {
    fn log_u(&self, x: &Tensor) -> Result<Vec<f64>, LowerError> {
        Ok(self.log_u.eval(&self.params, x)?.into_data())
    }
}
