use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, DiffError, Mlp, MlpSpec, ParamStore, Tape, Var};

/// Coupling log-scales are squashed to `(-B, B)` by `B tanh(s / B)`.
pub const FLOW_LOG_SCALE_BOUND: f64 = 3.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Latent prior family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PriorSpec {
    /// Learned per-coordinate means and log-variances.
    FactorizedGaussian,
    /// Factorized Gaussian base pushed through `layers` affine couplings whose
    /// shift and log-scale come from MLPs with two hidden layers of `hidden` units.
    AffineCouplingFlow { layers: usize, hidden: usize },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::FactorizedGaussian
    }
}

impl PriorSpec {
    pub fn flow() -> Self {
        PriorSpec::AffineCouplingFlow { layers: 4, hidden: 64 }
    }
}

/// The prior `Q_Z` with parameters under the `prior.` prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub spec: PriorSpec,
    pub dim: usize,
    conditioners: Vec<Mlp>,
}

pub(crate) const PRIOR_MEAN: &str = "prior.mean";
pub(crate) const PRIOR_LOGVAR: &str = "prior.logvar";

/// `sum_j log N(z_j; mean_j, exp(logvar_j))` per row, as a `batch x 1` node.
pub fn gaussian_log_density(tape: &mut Tape, z: Var, mean: Var, logvar: Var) -> Result<Var, DiffError> {
    let m = tape.value(z).cols();
    let diff = tape.sub(z, mean)?;
    let sq = tape.square(diff);
    let neg = tape.neg(logvar);
    let prec = tape.exp(neg);
    let quad = tape.mul(sq, prec)?;
    let t = tape.add(quad, logvar)?;
    let s = tape.sum_axis(t, 1)?;
    let s = tape.add_scalar(s, m as f64 * LN_2PI);
    Ok(tape.scale(s, -0.5))
}

impl Prior {
    pub fn new(spec: PriorSpec, dim: usize) -> Result<Self, DiffError> {
        if dim == 0 {
            return Err(DiffError::BadSpec("latent dimension must be positive".into()));
        }
        let conditioners = match &spec {
            PriorSpec::FactorizedGaussian => Vec::new(),
            PriorSpec::AffineCouplingFlow { layers, hidden } => {
                if dim < 2 {
                    return Err(DiffError::BadSpec("a coupling flow needs latent dimension >= 2".into()));
                }
                if *layers == 0 || *hidden == 0 {
                    return Err(DiffError::BadSpec("flow needs at least one layer and one hidden unit".into()));
                }
                (0..*layers)
                    .map(|l| {
                        let (cond, trans) = Self::split(dim, l);
                        let spec = MlpSpec::new(
                            vec![cond.1 - cond.0, *hidden, *hidden, 2 * (trans.1 - trans.0)],
                            Activation::Softplus,
                            Activation::Linear,
                        )?;
                        Mlp::new(spec, format!("prior.c{l}"))
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        Ok(Self {
            spec,
            dim,
            conditioners,
        })
    }

    /// Column ranges `(conditioning, transformed)` for coupling layer `l`.
    fn split(dim: usize, l: usize) -> ((usize, usize), (usize, usize)) {
        let h = dim / 2;
        if l % 2 == 0 {
            ((0, h), (h, dim))
        } else {
            ((h, dim), (0, h))
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(PRIOR_MEAN, crate::autodiff::Tensor::zeros(1, self.dim));
        store.insert(PRIOR_LOGVAR, crate::autodiff::Tensor::zeros(1, self.dim));
        for c in &self.conditioners {
            c.init(store, rng);
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.spec, PriorSpec::FactorizedGaussian)
    }

    /// `log q(z)` per row of `z` (`batch x dim`), as a `batch x 1` node.
    pub fn log_density(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var, DiffError> {
        let mut h = z;
        let mut log_det: Option<Var> = None;
        for (l, net) in self.conditioners.iter().enumerate() {
            let (cond, trans) = Self::split(self.dim, l);
            let zc = tape.slice_cols(h, cond.0, cond.1)?;
            let zt = tape.slice_cols(h, trans.0, trans.1)?;
            let w = trans.1 - trans.0;
            let out = net.forward(tape, store, zc)?;
            let shift = tape.slice_cols(out, 0, w)?;
            let raw = tape.slice_cols(out, w, 2 * w)?;
            let raw = tape.scale(raw, 1.0 / FLOW_LOG_SCALE_BOUND);
            let raw = tape.tanh(raw);
            let s = tape.scale(raw, FLOW_LOG_SCALE_BOUND);
            let centred = tape.sub(zt, shift)?;
            let neg_s = tape.neg(s);
            let factor = tape.exp(neg_s);
            let zt = tape.mul(centred, factor)?;
            h = if l % 2 == 0 {
                tape.concat_cols(zc, zt)?
            } else {
                tape.concat_cols(zt, zc)?
            };
            let ld = tape.sum_axis(neg_s, 1)?;
            log_det = Some(match log_det {
                None => ld,
                Some(acc) => tape.add(acc, ld)?,
            });
        }
        let mean = tape.param(store, PRIOR_MEAN)?;
        let logvar = tape.param(store, PRIOR_LOGVAR)?;
        let base = gaussian_log_density(tape, h, mean, logvar)?;
        match log_det {
            None => Ok(base),
            Some(ld) => tape.add(base, ld),
        }
    }
}
