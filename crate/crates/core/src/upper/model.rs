use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::prior::{Prior, PRIOR_LOGVAR, PRIOR_MEAN};
use super::{UpperConfig, UpperError};
use crate::autodiff::{Activation, Mlp, MlpSpec, ParamStore, Tape, Tensor, Var};
use crate::sources::mix_seed;

/// Posterior log-variances are clamped to this range.
pub const LOGVAR_RANGE: (f64, f64) = (-20.0, 10.0);

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Decoder `omega: z -> x_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecoderSpec {
    /// `x_hat = z`; needs latent dimension equal to the source dimension.
    Identity,
    Mlp { hidden: Vec<usize>, activation: Activation },
}

/// Encoder, prior and decoder of a beta-VAE, with all their parameters.
#[derive(Clone, Debug)]
pub struct UpperBoundModel {
    pub lambda: f64,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder: Mlp,
    pub prior: Prior,
    /// `None` is the identity decoder.
    pub decoder: Option<Mlp>,
    pub params: ParamStore,
}

/// Differentiable pieces of the training loss for one batch.
#[derive(Clone, Copy, Debug)]
pub struct NelboTerms {
    pub rate: Var,
    pub distortion: Var,
    pub loss: Var,
}

/// Per-example rate `log q(z|x) - log q(z)` and distortion `rho(x, omega(z))`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateDistortionSamples {
    pub rate: Vec<f64>,
    pub distortion: Vec<f64>,
}

impl UpperBoundModel {
    pub fn new(input_dim: usize, cfg: &UpperConfig) -> Result<Self, UpperError> {
        cfg.validate()?;
        let m = cfg.latent_dim;
        let mut widths = vec![input_dim];
        widths.extend(&cfg.encoder_hidden);
        widths.push(2 * m);
        let encoder = Mlp::new(MlpSpec::new(widths, cfg.activation, Activation::Linear)?, "enc")?;
        let decoder = match &cfg.decoder {
            DecoderSpec::Identity => {
                if m != input_dim {
                    return Err(UpperError::Invalid(format!(
                        "identity decoder needs latent dim {input_dim}, got {m}"
                    )));
                }
                None
            }
            DecoderSpec::Mlp { hidden, activation } => {
                let mut widths = vec![m];
                widths.extend(hidden);
                widths.push(input_dim);
                Some(Mlp::new(MlpSpec::new(widths, *activation, Activation::Linear)?, "dec")?)
            }
        };
        let prior = Prior::new(cfg.prior.clone(), m)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
        encoder.init(&mut params, &mut rng);
        prior.init(&mut params, &mut rng);
        if let Some(d) = &decoder {
            d.init(&mut params, &mut rng);
        }
        Ok(Self {
            lambda: cfg.lambda,
            input_dim,
            latent_dim: m,
            encoder,
            prior,
            decoder,
            params,
        })
    }

    /// Posterior mean and clamped log-variance, each `batch x m`.
    ///
    /// The standard deviation head is `softplus`, so `logvar = 2 ln softplus(raw)`.
    pub fn posterior(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var), UpperError> {
        let m = self.latent_dim;
        let h = self.encoder.forward(tape, &self.params, x)?;
        let mean = tape.slice_cols(h, 0, m)?;
        let raw = tape.slice_cols(h, m, 2 * m)?;
        let std = tape.softplus(raw);
        let log_std = tape.ln(std);
        let logvar = tape.scale(log_std, 2.0);
        Ok((mean, tape.clamp(logvar, LOGVAR_RANGE.0, LOGVAR_RANGE.1)))
    }

    fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var, UpperError> {
        match &self.decoder {
            None => Ok(z),
            Some(d) => Ok(d.forward(tape, &self.params, z)?),
        }
    }

    /// Loss terms on `x` with fresh reparameterization noise from `rng`.
    pub fn nelbo(&self, tape: &mut Tape, x: &Tensor, rng: &mut impl Rng) -> Result<NelboTerms, UpperError> {
        let noise = standard_normal(x.rows(), self.latent_dim, rng);
        self.nelbo_with_noise(tape, x, &noise)
    }

    /// Loss terms with the noise `eps` (`batch x m`) given explicitly, so the
    /// loss is a deterministic function of the parameters.
    pub fn nelbo_with_noise(&self, tape: &mut Tape, x: &Tensor, eps: &Tensor) -> Result<NelboTerms, UpperError> {
        if x.cols() != self.input_dim {
            return Err(UpperError::Invalid(format!(
                "batch has {} columns, model expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        let xv = tape.constant(x.clone());
        let (mean, logvar) = self.posterior(tape, xv)?;
        let ev = tape.constant(eps.clone());
        let z = reparameterize(tape, mean, logvar, ev)?;

        let rate_rows = if self.prior.is_gaussian() {
            gaussian_kl(tape, &self.params, mean, logvar)?
        } else {
            let lq_post = posterior_log_density(tape, logvar, ev)?;
            let lq_prior = self.prior.log_density(tape, &self.params, z)?;
            tape.sub(lq_post, lq_prior)?
        };
        let rate = tape.mean(rate_rows)?;

        let x_hat = self.decode(tape, z)?;
        let diff = tape.sub(xv, x_hat)?;
        let sq = tape.square(diff);
        let d_rows = tape.sum_axis(sq, 1)?;
        let distortion = tape.mean(d_rows)?;

        for (name, v) in [("rate", rate), ("distortion", distortion)] {
            let value = tape.value(v).item();
            if !value.is_finite() {
                return Err(UpperError::NonFinite {
                    component: name,
                    value,
                });
            }
        }
        let weighted = tape.scale(distortion, self.lambda);
        let loss = tape.add(rate, weighted)?;
        Ok(NelboTerms {
            rate,
            distortion,
            loss,
        })
    }

    /// Per-example rate and distortion values for `x` under noise `eps`.
    pub fn rd_samples(&self, x: &Tensor, eps: &Tensor) -> Result<RateDistortionSamples, UpperError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (mean, logvar) = self.posterior(&mut tape, xv)?;
        let ev = tape.constant(eps.clone());
        let z = reparameterize(&mut tape, mean, logvar, ev)?;
        let lq_post = posterior_log_density(&mut tape, logvar, ev)?;
        let lq_prior = self.prior.log_density(&mut tape, &self.params, z)?;
        let r = tape.sub(lq_post, lq_prior)?;
        let x_hat = self.decode(&mut tape, z)?;
        let diff = tape.sub(xv, x_hat)?;
        let sq = tape.square(diff);
        let d = tape.sum_axis(sq, 1)?;
        Ok(RateDistortionSamples {
            rate: tape.value(r).data().to_vec(),
            distortion: tape.value(d).data().to_vec(),
        })
    }
}

pub(crate) fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// `z = mean + exp(logvar / 2) * eps`.
fn reparameterize(tape: &mut Tape, mean: Var, logvar: Var, eps: Var) -> Result<Var, UpperError> {
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(std, eps)?;
    Ok(tape.add(mean, noise)?)
}

/// `log q(z | x)` at `z = mean + std * eps`, written in terms of `eps`.
fn posterior_log_density(tape: &mut Tape, logvar: Var, eps: Var) -> Result<Var, UpperError> {
    let m = tape.value(logvar).cols();
    let e2 = tape.square(eps);
    let t = tape.add(logvar, e2)?;
    let s = tape.sum_axis(t, 1)?;
    let s = tape.add_scalar(s, m as f64 * LN_2PI);
    Ok(tape.scale(s, -0.5))
}

/// Closed-form `KL(N(mean, e^logvar) || N(prior mean, e^prior logvar))` per row.
fn gaussian_kl(tape: &mut Tape, store: &ParamStore, mean: Var, logvar: Var) -> Result<Var, UpperError> {
    let pm = tape.param(store, PRIOR_MEAN)?;
    let plv = tape.param(store, PRIOR_LOGVAR)?;
    let dlv = tape.sub(logvar, plv)?;
    let ratio = tape.exp(dlv);
    let diff = tape.sub(mean, pm)?;
    let sq = tape.square(diff);
    let neg_plv = tape.neg(plv);
    let prec = tape.exp(neg_plv);
    let maha = tape.mul(sq, prec)?;
    let t = tape.add(ratio, maha)?;
    let t = tape.sub(t, dlv)?;
    let t = tape.add_scalar(t, -1.0);
    let s = tape.sum_axis(t, 1)?;
    Ok(tape.scale(s, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upper::PriorSpec;

    fn model_1d() -> UpperBoundModel {
        let cfg = UpperConfig {
            encoder_hidden: vec![],
            ..UpperConfig::new(1.0, 1)
        };
        UpperBoundModel::new(1, &cfg).unwrap()
    }

    /// Sets the encoder to output `N(mu, 1)` regardless of `x`.
    fn constant_posterior(model: &mut UpperBoundModel, mu: f64) {
        let raw_for_unit_std = (1f64.exp() - 1.0).ln();
        model.params.get_mut("enc.l0.w").unwrap().data_mut().fill(0.0);
        model.params.get_mut("enc.l0.b").unwrap().data_mut().copy_from_slice(&[mu, raw_for_unit_std]);
    }

    #[test]
    fn identical_distributions_have_zero_rate() {
        let mut model = model_1d();
        constant_posterior(&mut model, 0.0);
        let x = Tensor::column(&[0.3, -2.0, 1.5]);
        let mut tape = Tape::new();
        let t = model.nelbo(&mut tape, &x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(tape.value(t.rate).item().abs() < 1e-12);
    }

    #[test]
    fn unit_shift_kl_is_half() {
        let mut model = model_1d();
        constant_posterior(&mut model, 1.0);
        let x = Tensor::column(&[0.0, 5.0]);
        let mut tape = Tape::new();
        let t = model.nelbo(&mut tape, &x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((tape.value(t.rate).item() - 0.5).abs() < 1e-12);
        // Trapezoid quadrature of the KL integrand.
        let h = 1e-3;
        let pdf = |z: f64, m: f64| (-(z - m) * (z - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let kl: f64 = (-12_000..=12_000)
            .map(|i| {
                let z = i as f64 * h;
                let q = pdf(z, 1.0);
                q * (q / pdf(z, 0.0)).ln() * h
            })
            .sum();
        assert!((kl - 0.5).abs() < 1e-9, "{kl}");
    }

    #[test]
    fn identity_decoder_requires_matching_dims() {
        let cfg = UpperConfig::new(1.0, 2);
        assert!(UpperBoundModel::new(3, &cfg).is_err());
        let cfg = UpperConfig {
            prior: PriorSpec::flow(),
            decoder: DecoderSpec::Mlp {
                hidden: vec![8],
                activation: Activation::Softplus,
            },
            ..UpperConfig::new(1.0, 2)
        };
        assert!(UpperBoundModel::new(3, &cfg).is_ok());
    }

    #[test]
    fn bad_batch_width_is_error() {
        let model = model_1d();
        let mut tape = Tape::new();
        let x = Tensor::zeros(2, 3);
        assert!(model.nelbo(&mut tape, &x, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
