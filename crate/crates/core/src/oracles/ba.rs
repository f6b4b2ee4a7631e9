use serde::{Deserialize, Serialize};

use super::{OracleError, RdPoint};
use crate::autodiff::log_sum_exp;
use crate::sources::DistortionMetric;

/// A test channel `Q(x_hat | x)` with its output marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteChannel {
    /// `|X| x |X_hat|`, rows sum to one.
    pub conditional: Vec<Vec<f64>>,
    pub marginal: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaConfig {
    /// Stop once one sweep lowers the Lagrangian by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaSolution {
    pub point: RdPoint,
    pub channel: DiscreteChannel,
    pub converged: bool,
    pub iterations: usize,
    /// Final value of `sum_x p(x) KL(Q(.|x) || q) + lambda E[rho]`.
    pub lagrangian: f64,
    /// False if any sweep increased the Lagrangian beyond rounding.
    pub monotone: bool,
}

/// Blahut-Arimoto for the Lagrangian at slope `lambda`, in the log domain.
///
/// Starts from a uniform output marginal and alternates the two closed-form
/// minimizations until the Lagrangian stops decreasing by `tol`.
pub fn ba_solve(
    pmf: &[f64],
    support: &[Vec<f64>],
    reproduction: &[Vec<f64>],
    metric: DistortionMetric,
    lambda: f64,
    cfg: &BaConfig,
) -> Result<BaSolution, OracleError> {
    if pmf.len() != support.len() || pmf.is_empty() || reproduction.is_empty() {
        return Err(OracleError::Invalid(format!(
            "{} probabilities, {} support points, {} reproduction points",
            pmf.len(),
            support.len(),
            reproduction.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(OracleError::Invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if pmf.iter().any(|&p| !(p >= 0.0)) || (pmf.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(OracleError::Invalid("pmf must be nonnegative and sum to 1".into()));
    }
    let nx = support.len();
    let ny = reproduction.len();
    let mut cost = vec![0.0; nx * ny];
    for (i, x) in support.iter().enumerate() {
        for (j, y) in reproduction.iter().enumerate() {
            cost[i * ny + j] = metric.distortion(x, y)?;
        }
    }

    let mut log_q = vec![-(ny as f64).ln(); ny];
    let mut log_cond = vec![0.0; nx * ny];
    let mut scratch = vec![0.0; ny];
    let mut prev = f64::INFINITY;
    let mut lagrangian = f64::INFINITY;
    let mut converged = false;
    let mut monotone = true;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        // Q(y|x) proportional to q(y) exp(-lambda rho(x, y))
        for i in 0..nx {
            for j in 0..ny {
                scratch[j] = log_q[j] - lambda * cost[i * ny + j];
            }
            let z = log_sum_exp(&scratch);
            for j in 0..ny {
                log_cond[i * ny + j] = scratch[j] - z;
            }
        }
        // q(y) = sum_x p(x) Q(y|x)
        for j in 0..ny {
            let mass: f64 = (0..nx).map(|i| pmf[i] * log_cond[i * ny + j].exp()).sum();
            log_q[j] = mass.ln();
        }
        let (rate, dist) = rate_and_distortion(pmf, &log_cond, &log_q, &cost, ny);
        lagrangian = rate + lambda * dist;
        if lagrangian > prev + 1e-12 * prev.abs().max(1.0) {
            monotone = false;
        }
        if prev - lagrangian < cfg.tol {
            converged = true;
            break;
        }
        prev = lagrangian;
    }
    debug_assert!(monotone, "Blahut-Arimoto Lagrangian increased");

    let (rate, distortion) = rate_and_distortion(pmf, &log_cond, &log_q, &cost, ny);
    let channel = DiscreteChannel {
        conditional: (0..nx)
            .map(|i| (0..ny).map(|j| log_cond[i * ny + j].exp()).collect())
            .collect(),
        marginal: log_q.iter().map(|l| l.exp()).collect(),
    };
    Ok(BaSolution {
        point: RdPoint::new(distortion, rate.max(0.0)).with_lambda(lambda),
        channel,
        converged,
        iterations,
        lagrangian,
        monotone,
    })
}

/// `(sum_x p(x) KL(Q(.|x) || q), E[rho])` with `0 log 0 = 0`.
fn rate_and_distortion(pmf: &[f64], log_cond: &[f64], log_q: &[f64], cost: &[f64], ny: usize) -> (f64, f64) {
    let mut rate = 0.0;
    let mut dist = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for j in 0..ny {
            let lc = log_cond[i * ny + j];
            if lc == f64::NEG_INFINITY {
                continue;
            }
            let c = lc.exp();
            if c == 0.0 {
                continue;
            }
            rate += p * c * (lc - log_q[j]);
            dist += p * c * cost[i * ny + j];
        }
    }
    (rate, dist)
}

/// Solve for the slope whose Blahut-Arimoto point has distortion `target`,
/// by bisection on `ln lambda`.
pub fn ba_for_distortion(
    pmf: &[f64],
    support: &[Vec<f64>],
    reproduction: &[Vec<f64>],
    metric: DistortionMetric,
    target: f64,
    cfg: &BaConfig,
) -> Result<BaSolution, OracleError> {
    let at = |lambda: f64| ba_solve(pmf, support, reproduction, metric, lambda, cfg);
    let zero = at(0.0)?;
    if target >= zero.point.distortion {
        return Ok(zero);
    }
    let (mut lo, mut hi) = (-12.0f64, 1.0f64);
    while at(hi.exp())?.point.distortion > target {
        hi += 2.0;
        if hi > 12.0 {
            break;
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if at(mid.exp())?.point.distortion > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    at(hi.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::binary_rd;

    fn bernoulli(p: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        (vec![1.0 - p, p], vec![vec![0.0], vec![1.0]])
    }

    fn tight() -> BaConfig {
        BaConfig {
            tol: 1e-15,
            max_iter: 200_000,
        }
    }

    #[test]
    fn lambda_zero_has_zero_rate() {
        let (pmf, sup) = bernoulli(0.3);
        let s = ba_solve(&pmf, &sup, &sup, DistortionMetric::Hamming, 0.0, &tight()).unwrap();
        assert!(s.converged);
        assert!(s.point.rate.abs() < 1e-15);
        for row in &s.channel.conditional {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn large_lambda_is_lossless() {
        let (pmf, sup) = bernoulli(0.5);
        let s = ba_solve(&pmf, &sup, &sup, DistortionMetric::Hamming, 40.0, &tight()).unwrap();
        assert!((s.point.rate - 2f64.ln()).abs() < 1e-12);
        assert!(s.point.distortion < 1e-15);
    }

    #[test]
    fn hits_binary_rd_at_target() {
        let (pmf, sup) = bernoulli(0.5);
        let s = ba_for_distortion(&pmf, &sup, &sup, DistortionMetric::Hamming, 0.1, &tight()).unwrap();
        assert!((s.point.distortion - 0.1).abs() < 1e-9);
        let expect = 0.368_064_207_168_497_1; // ln 2 - H_b(0.1)
        assert!((s.point.rate - expect).abs() < 1e-8, "{}", s.point.rate);
        assert!((binary_rd(0.5, 0.1) - expect).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_never_increases() {
        let pmf = vec![0.1, 0.2, 0.3, 0.4];
        let sup: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        for lambda in [0.1, 0.7, 2.0, 9.0] {
            let s = ba_solve(&pmf, &sup, &sup, DistortionMetric::SquaredError, lambda, &tight()).unwrap();
            assert!(s.monotone);
            let m = &s.channel.marginal;
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (pmf, sup) = bernoulli(0.5);
        assert!(ba_solve(&pmf, &sup, &sup, DistortionMetric::Hamming, -1.0, &tight()).is_err());
        assert!(ba_solve(&[0.5, 0.6], &sup, &sup, DistortionMetric::Hamming, 1.0, &tight()).is_err());
    }
}
