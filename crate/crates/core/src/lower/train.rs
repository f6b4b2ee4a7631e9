use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ck::{compute_ck_mixture, CkEstimate, CkMode, HillClimb};
use super::envelope::EnvelopeLine;
use super::gamma::Mixture;
use super::{LogU, LowerBoundModel, LowerConfig, LowerError};
use crate::autodiff::{log_sum_exp, AdamConfig, Tape, Tensor, Var};
use crate::sources::{mix_seed, BatchStream, Source};
use crate::stats::Summary;

const SALT_TRAIN_DATA: u64 = 1;
const SALT_EVAL: u64 = 5;

/// Exponential moving average of `E[C_k]`, kept as `log alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaTracker {
    log_alpha: Option<f64>,
    /// Weight on the new estimate: `alpha <- (1 - ema) alpha + ema E`.
    pub ema: f64,
}

impl AlphaTracker {
    pub fn new(ema: f64) -> Self {
        Self { log_alpha: None, ema }
    }

    pub fn log_alpha(&self) -> Option<f64> {
        self.log_alpha
    }

    pub fn is_seeded(&self) -> bool {
        self.log_alpha.is_some()
    }

    pub fn seed(&mut self, log_e: f64) {
        self.log_alpha = Some(log_e);
    }

    /// Blends in a new estimate `log E`; the first call seeds.
    pub fn update(&mut self, log_e: f64) {
        self.log_alpha = Some(match self.log_alpha {
            None => log_e,
            Some(la) => log_sum_exp(&[(1.0 - self.ema).ln() + la, self.ema.ln() + log_e]),
        });
    }
}

/// The linearized objective for one step and the draws behind it.
#[derive(Clone, Debug)]
pub struct ObjectiveTerms {
    pub objective: Var,
    pub mean_neg_log_u: f64,
    pub log_alpha: f64,
    /// `log C_k` per draw.
    pub log_ck: Vec<f64>,
    /// `log` of the mean of the draws' `C_k`.
    pub log_mean_ck: f64,
    pub estimates: Vec<CkEstimate>,
}

/// Records `E[-log u] - E[C_k] / alpha - log alpha + 1` over `batches`
/// (each `k x n`) on `tape`.
///
/// `C_k` enters through `gamma_k` at its frozen argmax, so gradients reach
/// `theta` only. An unseeded `alpha` is seeded with this step's mean `C_k`;
/// the moving-average update is left to the caller, after the parameter step.
pub fn lower_objective(
    model: &mut LowerBoundModel,
    tape: &mut Tape,
    batches: &[Tensor],
    mode: CkMode,
    climb: &HillClimb,
) -> Result<ObjectiveTerms, LowerError> {
    let m = batches.len();
    if m == 0 {
        return Err(LowerError::Invalid("need at least one batch".into()));
    }
    let (k, n) = batches[0].dims2()?;
    if k == 0 || batches.iter().any(|b| b.dims2().ok() != Some((k, n))) {
        return Err(LowerError::Invalid("batches must be nonempty and share one shape".into()));
    }
    let mut all = Vec::with_capacity(m * k * n);
    for b in batches {
        all.extend_from_slice(b.data());
    }
    let xs = Tensor::matrix(m * k, n, all)?;
    let xv = tape.constant(xs.clone());
    let lu = model.log_u.forward(tape, &model.params, xv)?;
    let lu_vals = tape.value(lu).data().to_vec();

    let mut estimates = Vec::with_capacity(m);
    for (j, b) in batches.iter().enumerate() {
        let mix = Mixture::new(b, &lu_vals[j * k..(j + 1) * k], model.lambda)?;
        estimates.push(compute_ck_mixture(&mix, mode, climb)?);
    }
    let log_ck: Vec<f64> = estimates.iter().map(|e| e.log_ck).collect();
    let log_mean_ck = log_sum_exp(&log_ck) - (m as f64).ln();
    if !model.alpha.is_seeded() {
        model.alpha.seed(log_mean_ck);
    }
    let log_alpha = model.alpha.log_alpha().expect("seeded");

    let mut dist = Vec::with_capacity(m * k);
    for (j, e) in estimates.iter().enumerate() {
        for i in 0..k {
            let row = &xs.data()[(j * k + i) * n..(j * k + i + 1) * n];
            dist.push(row.iter().zip(&e.argmax).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        }
    }
    let kernel = tape.constant(Tensor::matrix(m * k, 1, dist)?.map(|d| -model.lambda * d));
    let s = tape.sub(kernel, lu)?;
    let s = tape.reshape(s, m, k)?;
    let lg = tape.logsumexp(s, 1)?;
    let shifted = tape.add_scalar(lg, -(k as f64).ln() - log_alpha);
    let ratio = tape.exp(shifted);
    let ratio = tape.mean(ratio)?;
    let neg = tape.neg(lu);
    let mean_neg = tape.mean(neg)?;
    let obj = tape.sub(mean_neg, ratio)?;
    let objective = tape.add_scalar(obj, 1.0 - log_alpha);

    let mean_neg_log_u = tape.value(mean_neg).item();
    for (term, v) in [
        ("E[-log u]", mean_neg_log_u),
        ("E[C_k]/alpha", tape.value(ratio).item()),
        ("objective", tape.value(objective).item()),
    ] {
        if !v.is_finite() {
            return Err(LowerError::NonFinite { term, value: v });
        }
    }
    Ok(ObjectiveTerms {
        objective,
        mean_neg_log_u,
        log_alpha,
        log_ck,
        log_mean_ck,
        estimates,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerTraceRow {
    pub step: usize,
    pub objective: f64,
    pub mean_neg_log_u: f64,
    pub log_alpha: f64,
    pub log_mean_ck: f64,
}

/// Final intercept: `m_eval` draws of
/// `xi = mean(-log u) - C_k / alpha - log alpha + 1`, with `alpha` the mean of
/// another `m_eval` independent draws of `C_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterceptEstimate {
    pub lambda: f64,
    pub k: usize,
    pub log_alpha: f64,
    pub xi: Summary,
    /// `mu_xi - 1.282 s_xi / sqrt(m_eval)`.
    pub lcb: f64,
    pub log_ck: Vec<f64>,
    pub climbs_converged: bool,
}

impl InterceptEstimate {
    /// `ln k`, the ceiling on the objective when the mixture components do not overlap.
    pub fn ln_k(&self) -> f64 {
        (self.k as f64).ln()
    }
}

#[derive(Clone, Debug)]
pub struct LowerRun {
    pub model: LowerBoundModel,
    pub trace: Vec<LowerTraceRow>,
    pub converged: bool,
    pub estimate: InterceptEstimate,
}

/// Gradient ascent on the linearized objective with top-t climbs, then a
/// full-climb evaluation of the intercept.
pub fn train_lower_bound(source: &Source, cfg: &LowerConfig) -> Result<LowerRun, LowerError> {
    let mut model = LowerBoundModel::new(source.dimension(), cfg)?;
    let mut stream = BatchStream::new(source, mix_seed(cfg.seed, SALT_TRAIN_DATA));
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batches = (0..cfg.m)
            .map(|_| stream.next_batch(cfg.k))
            .collect::<Result<Vec<_>, _>>()?;
        let mut tape = Tape::new();
        let terms = match lower_objective(&mut model, &mut tape, &batches, CkMode::TopT(cfg.top_t), &cfg.climb) {
            Ok(t) => t,
            Err(e) => {
                return Err(LowerError::Diverged {
                    step,
                    cause: e.to_string(),
                    trace,
                })
            }
        };
        let loss = tape.scale(terms.objective, -1.0);
        let grads = tape.backward(loss)?;
        model.params.adam_step(grads.params(), &adam)?;
        model.alpha.update(terms.log_mean_ck);
        trace.push(LowerTraceRow {
            step,
            objective: tape.value(terms.objective).item(),
            mean_neg_log_u: terms.mean_neg_log_u,
            log_alpha: terms.log_alpha,
            log_mean_ck: terms.log_mean_ck,
        });
    }
    let converged = objective_converged(&trace, cfg.convergence_window, cfg.convergence_tol);
    let estimate = evaluate_intercept(&model, source, cfg.lambda, cfg.k, cfg.m_eval, cfg.seed, &cfg.climb)?;
    Ok(LowerRun {
        model,
        trace,
        converged,
        estimate,
    })
}

fn objective_converged(trace: &[LowerTraceRow], window: usize, tol: f64) -> bool {
    let w = window.min(trace.len() / 2);
    if w == 0 {
        return false;
    }
    let mean = |rows: &[LowerTraceRow]| rows.iter().map(|r| r.objective).sum::<f64>() / rows.len() as f64;
    let n = trace.len();
    let (last, prev) = (mean(&trace[n - w..]), mean(&trace[n - 2 * w..n - w]));
    (last - prev).abs() <= tol * prev.abs().max(1.0)
}

fn full_ck_draws(
    u: &impl LogU,
    batches: &[Tensor],
    lambda: f64,
    climb: &HillClimb,
) -> Result<Vec<(CkEstimate, f64)>, LowerError> {
    batches
        .par_iter()
        .map(|b| {
            let lu = u.log_u(b)?;
            let mean_neg = -lu.iter().sum::<f64>() / lu.len() as f64;
            let est = compute_ck_mixture(&Mixture::new(b, &lu, lambda)?, CkMode::Full, climb)?;
            Ok((est, mean_neg))
        })
        .collect()
}

/// Reported intercept for a fixed `u`, with full climbs on fresh draws.
pub fn evaluate_intercept(
    u: &impl LogU,
    source: &Source,
    lambda: f64,
    k: usize,
    m_eval: usize,
    seed: u64,
    climb: &HillClimb,
) -> Result<InterceptEstimate, LowerError> {
    if m_eval < 2 || k == 0 {
        return Err(LowerError::Invalid("need m_eval >= 2 and k >= 1".into()));
    }
    let mut stream = BatchStream::new(source, mix_seed(seed, SALT_EVAL));
    let mut draw = |count: usize| (0..count).map(|_| stream.next_batch(k)).collect::<Result<Vec<_>, _>>();
    let alpha_batches = draw(m_eval)?;
    let xi_batches = draw(m_eval)?;

    let alpha_draws = full_ck_draws(u, &alpha_batches, lambda, climb)?;
    let log_alpha =
        log_sum_exp(&alpha_draws.iter().map(|(e, _)| e.log_ck).collect::<Vec<_>>()) - (m_eval as f64).ln();
    let xi_draws = full_ck_draws(u, &xi_batches, lambda, climb)?;
    let xi: Vec<f64> = xi_draws
        .iter()
        .map(|(e, neg)| neg - (e.log_ck - log_alpha).exp() - log_alpha + 1.0)
        .collect();
    let summary = Summary::of(&xi);
    if !summary.mean.is_finite() {
        return Err(LowerError::NonFinite {
            term: "intercept",
            value: summary.mean,
        });
    }
    let ln_k = (k as f64).ln();
    if summary.mean > ln_k + 1e-6 {
        log::warn!("intercept {:.4} exceeds ln k = {:.4}", summary.mean, ln_k);
    }
    Ok(InterceptEstimate {
        lambda,
        k,
        log_alpha,
        xi: summary,
        lcb: summary.lcb90(),
        log_ck: xi_draws.iter().map(|(e, _)| e.log_ck).collect(),
        climbs_converged: alpha_draws.iter().chain(&xi_draws).all(|(e, _)| e.converged),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerSweepPoint {
    pub seed: u64,
    pub estimate: InterceptEstimate,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerSweepFailure {
    pub lambda: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerSweep {
    /// Sorted by `lambda`.
    pub points: Vec<LowerSweepPoint>,
    pub failures: Vec<LowerSweepFailure>,
}

impl LowerSweep {
    /// Lines with the 90% lower confidence intercepts.
    pub fn lines(&self) -> Vec<EnvelopeLine> {
        self.points
            .iter()
            .map(|p| EnvelopeLine {
                lambda: p.estimate.lambda,
                intercept: p.estimate.lcb,
            })
            .collect()
    }
}

/// Trains one `log u` per `lambda` on `jobs` worker threads; job `i` uses
/// seed `mix_seed(cfg.seed, 100 + i)`.
pub fn sweep_lower(source: &Source, lambdas: &[f64], cfg: &LowerConfig, jobs: usize) -> Result<LowerSweep, LowerError> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(LowerError::Invalid("lambda list must be nonempty and positive".into()));
    }
    let run_one = |(i, &lambda): (usize, &f64)| {
        let seed = mix_seed(cfg.seed, 100 + i as u64);
        let job = LowerConfig {
            lambda,
            seed,
            ..cfg.clone()
        };
        train_lower_bound(source, &job)
            .map(|run| LowerSweepPoint {
                seed,
                estimate: run.estimate,
                converged: run.converged,
            })
            .map_err(|e| LowerSweepFailure {
                lambda,
                seed,
                error: e.to_string(),
            })
    };
    let results: Vec<_> = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LowerError::Invalid(e.to_string()))?
        .install(|| lambdas.par_iter().enumerate().map(run_one).collect());
    let (mut points, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(f) => failures.push(f),
        }
    }
    points.sort_by(|a, b| a.estimate.lambda.total_cmp(&b.estimate.lambda));
    Ok(LowerSweep { points, failures })
}

/// Monte Carlo mean of `C_k` for each `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkRow {
    pub k: usize,
    pub trials: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Estimates `E[C_k]` for a fixed `u` at each `k` in `ks` (increasing).
pub fn ck_monotonicity_check(
    u: &impl LogU,
    source: &Source,
    lambda: f64,
    ks: &[usize],
    trials: usize,
    seed: u64,
    climb: &HillClimb,
) -> Result<Vec<CkRow>, LowerError> {
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
        return Err(LowerError::Invalid("k list must be positive and strictly increasing".into()));
    }
    if trials < 2 {
        return Err(LowerError::Invalid("need at least two trials".into()));
    }
    ks.iter()
        .enumerate()
        .map(|(idx, &k)| {
            let mut stream = BatchStream::new(source, mix_seed(seed, 1000 + idx as u64));
            let batches = (0..trials).map(|_| stream.next_batch(k)).collect::<Result<Vec<_>, _>>()?;
            let draws = full_ck_draws(u, &batches, lambda, climb)?;
            let cks: Vec<f64> = draws.iter().map(|(e, _)| e.ck()).collect();
            let s = Summary::of(&cks);
            Ok(CkRow {
                k,
                trials,
                mean: s.mean,
                std_error: s.std_error(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::ConstantU;

    #[test]
    fn alpha_moves_toward_estimate() {
        let mut a = AlphaTracker::new(0.8);
        a.update(0.0);
        assert_eq!(a.log_alpha(), Some(0.0));
        a.update(1.0);
        let expect = (0.2 + 0.8 * 1f64.exp()).ln();
        assert!((a.log_alpha().unwrap() - expect).abs() < 1e-15);
        assert!(a.log_alpha().unwrap() > 0.0 && a.log_alpha().unwrap() < 1.0);
    }

    #[test]
    fn lambda_zero_fixed_point() {
        let cfg = LowerConfig {
            hidden: vec![3],
            ..LowerConfig::new(1.0, 4)
        };
        let mut model = LowerBoundModel::new(1, &cfg).unwrap();
        model.lambda = 0.0;
        for name in ["logu.l0.w", "logu.l1.w"] {
            model.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        model.alpha.seed(0.0);
        let b = Tensor::column(&[0.1, 0.5, -2.0, 3.0]);
        let mut tape = Tape::new();
        let t = lower_objective(&mut model, &mut tape, &[b], CkMode::Full, &HillClimb::default()).unwrap();
        assert!(tape.value(t.objective).item().abs() < 1e-15);
        assert!(t.log_ck[0].abs() < 1e-15);
    }

    #[test]
    fn tangent_at_the_mean() {
        let cfg = LowerConfig {
            hidden: vec![5],
            ..LowerConfig::new(2.0, 16)
        };
        let src = Source::standard_gaussian(2, 1).unwrap();
        let mut stream = BatchStream::new(&src, 0);
        let batches: Vec<Tensor> = (0..3).map(|_| stream.next_batch(16).unwrap()).collect();
        let mut model = LowerBoundModel::new(2, &cfg).unwrap();
        let mut tape = Tape::new();
        let t = lower_objective(&mut model, &mut tape, &batches, CkMode::Full, &HillClimb::default()).unwrap();
        let l_k = t.mean_neg_log_u - t.log_mean_ck;
        assert!((tape.value(t.objective).item() - l_k).abs() < 1e-12);
        // any other alpha gives a smaller value
        for shift in [-0.5, 0.3, 2.0] {
            let mut m2 = model.clone();
            m2.alpha.seed(t.log_mean_ck + shift);
            let mut tape2 = Tape::new();
            let t2 = lower_objective(&mut m2, &mut tape2, &batches, CkMode::Full, &HillClimb::default()).unwrap();
            assert!(tape2.value(t2.objective).item() < l_k);
        }
    }

    #[test]
    fn constant_u_at_lambda_zero_has_unit_ck() {
        let src = Source::discrete(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5], 2).unwrap();
        let rows = ck_monotonicity_check(&ConstantU(0.0), &src, 0.0, &[1, 2, 4], 10, 0, &HillClimb::default()).unwrap();
        for r in rows {
            assert!((r.mean - 1.0).abs() < 1e-15);
        }
    }
}
