use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::standard_normal;
use super::{UpperBoundModel, UpperConfig, UpperError};
use crate::autodiff::{AdamConfig, Tape};
use crate::oracles::RdPoint;
use crate::sources::{mix_seed, BatchStream, Source};
use crate::stats::Summary;

const SALT_TRAIN_DATA: u64 = 1;
const SALT_TRAIN_NOISE: u64 = 2;
const SALT_EVAL: u64 = 4;
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub rate: f64,
    pub distortion: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct UpperRun {
    pub model: UpperBoundModel,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Runs `cfg.steps` Adam steps on fresh batches.
///
/// Batches come from a stream derived from the source seed and `cfg.seed`, so
/// a run is a pure function of its inputs.
pub fn train_upper_bound(source: &Source, cfg: &UpperConfig) -> Result<UpperRun, UpperError> {
    let mut model = UpperBoundModel::new(source.dimension(), cfg)?;
    let mut data = BatchStream::new(source, mix_seed(cfg.seed, SALT_TRAIN_DATA));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SALT_TRAIN_NOISE));
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let x = data.next_batch(cfg.batch_size)?;
        let mut tape = Tape::new();
        let terms = match model.nelbo(&mut tape, &x, &mut rng) {
            Ok(t) => t,
            Err(e) => {
                return Err(UpperError::Diverged {
                    step,
                    cause: e.to_string(),
                    trace,
                })
            }
        };
        let row = TraceRow {
            step,
            rate: tape.value(terms.rate).item(),
            distortion: tape.value(terms.distortion).item(),
            loss: tape.value(terms.loss).item(),
        };
        let grads = tape.backward(terms.loss)?;
        trace.push(row);
        model.params.adam_step(grads.params(), &adam)?;
    }
    let converged = loss_converged(&trace, cfg.convergence_window, cfg.convergence_tol);
    Ok(UpperRun {
        model,
        trace,
        converged,
    })
}

/// Compares the mean loss of the trailing window with the window before it.
pub(crate) fn loss_converged(trace: &[TraceRow], window: usize, tol: f64) -> bool {
    let w = window.min(trace.len() / 2);
    if w == 0 {
        return false;
    }
    let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    let n = trace.len();
    let last = mean(&trace[n - w..]);
    let prev = mean(&trace[n - 2 * w..n - w]);
    (last - prev).abs() <= tol * prev.abs().max(1e-12)
}

/// Sample statistics of the rate and distortion variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdEvaluation {
    pub point: RdPoint,
    pub rate: Summary,
    pub distortion: Summary,
}

impl RdEvaluation {
    /// `lambda  mu_R  s_R  [lo, hi]  mu_D  s_D  [lo, hi]`.
    pub fn table_row(&self) -> String {
        let (rl, rh) = self.rate.ci95();
        let (dl, dh) = self.distortion.ci95();
        format!(
            "{:>10.4} {:>10.5} {:>10.5} [{:.5}, {:.5}] {:>10.5} {:>10.5} [{:.5}, {:.5}]",
            self.point.lambda.unwrap_or(f64::NAN),
            self.rate.mean,
            self.rate.std,
            rl,
            rh,
            self.distortion.mean,
            self.distortion.std,
            dl,
            dh
        )
    }
}

/// Draws `m_eval` fresh `(x, z)` pairs and reports `(mu_D, mu_R)` with 95% CIs.
pub fn evaluate_rd_point(
    model: &UpperBoundModel,
    source: &Source,
    m_eval: usize,
    seed: u64,
) -> Result<RdEvaluation, UpperError> {
    if m_eval < 30 {
        return Err(UpperError::Invalid(format!("m_eval must be at least 30, got {m_eval}")));
    }
    let mut data = BatchStream::new(source, mix_seed(seed, SALT_EVAL));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_EVAL + 1));
    let mut rates = Vec::with_capacity(m_eval);
    let mut dists = Vec::with_capacity(m_eval);
    let mut left = m_eval;
    while left > 0 {
        let take = left.min(EVAL_CHUNK);
        let x = data.next_batch(take)?;
        let eps = standard_normal(take, model.latent_dim, &mut rng);
        let s = model.rd_samples(&x, &eps)?;
        rates.extend(s.rate);
        dists.extend(s.distortion);
        left -= take;
    }
    let rate = Summary::of(&rates);
    let distortion = Summary::of(&dists);
    if !(rate.mean.is_finite() && distortion.mean.is_finite()) {
        return Err(UpperError::NonFinite {
            component: if rate.mean.is_finite() { "distortion" } else { "rate" },
            value: f64::NAN,
        });
    }
    let point = RdPoint {
        distortion: distortion.mean,
        rate: rate.mean,
        rate_ci: Some(rate.ci95()),
        distortion_ci: Some(distortion.ci95()),
        lambda: Some(model.lambda),
    };
    Ok(RdEvaluation {
        point,
        rate,
        distortion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub seed: u64,
    pub evaluation: RdEvaluation,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub lambda: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperSweep {
    /// Sorted by distortion.
    pub points: Vec<SweepPoint>,
    pub failures: Vec<SweepFailure>,
}

impl UpperSweep {
    pub fn rd_points(&self) -> Vec<RdPoint> {
        self.points.iter().map(|p| p.evaluation.point.clone()).collect()
    }
}

/// Trains one model per `lambda` on `jobs` worker threads.
///
/// Job `i` uses seed `mix_seed(cfg.seed, i)`, so results do not depend on
/// `jobs`. A failing job is recorded and the others continue.
pub fn sweep_upper(source: &Source, lambdas: &[f64], cfg: &UpperConfig, jobs: usize) -> Result<UpperSweep, UpperError> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(UpperError::Invalid("lambda list must be nonempty and positive".into()));
    }
    let run_one = |(i, &lambda): (usize, &f64)| {
        let seed = mix_seed(cfg.seed, 100 + i as u64);
        let job = UpperConfig {
            lambda,
            seed,
            ..cfg.clone()
        };
        let out = train_upper_bound(source, &job).and_then(|run| {
            let evaluation = evaluate_rd_point(&run.model, source, job.m_eval, seed)?;
            Ok(SweepPoint {
                seed,
                evaluation,
                converged: run.converged,
            })
        });
        out.map_err(|e| SweepFailure {
            lambda,
            seed,
            error: e.to_string(),
        })
    };
    let results: Vec<_> = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| UpperError::Invalid(e.to_string()))?
        .install(|| lambdas.par_iter().enumerate().map(run_one).collect());
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(f) => failures.push(f),
        }
    }
    points.sort_by(|a, b| a.evaluation.point.distortion.total_cmp(&b.evaluation.point.distortion));
    Ok(UpperSweep { points, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(losses: &[f64]) -> Vec<TraceRow> {
        losses
            .iter()
            .enumerate()
            .map(|(step, &loss)| TraceRow {
                step,
                rate: 0.0,
                distortion: 0.0,
                loss,
            })
            .collect()
    }

    #[test]
    fn convergence_window() {
        assert!(loss_converged(&rows(&[1.0; 20]), 5, 1e-3));
        let falling: Vec<f64> = (0..20).map(|i| 10.0 - i as f64).collect();
        assert!(!loss_converged(&rows(&falling), 5, 1e-3));
        assert!(!loss_converged(&rows(&[1.0]), 5, 1e-3));
    }

    #[test]
    fn short_run_is_deterministic() {
        let src = Source::diagonal_gaussian(vec![0.0, 0.0], vec![1.0, 0.5], 3).unwrap();
        let cfg = UpperConfig {
            encoder_hidden: vec![4],
            steps: 20,
            batch_size: 16,
            lr: 1e-2,
            m_eval: 64,
            ..UpperConfig::new(1.0, 2)
        };
        let a = train_upper_bound(&src, &cfg).unwrap();
        let b = train_upper_bound(&src, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model.params, b.model.params);
        let e = evaluate_rd_point(&a.model, &src, 64, 1).unwrap();
        let (lo, hi) = e.point.rate_ci.unwrap();
        assert!(lo <= e.point.rate && e.point.rate <= hi);
    }
}
