use serde::{Deserialize, Serialize};

use super::gamma::Mixture;
use super::{LogU, LowerError};
use crate::autodiff::Tensor;

/// Which mixture centroids start a climb.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CkMode {
    /// Every centroid.
    Full,
    /// The `t` centroids with the largest `gamma_k`.
    TopT(usize),
}

/// Gradient ascent on `log gamma_k` with backtracking.
///
/// Each iteration starts from step `1 / (2 lambda)` (the mean-shift step),
/// halves it until the objective strictly improves, and stops a climb once
/// `step * |grad| < tol`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HillClimb {
    pub max_iter: usize,
    pub tol: f64,
    /// Climbs closer than `merge_radius / sqrt(2 lambda)` are merged into the
    /// one with the larger objective. Zero disables merging.
    pub merge_radius: f64,
}

impl Default for HillClimb {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-9,
            merge_radius: 1e-3,
        }
    }
}

/// Result of maximizing `gamma_k` over `x_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkEstimate {
    pub log_ck: f64,
    pub argmax: Vec<f64>,
    pub starts_used: usize,
    /// False if any surviving climb hit `max_iter`.
    pub converged: bool,
}

impl CkEstimate {
    pub fn ck(&self) -> f64 {
        self.log_ck.exp()
    }
}

struct Climber {
    x: Vec<f64>,
    value: f64,
    mean: Vec<f64>,
    active: bool,
    converged: bool,
    trace: Vec<f64>,
}

/// Terminal state of one climb.
#[derive(Clone, Debug, PartialEq)]
pub struct Climb {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    /// Objective after every accepted step, starting with the start value.
    pub trace: Vec<f64>,
}

/// Climbs from each of `starts` together, batching the mixture evaluations.
pub fn climb(mix: &Mixture, starts: &[Vec<f64>], cfg: &HillClimb) -> Vec<Climb> {
    let n = mix.dim();
    if starts.is_empty() {
        return Vec::new();
    }
    let flat: Vec<f64> = starts.concat();
    let (values, means) = mix.eval_batch(&flat);
    let mut cs: Vec<Climber> = starts
        .iter()
        .enumerate()
        .map(|(i, s)| Climber {
            x: s.clone(),
            value: values[i],
            mean: means[i * n..(i + 1) * n].to_vec(),
            active: values[i].is_finite(),
            converged: false,
            trace: vec![values[i]],
        })
        .collect();
    let step0 = if mix.lambda > 0.0 { 0.5 / mix.lambda } else { 0.0 };
    let radius = if mix.lambda > 0.0 {
        cfg.merge_radius / (2.0 * mix.lambda).sqrt()
    } else {
        0.0
    };
    if mix.lambda == 0.0 {
        // gamma_k is constant in x_hat.
        cs.iter_mut().for_each(|c| {
            c.active = false;
            c.converged = true;
        });
    }
    for iter in 0..cfg.max_iter {
        if radius > 0.0 && (iter & (iter.wrapping_sub(1))) == 0 {
            merge(&mut cs, radius);
        }
        let mut pending: Vec<usize> = (0..cs.len()).filter(|&i| cs[i].active).collect();
        if pending.is_empty() {
            break;
        }
        // Gradient is 2 lambda (mean - x); proposals are x + step * gradient.
        let grads: Vec<Vec<f64>> = pending
            .iter()
            .map(|&i| cs[i].mean.iter().zip(&cs[i].x).map(|(m, x)| 2.0 * mix.lambda * (m - x)).collect())
            .collect();
        let gnorm: Vec<f64> = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let mut slot: Vec<usize> = (0..pending.len()).collect();
        let mut step = step0;
        while !pending.is_empty() {
            let mut keep = Vec::new();
            let mut keep_slot = Vec::new();
            for (&i, &s) in pending.iter().zip(&slot) {
                if step * gnorm[s] < cfg.tol {
                    cs[i].active = false;
                    cs[i].converged = true;
                } else {
                    keep.push(i);
                    keep_slot.push(s);
                }
            }
            pending = keep;
            slot = keep_slot;
            if pending.is_empty() {
                break;
            }
            let proposals: Vec<f64> = pending
                .iter()
                .zip(&slot)
                .flat_map(|(&i, &s)| cs[i].x.iter().zip(&grads[s]).map(|(x, g)| x + step * g).collect::<Vec<_>>())
                .collect();
            let (pv, pm) = mix.eval_batch(&proposals);
            let mut retry = Vec::new();
            let mut retry_slot = Vec::new();
            for (j, (&i, &s)) in pending.iter().zip(&slot).enumerate() {
                if pv[j] > cs[i].value {
                    let c = &mut cs[i];
                    c.x.copy_from_slice(&proposals[j * n..(j + 1) * n]);
                    c.value = pv[j];
                    c.mean.copy_from_slice(&pm[j * n..(j + 1) * n]);
                    c.trace.push(pv[j]);
                } else {
                    retry.push(i);
                    retry_slot.push(s);
                }
            }
            pending = retry;
            slot = retry_slot;
            step *= 0.5;
        }
    }
    cs.into_iter()
        .map(|c| Climb {
            x: c.x,
            value: c.value,
            converged: c.converged || !c.active,
            trace: c.trace,
        })
        .collect()
}

/// Deactivates climbers within `radius` of an active climber with a larger value.
fn merge(cs: &mut [Climber], radius: f64) {
    let mut order: Vec<usize> = (0..cs.len()).filter(|&i| cs[i].active).collect();
    order.sort_by(|&a, &b| cs[b].value.total_cmp(&cs[a].value));
    let r2 = radius * radius;
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for &i in &order {
        let close = kept.iter().any(|&j| {
            cs[i].x.iter().zip(&cs[j].x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2
        });
        if close {
            cs[i].active = false;
            cs[i].converged = true;
        } else {
            kept.push(i);
        }
    }
}

/// `C_k` of a mixture: climbs from the selected centroids and keeps the best end point.
pub fn compute_ck_mixture(mix: &Mixture, mode: CkMode, cfg: &HillClimb) -> Result<CkEstimate, LowerError> {
    let c = mix.components();
    let starts: Vec<usize> = match mode {
        CkMode::Full => (0..c).collect(),
        CkMode::TopT(t) => {
            if t == 0 {
                return Err(LowerError::Invalid("top-t needs t >= 1".into()));
            }
            if t >= c {
                (0..c).collect()
            } else {
                let values = mix.values_at_centroids();
                let mut idx: Vec<usize> = (0..c).collect();
                idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
                idx.truncate(t);
                idx
            }
        }
    };
    let points: Vec<Vec<f64>> = starts.iter().map(|&i| mix.centroid(i).to_vec()).collect();
    let climbs = climb(mix, &points, cfg);
    let best = climbs
        .iter()
        .filter(|c| c.value.is_finite())
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or(LowerError::NonFinite {
            term: "C_k (every climb diverged)",
            value: f64::NAN,
        })?;
    Ok(CkEstimate {
        log_ck: best.value,
        argmax: best.x.clone(),
        starts_used: starts.len(),
        converged: climbs.iter().all(|c| c.converged),
    })
}

/// `C_k` for the samples `xs` (`k x n`) under `u`.
pub fn compute_ck(
    u: &impl LogU,
    xs: &Tensor,
    lambda: f64,
    mode: CkMode,
    cfg: &HillClimb,
) -> Result<CkEstimate, LowerError> {
    let log_u = u.log_u(xs)?;
    compute_ck_mixture(&Mixture::new(xs, &log_u, lambda)?, mode, cfg)
}
