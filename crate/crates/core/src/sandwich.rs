//! Upper and lower bounds on one shared distortion grid.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lower::{sweep_lower, EnvelopeLine, LowerConfig, LowerEnvelope, LowerError, LowerSweep};
use crate::oracles::RdPoint;
use crate::sources::Source;
use crate::upper::{sweep_upper, UpperConfig, UpperError, UpperSweep};

pub const DEFAULT_GRID_POINTS: usize = 100;

#[derive(Debug, Error)]
pub enum SandwichError {
    #[error(transparent)]
    Upper(#[from] UpperError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("nothing to compare: {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub distortion: f64,
    pub upper: f64,
    /// Half-width of the interpolated upper rate interval.
    pub upper_ci: f64,
    pub lower: f64,
    pub gap_nats: f64,
    pub gap_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// Sorted by distortion.
    pub upper: Vec<RdPoint>,
    pub lower: Vec<EnvelopeLine>,
    pub gap: Vec<GapRow>,
    pub warnings: Vec<String>,
}

/// Piecewise-linear upper curve through `points` (sorted by distortion), with
/// the interpolated rate half-width. `None` outside the covered range.
pub fn interpolate_upper(points: &[RdPoint], d: f64) -> Option<(f64, f64)> {
    let first = points.first()?;
    let last = points.last()?;
    if d < first.distortion || d > last.distortion {
        return None;
    }
    let j = points.partition_point(|p| p.distortion < d);
    if j == 0 {
        return Some((first.rate, first.rate_half_width()));
    }
    let (a, b) = (&points[j - 1], &points[j]);
    let span = b.distortion - a.distortion;
    let t = if span > 0.0 { (d - a.distortion) / span } else { 1.0 };
    Some((
        a.rate + t * (b.rate - a.rate),
        a.rate_half_width() + t * (b.rate_half_width() - a.rate_half_width()),
    ))
}

impl SandwichReport {
    /// Compares on `grid_points` evenly spaced distortions spanning the upper
    /// points, keeping those where the envelope is still positive.
    pub fn build(mut upper: Vec<RdPoint>, lower: Vec<EnvelopeLine>, grid_points: usize) -> Result<Self, SandwichError> {
        if upper.is_empty() {
            return Err(SandwichError::Empty("no upper-bound points".into()));
        }
        let envelope = LowerEnvelope::new(lower.clone())?;
        upper.sort_by(|a, b| a.distortion.total_cmp(&b.distortion));
        let (lo, hi) = (upper[0].distortion, upper[upper.len() - 1].distortion);
        let zero = envelope.zero_crossing();
        let mut warnings = Vec::new();
        if upper.len() < 2 {
            warnings.push("single upper point: gap table is degenerate".to_string());
        }
        let count = if hi > lo { grid_points.max(2) } else { 1 };
        let gap: Vec<GapRow> = (0..count)
            .map(|i| if count == 1 { lo } else { lo + (hi - lo) * i as f64 / (count - 1) as f64 })
            .filter(|&d| d <= zero)
            .filter_map(|d| {
                let (u, ci) = interpolate_upper(&upper, d)?;
                let l = envelope.eval(d);
                Some(GapRow {
                    distortion: d,
                    upper: u,
                    upper_ci: ci,
                    lower: l,
                    gap_nats: u - l,
                    gap_bits: (u - l) / std::f64::consts::LN_2,
                })
            })
            .collect();
        if gap.is_empty() {
            warnings.push(format!(
                "upper distortions [{lo:.4}, {hi:.4}] do not overlap the positive envelope (zero at {zero:.4})"
            ));
        }
        if let Some(r) = gap.iter().find(|r| r.gap_nats < -r.upper_ci) {
            warnings.push(format!(
                "lower envelope exceeds upper curve at D = {:.4} by {:.4} nats",
                r.distortion, -r.gap_nats
            ));
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Self {
            upper,
            lower,
            gap,
            warnings,
        })
    }

    pub fn mean_gap_nats(&self) -> Option<f64> {
        (!self.gap.is_empty()).then(|| self.gap.iter().map(|r| r.gap_nats).sum::<f64>() / self.gap.len() as f64)
    }

    pub fn mean_gap_bits(&self) -> Option<f64> {
        self.mean_gap_nats().map(|g| g / std::f64::consts::LN_2)
    }

    pub fn write_gap_csv<W: Write>(&self, w: W) -> Result<(), SandwichError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["D", "R_upper_nats", "R_upper_ci", "R_lower_nats", "gap_nats", "gap_bits"])?;
        for r in &self.gap {
            out.serialize((r.distortion, r.upper, r.upper_ci, r.lower, r.gap_nats, r.gap_bits))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Envelope values `(D, R_L)` on `points` evenly spaced distortions in `[0, d_max]`.
pub fn write_envelope_csv<W: Write>(lines: &[EnvelopeLine], d_max: f64, points: usize, w: W) -> Result<(), SandwichError> {
    let envelope = LowerEnvelope::new(lines.to_vec())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["D", "R_L"])?;
    let points = points.max(2);
    for i in 0..points {
        let d = d_max * i as f64 / (points - 1) as f64;
        out.serialize((d, envelope.eval(d)))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichRun {
    pub upper: UpperSweep,
    pub lower: LowerSweep,
    pub report: SandwichReport,
}

/// Runs both sweeps over `lambdas` and builds the report.
///
/// The per-model `lambda` fields of `upper_cfg` and `lower_cfg` are ignored.
pub fn run_sandwich(
    source: &Source,
    lambdas: &[f64],
    upper_cfg: &UpperConfig,
    lower_cfg: &LowerConfig,
    jobs: usize,
) -> Result<SandwichRun, SandwichError> {
    let upper = sweep_upper(source, lambdas, upper_cfg, jobs)?;
    let lower = sweep_lower(source, lambdas, lower_cfg, jobs)?;
    if lower.points.is_empty() {
        return Err(SandwichError::Empty("every lower-bound job failed".into()));
    }
    let report = SandwichReport::build(upper.rd_points(), lower.lines(), DEFAULT_GRID_POINTS)?;
    Ok(SandwichRun { upper, lower, report })
}
