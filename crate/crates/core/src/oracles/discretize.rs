use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::sources::Source;

pub const MAX_GRID_CELLS: usize = 1_000_000;

/// Uniform grid over `[lo, hi]^n` with `bins` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub samples: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            bins,
            samples: 1_000_000,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width()
    }

    fn bin(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        Some((((v - self.lo) / self.width()) as usize).min(self.bins - 1))
    }
}

/// Histogram `grid.samples` draws of a source of dimension at most 2 into a
/// tabular source over the occupied cell centres.
///
/// Draws outside the grid are dropped and the pmf renormalized, so the tails
/// beyond `[lo, hi]` are lost; rates at large distortion come out low.
pub fn discretize(source: &Source, grid: &GridSpec) -> Result<Source, OracleError> {
    let n = source.dimension();
    if n == 0 || n > 2 {
        return Err(OracleError::Invalid(format!("discretize supports dimension 1 or 2, got {n}")));
    }
    if !(grid.hi > grid.lo) || grid.bins == 0 || grid.samples == 0 {
        return Err(OracleError::Invalid("grid needs hi > lo, bins > 0, samples > 0".into()));
    }
    let cells = grid.bins.checked_pow(n as u32).unwrap_or(usize::MAX);
    if cells > MAX_GRID_CELLS {
        return Err(OracleError::GridTooLarge {
            cells,
            limit: MAX_GRID_CELLS,
        });
    }
    let mut counts = vec![0u64; cells];
    let chunk = 100_000;
    let mut done = 0;
    while done < grid.samples {
        let take = chunk.min(grid.samples - done);
        let batch = source.sample_at(done as u64, take)?;
        for i in 0..take {
            let row = batch.row(i);
            let mut idx = 0;
            let mut inside = true;
            for &v in row {
                match grid.bin(v) {
                    Some(b) => idx = idx * grid.bins + b,
                    None => {
                        inside = false;
                        break;
                    }
                }
            }
            if inside {
                counts[idx] += 1;
            }
        }
        done += take;
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(OracleError::Invalid("no draws fell inside the grid".into()));
    }
    let mut support = Vec::new();
    let mut pmf = Vec::new();
    for (idx, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let point = if n == 1 {
            vec![grid.center(idx)]
        } else {
            vec![grid.center(idx / grid.bins), grid.center(idx % grid.bins)]
        };
        support.push(point);
        pmf.push(c as f64 / total as f64);
    }
    // Exact renormalization so the pmf check in the source constructor holds.
    let s: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= s);
    let drift = 1.0 - pmf.iter().sum::<f64>();
    if let Some(max) = pmf.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += drift;
    }
    Ok(Source::discrete(support, pmf, source.seed())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::SourceKind;

    #[test]
    fn point_mass_is_preserved() {
        let s = Source::discrete(vec![vec![0.25]], vec![1.0], 3).unwrap();
        let d = discretize(&s, &GridSpec::new(-1.0, 1.0, 4).with_samples(1000)).unwrap();
        let SourceKind::DiscreteTabular { support, pmf } = d.kind() else { panic!() };
        assert_eq!(pmf, &vec![1.0]);
        assert_eq!(support, &vec![vec![0.25]]);
    }

    #[test]
    fn banana_grid_normalizes() {
        let s = Source::default_banana(5);
        let d = discretize(&s, &GridSpec::new(-8.0, 8.0, 64).with_samples(200_000)).unwrap();
        let SourceKind::DiscreteTabular { pmf, .. } = d.kind() else { panic!() };
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_grid_rejected() {
        let s = Source::default_banana(5);
        assert!(matches!(
            discretize(&s, &GridSpec::new(-1.0, 1.0, 1001)),
            Err(OracleError::GridTooLarge { .. })
        ));
        let s3 = Source::standard_gaussian(3, 0).unwrap();
        assert!(discretize(&s3, &GridSpec::new(-1.0, 1.0, 4)).is_err());
    }
}
