//! Sample summaries and large-sample confidence bounds.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95_TWO_SIDED: f64 = 1.96;
/// One-sided 90% normal quantile.
pub const Z90_ONE_SIDED: f64 = 1.282;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `count - 1`); zero for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                count,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { count, mean, std }
    }

    pub fn std_error(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }

    /// `mean -/+ 1.96 s / sqrt(m)`.
    pub fn ci95(&self) -> (f64, f64) {
        let h = Z95_TWO_SIDED * self.std_error();
        (self.mean - h, self.mean + h)
    }

    /// `mean - 1.282 s / sqrt(m)`.
    pub fn lcb90(&self) -> f64 {
        self.mean - Z90_ONE_SIDED * self.std_error()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let (lo, hi) = s.ci95();
        assert!((hi - lo - 2.0 * 1.96 * s.std / 2.0).abs() < 1e-12);
        assert!((s.lcb90() - (2.5 - 1.282 * s.std / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_width() {
        let s = Summary::of(&[0.5; 40]);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.ci95(), (0.5, 0.5));
        assert_eq!(Summary::of(&[3.0]).std, 0.0);
    }
}
