use serde::{Deserialize, Serialize};

use super::LowerError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeLine {
    pub lambda: f64,
    pub intercept: f64,
}

/// `R_L(D) = max(0, max_i intercept_i - lambda_i D)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerEnvelope {
    lines: Vec<EnvelopeLine>,
}

impl LowerEnvelope {
    pub fn new(lines: Vec<EnvelopeLine>) -> Result<Self, LowerError> {
        if lines.is_empty() {
            return Err(LowerError::Invalid("envelope needs at least one line".into()));
        }
        if lines.iter().any(|l| !(l.lambda >= 0.0) || !l.intercept.is_finite()) {
            return Err(LowerError::Invalid("envelope lines need lambda >= 0 and finite intercepts".into()));
        }
        Ok(Self { lines })
    }

    pub fn lines(&self) -> &[EnvelopeLine] {
        &self.lines
    }

    pub fn eval(&self, d: f64) -> f64 {
        self.lines
            .iter()
            .map(|l| l.intercept - l.lambda * d)
            .fold(0.0, f64::max)
    }

    /// Smallest `D` at which the envelope reaches zero (infinite if a line is flat and positive).
    pub fn zero_crossing(&self) -> f64 {
        self.lines
            .iter()
            .map(|l| {
                if l.intercept <= 0.0 {
                    0.0
                } else if l.lambda == 0.0 {
                    f64::INFINITY
                } else {
                    l.intercept / l.lambda
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn envelope(lines: &LowerEnvelope, d: f64) -> f64 {
    lines.eval(d)
}
