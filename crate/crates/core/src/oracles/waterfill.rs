use super::OracleError;

/// Water level `theta` with `sum_i min(theta, var_i) = d`, found by bisection.
///
/// Requires `0 < d < sum(variances)`.
pub fn water_level(variances: &[f64], d: f64) -> Result<f64, OracleError> {
    check_variances(variances)?;
    if !(d > 0.0) {
        return Err(OracleError::NonPositiveDistortion(d));
    }
    let total: f64 = variances.iter().sum();
    let vmax = variances.iter().copied().fold(0.0, f64::max);
    if d >= total {
        return Ok(vmax);
    }
    let filled = |theta: f64| variances.iter().map(|&v| v.min(theta)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, vmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if filled(mid) < d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Rate (nats) of a diagonal Gaussian at total squared-error distortion `d`.
pub fn reverse_waterfill(variances: &[f64], d: f64) -> Result<f64, OracleError> {
    check_variances(variances)?;
    if !(d > 0.0) {
        return Err(OracleError::NonPositiveDistortion(d));
    }
    if d >= variances.iter().sum::<f64>() {
        return Ok(0.0);
    }
    let theta = water_level(variances, d)?;
    Ok(variances
        .iter()
        .map(|&v| 0.5 * (v / theta.min(v)).ln())
        .filter(|r| *r > 0.0)
        .sum())
}

/// `F(lambda) = min_D R(D) + lambda D` for a diagonal Gaussian under total squared error.
///
/// The tangent point has water level `1 / (2 lambda)`.
pub fn gaussian_intercept(variances: &[f64], lambda: f64) -> Result<f64, OracleError> {
    check_variances(variances)?;
    if !(lambda > 0.0) {
        return Err(OracleError::Invalid(format!("lambda must be positive, got {lambda}")));
    }
    let theta = 0.5 / lambda;
    Ok(variances
        .iter()
        .map(|&v| {
            if v > theta {
                0.5 * (v / theta).ln() + lambda * theta
            } else {
                lambda * v
            }
        })
        .sum())
}

/// [`gaussian_intercept`] for `N(0, I_n)`.
pub fn standard_gaussian_intercept(n: usize, lambda: f64) -> Result<f64, OracleError> {
    if n == 0 {
        return Err(OracleError::Invalid("n must be at least 1".into()));
    }
    gaussian_intercept(&vec![1.0; n], lambda)
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    h(p) + h(1.0 - p)
}

/// `R(D) = H(p) - H(D)` for a Bernoulli(p) source under Hamming distortion.
pub fn binary_rd(p: f64, d: f64) -> f64 {
    if d >= p.min(1.0 - p) {
        0.0
    } else {
        binary_entropy(p) - binary_entropy(d)
    }
}

fn check_variances(variances: &[f64]) -> Result<(), OracleError> {
    if variances.is_empty() || variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(OracleError::Invalid("variances must be nonempty, positive and finite".into()));
    }
    Ok(())
}
