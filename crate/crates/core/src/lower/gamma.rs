use super::LowerError;
use crate::autodiff::{gemm_strided, log_sum_exp, Tape, Tensor, Var};

/// Terms more than this far below the running maximum are skipped.
const NEGLIGIBLE: f64 = -50.0;

/// `log gamma_k(x_hat) = logsumexp_i(-lambda |x_i - x_hat|^2 - log u(x_i)) - ln k`
/// recorded on `tape`, differentiable in `x_hat` (`1 x n`) and in `log_u` (`k x 1`).
pub fn log_gamma_k(tape: &mut Tape, x_hat: Var, xs: &Tensor, log_u: Var, lambda: f64) -> Result<Var, LowerError> {
    let k = xs.rows();
    if k == 0 {
        return Err(LowerError::Invalid("k must be at least 1".into()));
    }
    let xv = tape.constant(xs.clone());
    let diff = tape.sub(xv, x_hat)?;
    let sq = tape.square(diff);
    let d = tape.sum_axis(sq, 1)?;
    let s = tape.scale(d, -lambda);
    let s = tape.sub(s, log_u)?;
    let l = tape.logsumexp(s, 0)?;
    Ok(tape.add_scalar(l, -(k as f64).ln()))
}

/// The Gaussian-mixture objective `gamma_k` for fixed samples and `u`, with
/// exact duplicate samples folded into one weighted component.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub(crate) n: usize,
    pub(crate) lambda: f64,
    /// Unique centroids, row-major.
    pub(crate) xs: Vec<f64>,
    /// `ln(multiplicity) - log u(x_i) - ln k` per centroid.
    pub(crate) w: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl Mixture {
    pub fn new(xs: &Tensor, log_u: &[f64], lambda: f64) -> Result<Self, LowerError> {
        let (k, n) = xs.dims2()?;
        if k == 0 {
            return Err(LowerError::Invalid("k must be at least 1".into()));
        }
        if log_u.len() != k {
            return Err(LowerError::Invalid(format!("{} log u values for {k} samples", log_u.len())));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LowerError::Invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if log_u.iter().any(|v| !v.is_finite()) {
            return Err(LowerError::NonFinite {
                term: "log u",
                value: f64::NAN,
            });
        }
        let data = xs.data();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&data[a * n..(a + 1) * n], &data[b * n..(b + 1) * n]);
            ra.iter().zip(rb).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let ln_k = (k as f64).ln();
        let mut ux: Vec<f64> = Vec::new();
        let mut uw: Vec<Vec<f64>> = Vec::new();
        let mut prev: Option<usize> = None;
        for &i in &order {
            let row = &data[i * n..(i + 1) * n];
            let same = prev.is_some_and(|p| &data[p * n..(p + 1) * n] == row);
            if !same {
                ux.extend_from_slice(row);
                uw.push(Vec::new());
            }
            uw.last_mut().expect("pushed").push(-log_u[i] - ln_k);
            prev = Some(i);
        }
        let w: Vec<f64> = uw.iter().map(|v| log_sum_exp(v)).collect();
        let sq_norms = ux.chunks(n.max(1)).map(|r| r.iter().map(|v| v * v).sum()).collect();
        Ok(Self {
            n,
            lambda,
            xs: ux,
            w,
            sq_norms,
        })
    }

    /// Number of distinct centroids.
    pub fn components(&self) -> usize {
        self.w.len()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.xs[i * self.n..(i + 1) * self.n]
    }

    /// Direct evaluation at one point.
    pub fn log_gamma(&self, x_hat: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|i| {
                let d: f64 = self.centroid(i).iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
                self.w[i] - self.lambda * d
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// `log gamma_k` at every centroid.
    pub fn values_at_centroids(&self) -> Vec<f64> {
        let (n, c) = (self.n, self.components());
        let mut dots = vec![0.0; c * c];
        gemm_strided(c, n, c, &self.xs, (n as isize, 1), &self.xs, (1, n as isize), &mut dots);
        dots.chunks_mut(c)
            .enumerate()
            .map(|(p, row)| {
                let pn = self.sq_norms[p];
                let mut max = f64::NEG_INFINITY;
                for (i, s) in row.iter_mut().enumerate() {
                    *s = self.w[i] - self.lambda * (pn + self.sq_norms[i] - 2.0 * *s).max(0.0);
                    max = max.max(*s);
                }
                max + row.iter().map(|s| s - max).filter(|&t| t > NEGLIGIBLE).map(f64::exp).sum::<f64>().ln()
            })
            .collect()
    }

    /// `log gamma_k` and the responsibility-weighted mean `sum_i p_i x_i` at each
    /// of the `a` points in `points` (row-major `a x n`).
    ///
    /// The mean-shift step from `x` is `mean - x`, i.e. gradient ascent with
    /// step `1 / (2 lambda)`.
    pub fn eval_batch(&self, points: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let a = points.len() / n.max(1);
        let c = self.components();
        let mut dots = vec![0.0; a * c];
        gemm_strided(a, n, c, points, (n as isize, 1), &self.xs, (1, n as isize), &mut dots);
        let mut values = Vec::with_capacity(a);
        let mut weights = vec![0.0; a * c];
        for p in 0..a {
            let pn: f64 = points[p * n..(p + 1) * n].iter().map(|v| v * v).sum();
            let row = &mut dots[p * c..(p + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for (i, s) in row.iter_mut().enumerate() {
                let d = (pn + self.sq_norms[i] - 2.0 * *s).max(0.0);
                *s = self.w[i] - self.lambda * d;
                max = max.max(*s);
            }
            let wr = &mut weights[p * c..(p + 1) * c];
            let mut total = 0.0;
            for (i, &s) in row.iter().enumerate() {
                let t = s - max;
                if t > NEGLIGIBLE {
                    let e = t.exp();
                    wr[i] = e;
                    total += e;
                }
            }
            wr.iter_mut().for_each(|v| *v /= total);
            values.push(max + total.ln());
        }
        let mut means = vec![0.0; a * n];
        gemm_strided(a, c, n, &weights, (c as isize, 1), &self.xs, (n as isize, 1), &mut means);
        (values, means)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_sample_at_its_centroid() {
        let xs = Tensor::row(&[0.7, -1.2]);
        let mix = Mixture::new(&xs, &[0.0], 3.0).unwrap();
        assert_eq!(mix.log_gamma(&[0.7, -1.2]), 0.0);
        let mut tape = Tape::new();
        let xh = tape.variable(Tensor::row(&[0.7, -1.2]));
        let lu = tape.constant(Tensor::column(&[0.0]));
        let g = log_gamma_k(&mut tape, xh, &xs, lu, 3.0).unwrap();
        assert_eq!(tape.value(g).item(), 0.0);
    }

    #[test]
    fn two_points_direct_substitution() {
        let xs = Tensor::column(&[0.0, 2.0]);
        let mix = Mixture::new(&xs, &[0.0, 0.0], 1.0).unwrap();
        let expect = ((1.0 + (-4f64).exp()) / 2.0).ln();
        assert!((mix.log_gamma(&[0.0]) - expect).abs() < 1e-15);
        let (v, _) = mix.eval_batch(&[0.0]);
        assert!((v[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn matches_linear_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let k = rng.random_range(1..40);
            let n = rng.random_range(1..5);
            let lambda = rng.random_range(0.01..3.0);
            let xs: Vec<f64> = (0..k * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lu: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xh: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = Tensor::matrix(k, n, xs.clone()).unwrap();
            let mix = Mixture::new(&t, &lu, lambda).unwrap();
            let naive: f64 = (0..k)
                .map(|i| {
                    let d: f64 = (0..n).map(|j| (xs[i * n + j] - xh[j]).powi(2)).sum();
                    (-lambda * d).exp() / lu[i].exp()
                })
                .sum::<f64>()
                / k as f64;
            assert!((mix.log_gamma(&xh) - naive.ln()).abs() < 1e-10);
            let (v, _) = mix.eval_batch(&xh);
            assert!((v[0] - naive.ln()).abs() < 1e-10);
            let mut tape = Tape::new();
            let xv = tape.variable(Tensor::row(&xh));
            let luv = tape.constant(Tensor::column(&lu));
            let g = log_gamma_k(&mut tape, xv, &t, luv, lambda).unwrap();
            assert!((tape.value(g).item() - naive.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn huge_exponents_stay_finite() {
        let xs = Tensor::column(&[0.0, 1000.0]);
        let mix = Mixture::new(&xs, &[0.0, 0.0], 1.0).unwrap();
        let v = mix.log_gamma(&[500.0]);
        assert!((v - (-250_000.0)).abs() < 1e-9, "{v}");
    }

    #[test]
    fn duplicates_fold_into_weights() {
        let xs = Tensor::column(&[1.0, 0.0, 1.0, 1.0]);
        let lu = [0.0, 0.5, 0.0, 0.0];
        let mix = Mixture::new(&xs, &lu, 0.8).unwrap();
        assert_eq!(mix.components(), 2);
        let direct: f64 = [1.0f64, 0.0, 1.0, 1.0]
            .iter()
            .zip(lu)
            .map(|(x, l)| (-0.8 * (x - 0.3) * (x - 0.3) - l).exp())
            .sum::<f64>()
            / 4.0;
        assert!((mix.log_gamma(&[0.3]) - direct.ln()).abs() < 1e-14);
    }

    #[test]
    fn weighted_mean_is_mean_shift_target() {
        let xs = Tensor::column(&[-1.0, 1.0]);
        let mix = Mixture::new(&xs, &[0.0, 0.0], 0.5).unwrap();
        let (_, m) = mix.eval_batch(&[0.5]);
        let (p1, p2) = ((-0.5f64 * 2.25).exp(), (-0.5f64 * 0.25).exp());
        assert!((m[0] - (p2 - p1) / (p1 + p2)).abs() < 1e-14);
    }
}
