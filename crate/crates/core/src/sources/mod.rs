//! Data sources `P_X` and distortion measures.
//!
//! Every draw is a pure function of `(seed, row index)`: row `i` is generated
//! from its own ChaCha stream, so any index range can be re-drawn bit-exactly
//! and independent workers can share a seed without coordination.

mod file;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::autodiff::Tensor;

pub use file::{read_any, read_binary, read_csv, write_binary, write_csv, BINARY_MAGIC};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("invalid source: {0}")]
    Invalid(String),
    #[error("sample count must be positive")]
    EmptyRequest,
    #[error("file source exhausted: requested {requested} rows at cursor {cursor}, {available} available")]
    Exhausted {
        requested: usize,
        cursor: u64,
        available: usize,
    },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

/// The distribution behind a [`Source`].
#[derive(Clone, Debug, PartialEq)]
pub enum SourceKind {
    DiagonalGaussian {
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    StandardGaussian {
        n: usize,
    },
    /// `(z1, z2 + b z1^2 - b s^2)` with `z1 ~ N(0, s^2)`, `z2 ~ N(0, 1)`.
    Banana2D {
        curvature: f64,
        spread: f64,
    },
    /// `x = A y` for `y` drawn from `inner`; `matrix` is `n x d` row-major.
    LinearLift {
        inner: Box<SourceKind>,
        matrix: Vec<f64>,
        n: usize,
    },
    DiscreteTabular {
        support: Vec<Vec<f64>>,
        pmf: Vec<f64>,
    },
    /// Rows served in file order; the seed is ignored.
    FileSamples {
        path: PathBuf,
        dimension: usize,
        rows: Arc<Vec<f64>>,
    },
}

/// A sampleable source with a draw cursor.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    kind: SourceKind,
    seed: u64,
    cursor: u64,
}

/// `count x n` draws plus the index range they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub data: Tensor,
    pub seed: u64,
    pub start: u64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row_slice(i)
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SourceKind {
    pub fn dimension(&self) -> usize {
        match self {
            SourceKind::DiagonalGaussian { means, .. } => means.len(),
            SourceKind::StandardGaussian { n } => *n,
            SourceKind::Banana2D { .. } => 2,
            SourceKind::LinearLift { n, .. } => *n,
            SourceKind::DiscreteTabular { support, .. } => support.first().map_or(0, Vec::len),
            SourceKind::FileSamples { dimension, .. } => *dimension,
        }
    }

    fn validate(&self) -> Result<(), SourceError> {
        let bad = |m: String| Err(SourceError::Invalid(m));
        match self {
            SourceKind::DiagonalGaussian { means, variances } => {
                if means.is_empty() || means.len() != variances.len() {
                    return bad(format!("{} means vs {} variances", means.len(), variances.len()));
                }
                if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) || means.iter().any(|m| !m.is_finite()) {
                    return bad("variances must be positive and finite".into());
                }
            }
            SourceKind::StandardGaussian { n } => {
                if *n == 0 {
                    return bad("dimension must be at least 1".into());
                }
            }
            SourceKind::Banana2D { curvature, spread } => {
                if !(curvature.is_finite() && *spread > 0.0 && spread.is_finite()) {
                    return bad("banana needs finite curvature and positive spread".into());
                }
            }
            SourceKind::LinearLift { inner, matrix, n } => {
                inner.validate()?;
                let d = inner.dimension();
                if matrix.len() != n * d || d > *n {
                    return bad(format!("lift matrix must be {n} x {d} with d <= n"));
                }
                if column_rank(matrix, *n, d) < d {
                    return bad("lift matrix is not full column rank".into());
                }
            }
            SourceKind::DiscreteTabular { support, pmf } => {
                if support.is_empty() || support.len() != pmf.len() {
                    return bad(format!("{} support points vs {} probabilities", support.len(), pmf.len()));
                }
                let d = support[0].len();
                if d == 0 || support.iter().any(|p| p.len() != d) {
                    return bad("support points must share one positive dimension".into());
                }
                if pmf.iter().any(|&p| !(p >= 0.0)) {
                    return bad("pmf entries must be nonnegative".into());
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("pmf sums to {total}, not 1"));
                }
            }
            SourceKind::FileSamples { dimension, rows, .. } => {
                if *dimension == 0 || rows.len() % dimension != 0 {
                    return bad("file rows do not match the declared dimension".into());
                }
                if rows.iter().any(|v| !v.is_finite()) {
                    return bad("file contains non-finite values".into());
                }
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        match self {
            SourceKind::DiagonalGaussian { means, variances } => {
                for (m, v) in means.iter().zip(variances) {
                    let z: f64 = StandardNormal.sample(rng);
                    out.push(m + v.sqrt() * z);
                }
            }
            SourceKind::StandardGaussian { n } => {
                for _ in 0..*n {
                    out.push(StandardNormal.sample(rng));
                }
            }
            SourceKind::Banana2D { curvature, spread } => {
                let z0: f64 = StandardNormal.sample(rng);
                let z1 = spread * z0;
                let z2: f64 = StandardNormal.sample(rng);
                out.push(z1);
                out.push(z2 + curvature * (z1 * z1 - spread * spread));
            }
            SourceKind::LinearLift { inner, matrix, n } => {
                let mut y = Vec::with_capacity(inner.dimension());
                inner.draw(rng, &mut y);
                let d = y.len();
                for i in 0..*n {
                    out.push((0..d).map(|j| matrix[i * d + j] * y[j]).sum());
                }
            }
            SourceKind::DiscreteTabular { support, pmf } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = support.len() - 1;
                for (i, p) in pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                // Guard against trailing zero-probability points when u lands past the sum.
                while pmf[pick] == 0.0 && pick > 0 {
                    pick -= 1;
                }
                out.extend_from_slice(&support[pick]);
            }
            SourceKind::FileSamples { .. } => unreachable!("file rows are not drawn"),
        }
    }
}

/// Numerical column rank of an `n x d` row-major matrix.
pub fn column_rank(matrix: &[f64], n: usize, d: usize) -> usize {
    let m = nalgebra::DMatrix::from_row_slice(n, d, matrix);
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > max * 1e-12 * (n.max(d) as f64)).count()
}

impl Source {
    pub fn new(kind: SourceKind, seed: u64) -> Result<Self, SourceError> {
        kind.validate()?;
        Ok(Self { kind, seed, cursor: 0 })
    }

    pub fn diagonal_gaussian(means: Vec<f64>, variances: Vec<f64>, seed: u64) -> Result<Self, SourceError> {
        Self::new(SourceKind::DiagonalGaussian { means, variances }, seed)
    }

    pub fn standard_gaussian(n: usize, seed: u64) -> Result<Self, SourceError> {
        Self::new(SourceKind::StandardGaussian { n }, seed)
    }

    pub fn banana(curvature: f64, spread: f64, seed: u64) -> Result<Self, SourceError> {
        Self::new(SourceKind::Banana2D { curvature, spread }, seed)
    }

    /// Default banana: curvature 0.5, spread 2.
    pub fn default_banana(seed: u64) -> Self {
        Self::banana(0.5, 2.0, seed).expect("valid defaults")
    }

    pub fn discrete(support: Vec<Vec<f64>>, pmf: Vec<f64>, seed: u64) -> Result<Self, SourceError> {
        Self::new(SourceKind::DiscreteTabular { support, pmf }, seed)
    }

    /// Lift `inner` into `n` dimensions by an explicit `n x d` matrix.
    pub fn lift(inner: Source, matrix: Vec<f64>, n: usize) -> Result<Self, SourceError> {
        let seed = inner.seed;
        Self::new(
            SourceKind::LinearLift {
                inner: Box::new(inner.kind),
                matrix,
                n,
            },
            seed,
        )
    }

    /// Lift by a Glorot-normal random `n x d` matrix drawn from `matrix_seed`.
    pub fn glorot_lift(inner: Source, n: usize, matrix_seed: u64) -> Result<Self, SourceError> {
        let d = inner.dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(matrix_seed);
        let normal = Normal::new(0.0, (2.0 / (n + d) as f64).sqrt()).expect("finite");
        let matrix = (0..n * d).map(|_| normal.sample(&mut rng)).collect();
        Self::lift(inner, matrix, n)
    }

    pub fn from_file(path: &Path, dimension: usize, header: bool) -> Result<Self, SourceError> {
        let (dim, rows) = file::read_any(path, header)?;
        if dim != dimension {
            return Err(SourceError::Dimension(dim, dimension));
        }
        Self::new(
            SourceKind::FileSamples {
                path: path.to_path_buf(),
                dimension,
                rows: Arc::new(rows),
            },
            0,
        )
    }

    pub fn kind(&self) -> &SourceKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn dimension(&self) -> usize {
        self.kind.dimension()
    }

    pub fn reset(&mut self) {
        self.cursor = 0;
    }

    pub fn set_cursor(&mut self, cursor: u64) {
        self.cursor = cursor;
    }

    /// Same distribution, different seed, cursor at zero.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind.clone(),
            seed,
            cursor: 0,
        }
    }

    /// An independent stream for `worker`.
    pub fn split(&self, worker: u64) -> Self {
        self.with_seed(mix_seed(self.seed, worker.wrapping_add(1)))
    }

    /// Draws `count` rows at the cursor and advances it.
    pub fn sample(&mut self, count: usize) -> Result<SampleBatch, SourceError> {
        let batch = self.sample_at(self.cursor, count)?;
        self.cursor += count as u64;
        Ok(batch)
    }

    /// Rows `start..start + count`, without touching the cursor.
    pub fn sample_at(&self, start: u64, count: usize) -> Result<SampleBatch, SourceError> {
        if count == 0 {
            return Err(SourceError::EmptyRequest);
        }
        let n = self.dimension();
        let data = if let SourceKind::FileSamples { rows, dimension, .. } = &self.kind {
            let total = rows.len() / dimension;
            let available = total.saturating_sub(start as usize);
            if available < count {
                return Err(SourceError::Exhausted {
                    requested: count,
                    cursor: start,
                    available,
                });
            }
            let s = start as usize * dimension;
            rows[s..s + count * dimension].to_vec()
        } else {
            let base = ChaCha8Rng::seed_from_u64(self.seed);
            let mut data = Vec::with_capacity(count * n);
            for i in 0..count as u64 {
                let mut rng = base.clone();
                rng.set_stream(start + i);
                self.kind.draw(&mut rng, &mut data);
            }
            data
        };
        Ok(SampleBatch {
            data: Tensor::matrix(count, n, data).expect("shape"),
            seed: self.seed,
            start,
        })
    }

    /// Per-coordinate variances when they are known in closed form.
    pub fn gaussian_variances(&self) -> Option<Vec<f64>> {
        match &self.kind {
            SourceKind::DiagonalGaussian { variances, .. } => Some(variances.clone()),
            SourceKind::StandardGaussian { n } => Some(vec![1.0; *n]),
            _ => None,
        }
    }
}

/// Endless supply of training batches.
///
/// Synthetic sources yield fresh draws from a derived stream. File sources are
/// resampled with replacement, so a finite file never runs dry.
#[derive(Clone, Debug)]
pub struct BatchStream {
    source: Source,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(source: &Source, salt: u64) -> Self {
        Self {
            source: source.with_seed(mix_seed(source.seed, salt)),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(source.seed, salt ^ 0xb007_5eed)),
        }
    }

    pub fn dimension(&self) -> usize {
        self.source.dimension()
    }

    pub fn next_batch(&mut self, count: usize) -> Result<Tensor, SourceError> {
        if let SourceKind::FileSamples { rows, dimension, .. } = &self.source.kind {
            if count == 0 {
                return Err(SourceError::EmptyRequest);
            }
            let total = rows.len() / dimension;
            let mut data = Vec::with_capacity(count * dimension);
            for _ in 0..count {
                let r = self.rng.random_range(0..total);
                data.extend_from_slice(&rows[r * dimension..(r + 1) * dimension]);
            }
            return Ok(Tensor::matrix(count, *dimension, data).expect("shape"));
        }
        Ok(self.source.sample(count)?.data)
    }
}

/// Diagonal Gaussian with means `U[-0.5, 0.5]` and variances `U[1e-3, 2]`.
pub fn random_gaussian_source(n: usize, seed: u64) -> Result<Source, SourceError> {
    if n == 0 {
        return Err(SourceError::Invalid("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5eed));
    let means = (0..n).map(|_| rng.random_range(-0.5..=0.5)).collect();
    let variances = (0..n).map(|_| rng.random_range(RANDOM_VARIANCE_FLOOR..=2.0)).collect();
    Source::diagonal_gaussian(means, variances, seed)
}

/// Smallest variance [`random_gaussian_source`] will produce.
pub const RANDOM_VARIANCE_FLOOR: f64 = 1e-3;

/// Distortion measure `rho(x, x_hat)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionMetric {
    /// Total squared error `sum_i (x_i - y_i)^2`.
    SquaredError,
    /// Number of unequal coordinates.
    Hamming,
}

impl DistortionMetric {
    pub fn distortion(self, x: &[f64], y: &[f64]) -> Result<f64, SourceError> {
        if x.len() != y.len() {
            return Err(SourceError::Dimension(x.len(), y.len()));
        }
        Ok(self.eval(x, y))
    }

    /// As [`DistortionMetric::distortion`] without the length check.
    pub fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            DistortionMetric::SquaredError => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
            DistortionMetric::Hamming => x.iter().zip(y).filter(|(a, b)| a != b).count() as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distortion_examples() {
        let se = DistortionMetric::SquaredError;
        assert_eq!(se.distortion(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(se.distortion(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        let h = DistortionMetric::Hamming;
        assert_eq!(h.distortion(&[0.0, 1.0, 1.0], &[0.0, 0.0, 1.0]).unwrap(), 1.0);
        assert!(se.distortion(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn random_gaussian_ranges_and_determinism() {
        for seed in 0..50 {
            let s = random_gaussian_source(8, seed).unwrap();
            let SourceKind::DiagonalGaussian { means, variances } = s.kind() else { panic!() };
            assert!(means.iter().all(|m| (-0.5..=0.5).contains(m)));
            assert!(variances.iter().all(|v| *v > 0.0 && *v <= 2.0));
            assert_eq!(s, random_gaussian_source(8, seed).unwrap());
        }
        assert_ne!(random_gaussian_source(4, 1).unwrap().kind(), random_gaussian_source(4, 2).unwrap().kind());
    }

    #[test]
    fn redraw_is_bit_identical() {
        let mut s = Source::default_banana(11);
        let a = s.sample(100).unwrap();
        let b = s.sample(50).unwrap();
        assert_eq!(b.start, 100);
        s.reset();
        assert_eq!(s.sample(100).unwrap(), a);
        let tail = s.sample_at(120, 10).unwrap();
        assert_eq!(tail.data.data(), &b.data.data()[20 * 2..30 * 2]);
    }

    #[test]
    fn lift_with_identity_columns_zero_fills() {
        let n = 16;
        let mut a = vec![0.0; n * 2];
        a[0] = 1.0;
        a[3] = 1.0;
        let mut s = Source::lift(Source::default_banana(3), a, n).unwrap();
        let b = s.sample(500).unwrap();
        for i in 0..b.len() {
            assert!(b.row(i)[2..].iter().all(|&v| v == 0.0));
            assert_ne!(b.row(i)[0], 0.0);
        }
    }

    #[test]
    fn invalid_sources_rejected() {
        assert!(Source::diagonal_gaussian(vec![0.0], vec![0.0], 0).is_err());
        assert!(Source::discrete(vec![vec![0.0], vec![1.0]], vec![0.5, 0.6], 0).is_err());
        assert!(Source::discrete(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5], 0).is_err());
        assert!(Source::lift(Source::default_banana(0), vec![1.0, 2.0, 2.0, 4.0, 0.0, 0.0], 3).is_err());
        let mut g = Source::standard_gaussian(2, 0).unwrap();
        assert!(matches!(g.sample(0), Err(SourceError::EmptyRequest)));
    }

    #[test]
    fn split_streams_differ() {
        let s = Source::standard_gaussian(3, 9).unwrap();
        let a = s.split(0).sample_at(0, 4).unwrap();
        let b = s.split(1).sample_at(0, 4).unwrap();
        assert_ne!(a.data, b.data);
        assert_eq!(a.data, s.split(0).sample_at(0, 4).unwrap().data);
    }
}
