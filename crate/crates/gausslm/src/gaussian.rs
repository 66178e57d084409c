//! Gaussian sampling and block covariance machinery.
//!
//! Two independent constructions produce `n` standard Gaussian vectors in
//! `R^k` with constant cross-correlation `t`: contracting a correlation
//! frame against one ambient draw (`X_i = U_i Z`), and the mixture
//! `X_i = sqrt(t) Z + sqrt(1-t) Z_i` (which only covers `t >= 0`). Their
//! laws agree; the test suites exploit that as a cross-check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::frames::{lifted_frame_operators, CorrelationFrame};
use crate::linalg;

/// A value-like source of reproducible Gaussian draws. The same
/// `(seed, stream, dimension)` triple always reproduces the same
/// sequence; distinct streams are statistically independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianSampler {
    seed: u64,
    stream: u64,
    dimension: usize,
}

impl GaussianSampler {
    pub fn new(seed: u64, stream: u64, dimension: usize) -> Self {
        GaussianSampler {
            seed,
            stream,
            dimension,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Derives an independent stream, e.g. one per concurrent batch.
    pub fn substream(&self, offset: u64) -> Self {
        GaussianSampler {
            seed: self.seed,
            stream: self.stream.wrapping_add(offset).wrapping_add(1),
            dimension: self.dimension,
        }
    }

    pub fn with_dimension(&self, dimension: usize) -> Self {
        GaussianSampler {
            dimension,
            ..*self
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(self.dimension, |_, _| rng.sample::<f64, _>(StandardNormal))
    }
}

/// `count` iid draws from `N(0, I_dim)`, restarting the sampler's stream.
pub fn sample_standard(sampler: &GaussianSampler, count: usize) -> Vec<DVector<f64>> {
    let mut rng = sampler.rng();
    (0..count).map(|_| sampler.draw(&mut rng)).collect()
}

/// `count` tuples `(U_1 Z, ..., U_n Z)` for fresh ambient draws
/// `Z ~ N(0, I_{kn})`; the population cross-covariance of distinct
/// components is exactly `t I_k`.
pub fn sample_correlated_frame(
    frame: &CorrelationFrame,
    k: usize,
    sampler: &GaussianSampler,
    count: usize,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if k < 1 {
        return Err(Error::InvalidParameter("component dimension k must be >= 1".into()));
    }
    let n = frame.n();
    let ambient = sampler.with_dimension(n * k);
    let mut rng = ambient.rng();
    let vectors = frame.vectors();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z = ambient.draw(&mut rng);
        let tuple = (0..n)
            .map(|i| {
                // X_i = sum_a u_{ia} Z_a over the k-blocks of Z
                let mut x = DVector::zeros(k);
                for a in 0..n {
                    let coeff = vectors[i][a];
                    for r in 0..k {
                        x[r] += coeff * z[a * k + r];
                    }
                }
                x
            })
            .collect();
        out.push(tuple);
    }
    Ok(out)
}

/// `count` tuples `X_i = sqrt(t) Z + sqrt(1-t) Z_i` with `Z, Z_i` iid
/// `N(0, I_k)`. Only defined for `t in [0, 1]`; negative correlation has
/// no mixture representation and must go through the frame construction.
pub fn sample_correlated_mixture(
    t: f64,
    n: usize,
    k: usize,
    sampler: &GaussianSampler,
    count: usize,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "mixture construction needs t in [0, 1], got {t}"
        )));
    }
    if n < 1 || k < 1 {
        return Err(Error::InvalidParameter("need n >= 1 and k >= 1".into()));
    }
    let shared_coeff = t.sqrt();
    let fresh_coeff = (1.0 - t).sqrt();
    let component = sampler.with_dimension(k);
    let mut rng = component.rng();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let shared = component.draw(&mut rng);
        let tuple = (0..n)
            .map(|_| {
                let fresh = component.draw(&mut rng);
                &shared * shared_coeff + fresh * fresh_coeff
            })
            .collect();
        out.push(tuple);
    }
    Ok(out)
}

/// `count` draws of `U Z - shift` with `Z ~ N(0, I)`; the image law is
/// `N(-shift, U U^T)`.
pub fn sample_affine(
    transform: &DMatrix<f64>,
    shift: &DVector<f64>,
    sampler: &GaussianSampler,
    count: usize,
) -> Vec<DVector<f64>> {
    let source = sampler.with_dimension(transform.ncols());
    let mut rng = source.rng();
    (0..count)
        .map(|_| transform * source.draw(&mut rng) - shift)
        .collect()
}

/// Second-moment matrix `(1/N) sum x x^T` about the known zero mean.
pub fn empirical_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let dim = samples.first().map_or(0, |x| x.len());
    let mut acc = DMatrix::zeros(dim, dim);
    for x in samples {
        acc.syger(1.0, x, x, 1.0);
    }
    acc.fill_upper_triangle_with_lower_triangle();
    acc / samples.len().max(1) as f64
}

/// Cross moment `(1/N) sum x y^T` of paired samples.
pub fn empirical_cross_covariance(
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
) -> DMatrix<f64> {
    assert_eq!(xs.len(), ys.len(), "paired sample lengths differ");
    let dim_x = xs.first().map_or(0, |x| x.len());
    let dim_y = ys.first().map_or(0, |y| y.len());
    let mut acc = DMatrix::zeros(dim_x, dim_y);
    for (x, y) in xs.iter().zip(ys) {
        acc.ger(1.0, x, y, 1.0);
    }
    acc / xs.len().max(1) as f64
}

/// Writes tuples as CSV, one row per tuple with `X_1..X_n` flattened.
pub fn write_samples_csv<W: std::io::Write>(
    mut writer: W,
    samples: &[Vec<DVector<f64>>],
) -> Result<()> {
    for tuple in samples {
        let mut first = true;
        for component in tuple {
            for value in component.iter() {
                if !first {
                    write!(writer, ",")?;
                }
                write!(writer, "{value}")?;
                first = false;
            }
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// The `kn x kn` block-constant covariance with `T_ii = I_k` and
/// `T_ij = t I_k` off the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    n: usize,
    k: usize,
    matrix: DMatrix<f64>,
}

impl BlockCovariance {
    /// Builds the constant-correlation covariance; its spectrum is
    /// `{(n-1)t + 1, 1 - t}` with multiplicities `k` and `k(n-1)`.
    pub fn constant_correlation(n: usize, k: usize, t: f64) -> Result<Self> {
        if n < 1 || k < 1 {
            return Err(Error::InvalidParameter("need n >= 1 and k >= 1".into()));
        }
        let lo = if n > 1 { -1.0 / (n as f64 - 1.0) } else { 0.0 };
        if !(t >= lo && t <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "t outside [{lo}, 1]: the block matrix would not be positive semi-definite"
            )));
        }
        let dim = n * k;
        let matrix = DMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                1.0
            } else if r % k == c % k && r / k != c / k {
                t
            } else {
                0.0
            }
        });
        Ok(BlockCovariance { n, k, matrix })
    }

    /// Gram matrix of the tensor-lifted frame operators, `T_ij = U_i U_j^T`.
    pub fn from_frame(frame: &CorrelationFrame, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidParameter("need k >= 1".into()));
        }
        let ops = lifted_frame_operators(frame, k);
        let n = frame.n();
        let dim = n * k;
        let mut matrix = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                let block = &ops[i] * ops[j].transpose();
                matrix.view_mut((i * k, j * k), (k, k)).copy_from(&block);
            }
        }
        Ok(BlockCovariance { n, k, matrix })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.n * self.k
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The `k x k` block `T_ij`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.matrix
            .view((i * self.k, j * self.k), (self.k, self.k))
            .into()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::sym_eigenvalues(&self.matrix)
    }

    /// Symmetric PSD square root, the deterministic factor `U` with
    /// `U U^T = T` used for affine-image sampling.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        linalg::sym_sqrt(&self.matrix)
    }
}

/// Outcome of comparing symmetric matrices in the positive semi-definite
/// (Loewner) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdOrder {
    LessEq,
    GreaterEq,
    Equal,
    Incomparable,
}

/// Classifies `A` against `B` by the minimum eigenvalues of both
/// differences, with tolerance `1e-10`. Rejects asymmetric input.
pub fn psd_order(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PsdOrder> {
    const TOL: f64 = 1e-10;
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::InvalidParameter("dimension mismatch".into()));
    }
    if !linalg::is_symmetric(a, 1e-12) || !linalg::is_symmetric(b, 1e-12) {
        return Err(Error::InvalidParameter(
            "psd order needs symmetric matrices".into(),
        ));
    }
    let diff = b - a;
    let b_minus_a_min = linalg::sym_eigenvalues(&diff)
        .first()
        .copied()
        .unwrap_or(0.0);
    let a_minus_b_min = linalg::sym_eigenvalues(&(-diff))
        .first()
        .copied()
        .unwrap_or(0.0);
    Ok(match (b_minus_a_min >= -TOL, a_minus_b_min >= -TOL) {
        (true, true) => PsdOrder::Equal,
        (true, false) => PsdOrder::LessEq,
        (false, true) => PsdOrder::GreaterEq,
        (false, false) => PsdOrder::Incomparable,
    })
}
