//! Error-qualified evaluation of every functional the checks consume.
//!
//! Each operation can run on three backends:
//!
//! * `ClosedForm` — exact Gaussian integrals, available on the
//!   exponential oracle family (and half-space indicators for the plain
//!   moment functionals);
//! * `Quadrature` — tensorized Gauss–Hermite sums, recentered on the
//!   integrand's Gaussian bulk whenever the family exposes one, with a
//!   node-refinement delta as the error heuristic;
//! * `MonteCarlo` — batched sampling with per-batch substreams; the
//!   reported error is the standard error of the mean.
//!
//! `Auto` picks the best available backend in that order, falling back to
//! sampling when the integration dimension outgrows the node budget.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::CorrelationFrame;
use crate::functions::{oracle_geometric_mean, FunctionModel, GaussExpFunction};
use crate::gaussian::{
    sample_correlated_frame, sample_standard, BlockCovariance, GaussianSampler,
};
use crate::linalg;
use crate::quadrature::{AffineMap, QuadratureGrid};

/// Which computational route produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl Method {
    /// Closed forms and quadrature are deterministic; sampling is not.
    pub fn is_deterministic(self) -> bool {
        !matches!(self, Method::MonteCarlo)
    }
}

/// A numeric estimate bundled with its provenance and error scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub method: Method,
    /// Standard error for Monte Carlo, node-refinement delta for
    /// quadrature, zero for closed forms.
    #[serde(rename = "err")]
    pub error: f64,
    /// Samples or fine-grid nodes used; zero for closed forms.
    pub count: u64,
}

impl EstimateWithError {
    pub fn closed(value: f64) -> Self {
        EstimateWithError {
            value,
            method: Method::ClosedForm,
            error: 0.0,
            count: 0,
        }
    }
}

/// Componentwise estimate of a vector-valued expectation.
#[derive(Debug, Clone)]
pub struct VectorEstimate {
    pub value: DVector<f64>,
    pub error: DVector<f64>,
    pub method: Method,
    pub count: u64,
}

/// Backend selection for an [`Estimator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Auto,
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

/// Evaluation context: backend choice plus budgets and the sampler root.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub backend: BackendKind,
    /// Gauss–Hermite nodes per axis (capped in higher dimensions).
    pub quad_nodes: usize,
    pub mc_samples: u64,
    pub mc_batches: u32,
    pub sampler: GaussianSampler,
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator {
            backend: BackendKind::Auto,
            quad_nodes: 64,
            mc_samples: 1_000_000,
            mc_batches: 100,
            sampler: GaussianSampler::new(0, 0, 0),
        }
    }
}

// Distinct stream salts so concurrent functional estimates never share
// sample streams.
const SALT_SCALAR: u64 = 1;
const SALT_ENTROPY: u64 = 2;
const SALT_PRODUCT: u64 = 3;
const SALT_AVERAGE: u64 = 4;

impl Estimator {
    pub fn new(backend: BackendKind) -> Self {
        Estimator {
            backend,
            ..Estimator::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sampler = GaussianSampler::new(seed, 0, 0);
        self
    }

    /// `M(s) = (E f(X)^s)^{1/s}`, `s != 0`.
    pub fn moment_m(&self, f: &FunctionModel, s: f64) -> Result<EstimateWithError> {
        if s == 0.0 {
            return Err(Error::InvalidParameter(
                "moment order 0 is the geometric mean".into(),
            ));
        }
        f.require_integrable_moment(s)?;
        match self.resolve(f.dim(), has_moment_closed_form(f)) {
            Method::ClosedForm => {
                let value = if let Some(g) = f.gauss_exp() {
                    crate::functions::oracle_moment_m(g, s)?
                } else if let Some(h) = f.half_space() {
                    h.moment_m(s)?
                } else {
                    return Err(Error::UnsupportedBackend(
                        "no closed-form moment for this family".into(),
                    ));
                };
                Ok(EstimateWithError::closed(value))
            }
            Method::Quadrature => {
                let raw = self.quad_scalar(f.dim(), f.quadrature_tilt(s), |x| {
                    signed_from_log(s * f.log_eval(x))
                })?;
                Ok(power_transform(raw, 1.0 / s))
            }
            Method::MonteCarlo => {
                let raw = self.mc_scalar(f.dim(), SALT_SCALAR, |x| {
                    (s * f.log_eval(x)).exp()
                })?;
                if raw.value <= 0.0 {
                    return Err(Error::Divergent(format!(
                        "Monte Carlo mass estimate {:.3e} is not positive",
                        raw.value
                    )));
                }
                Ok(power_transform(raw, 1.0 / s))
            }
        }
    }

    /// `H(s) = E f(sqrt(s) X)`, `s >= 0`.
    pub fn scaled_mean_h(&self, f: &FunctionModel, s: f64) -> Result<EstimateWithError> {
        if s < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scaled mean needs s >= 0, got {s}"
            )));
        }
        if let Some(g) = f.gauss_exp() {
            g.require_integrable(s)?;
        }
        let root = s.sqrt();
        match self.resolve(f.dim(), has_moment_closed_form(f)) {
            Method::ClosedForm => {
                let value = if let Some(g) = f.gauss_exp() {
                    crate::functions::oracle_scaled_mean_h(g, s)?
                } else if let Some(h) = f.half_space() {
                    h.scaled_mean_h(s)?
                } else {
                    return Err(Error::UnsupportedBackend(
                        "no closed-form scaled mean for this family".into(),
                    ));
                };
                Ok(EstimateWithError::closed(value))
            }
            Method::Quadrature => {
                let tilt = f
                    .gauss_exp()
                    .map(|g| g.scale_argument(root))
                    .and_then(|scaled| scaled.tilted_gaussian(1.0).ok())
                    .map(|(_, mean, cov)| (mean, cov));
                self.quad_scalar(f.dim(), tilt, |x| signed_from_log(f.log_eval(&(x * root))))
            }
            Method::MonteCarlo => {
                self.mc_scalar(f.dim(), SALT_SCALAR, |x| f.eval(&(x * root)))
            }
        }
    }

    /// `exp(E log f(X))`, the `s -> 0+` limit of `M(s)`; zero whenever
    /// `f` vanishes on positive measure.
    pub fn geometric_mean(&self, f: &FunctionModel) -> Result<EstimateWithError> {
        match self.resolve(f.dim(), f.gauss_exp().is_some() || f.half_space().is_some()) {
            Method::ClosedForm => {
                let value = if let Some(g) = f.gauss_exp() {
                    oracle_geometric_mean(g)
                } else if f.half_space().is_some() {
                    // P(f = 0) > 0 forces E log f = -inf
                    0.0
                } else {
                    return Err(Error::UnsupportedBackend(
                        "no closed-form geometric mean for this family".into(),
                    ));
                };
                Ok(EstimateWithError::closed(value))
            }
            Method::Quadrature => {
                // direct value accumulation: a vanishing node sends the
                // log-mean to -inf and the geometric mean to zero
                let fine_nodes = nodes_for_dim(self.quad_nodes, f.dim())?;
                let fine = QuadratureGrid::new(fine_nodes, f.dim())?;
                let coarse = QuadratureGrid::new(coarse_count(fine_nodes), f.dim())?;
                let log_mean = fine.expectation_values(None, |x| f.log_eval(x));
                let coarse_log = coarse.expectation_values(None, |x| f.log_eval(x));
                let value = log_mean.exp();
                let error = if log_mean == f64::NEG_INFINITY {
                    0.0
                } else {
                    (value - coarse_log.exp()).abs()
                };
                Ok(EstimateWithError {
                    value,
                    method: Method::Quadrature,
                    error,
                    count: fine.total_nodes(),
                })
            }
            Method::MonteCarlo => {
                // a single observed zero of f certifies P(f = 0) > 0 and
                // with it a vanishing geometric mean
                let raw = self.mc_scalar_allow_neg_inf(f.dim(), SALT_SCALAR, |x| f.log_eval(x))?;
                Ok(exp_transform(raw))
            }
        }
    }

    /// `Ent(f) = E f log f - E f log E f`, with `0 log 0 = 0`.
    pub fn entropy(&self, f: &FunctionModel) -> Result<EstimateWithError> {
        if let Some(g) = f.gauss_exp() {
            g.require_integrable(1.0)?;
        }
        match self.resolve(f.dim(), f.gauss_exp().is_some()) {
            Method::ClosedForm => {
                let g = f.gauss_exp().ok_or_else(|| {
                    Error::UnsupportedBackend("no closed-form entropy for this family".into())
                })?;
                Ok(EstimateWithError::closed(gauss_exp_entropy(g)?))
            }
            Method::Quadrature => {
                let tilt = f.quadrature_tilt(1.0);
                let flogf = self.quad_scalar(f.dim(), tilt.clone(), |x| {
                    let lg = f.log_eval(x);
                    if lg == f64::NEG_INFINITY {
                        (0.0, f64::NEG_INFINITY) // 0 log 0 = 0
                    } else {
                        let (sign, mag) = signed_from(lg);
                        (sign, mag + lg)
                    }
                })?;
                let mass = self.quad_scalar(f.dim(), tilt, |x| signed_from_log(f.log_eval(x)))?;
                let value = plugin_entropy(flogf.value, mass.value);
                let error = flogf.error + (1.0 + mass.value.abs().ln().abs()) * mass.error;
                Ok(EstimateWithError {
                    value,
                    method: Method::Quadrature,
                    error,
                    count: flogf.count,
                })
            }
            Method::MonteCarlo => self.mc_entropy(f),
        }
    }

    /// `E <X, grad f(X)>`.
    pub fn stein_term(&self, f: &FunctionModel) -> Result<EstimateWithError> {
        self.derivative_functional(f, DerivativeFunctional::Stein)
    }

    /// `E |grad f(X)|^2`.
    pub fn dirichlet_term(&self, f: &FunctionModel) -> Result<EstimateWithError> {
        self.derivative_functional(f, DerivativeFunctional::Dirichlet)
    }

    /// `E f(X)^2 (Delta v)(X)` for `f = e^{-v}`.
    pub fn deficit_term(&self, f: &FunctionModel) -> Result<EstimateWithError> {
        self.derivative_functional(f, DerivativeFunctional::Deficit)
    }

    /// `E (Delta f)(X)`.
    pub fn laplacian_term(&self, f: &FunctionModel) -> Result<EstimateWithError> {
        self.derivative_functional(f, DerivativeFunctional::Laplacian)
    }

    fn derivative_functional(
        &self,
        f: &FunctionModel,
        kind: DerivativeFunctional,
    ) -> Result<EstimateWithError> {
        if !f.supports_derivatives() {
            return Err(Error::UnsupportedBackend(
                "this family has no usable pointwise derivatives".into(),
            ));
        }
        let tilt_order = kind.tilt_order();
        if let Some(g) = f.gauss_exp() {
            g.require_integrable(tilt_order)?;
        }
        match self.resolve(f.dim(), f.gauss_exp().is_some()) {
            Method::ClosedForm => {
                let g = f.gauss_exp().ok_or_else(|| {
                    Error::UnsupportedBackend(
                        "no closed form for this derivative functional".into(),
                    )
                })?;
                Ok(EstimateWithError::closed(
                    gauss_exp_derivative_functional(g, kind)?,
                ))
            }
            Method::Quadrature => {
                let tilt = f.quadrature_tilt(tilt_order);
                if let Some(g) = f.gauss_exp() {
                    // log-space polynomial-times-Gaussian integrands
                    self.quad_scalar(f.dim(), tilt, |x| {
                        let factor = kind.polynomial_factor(g, x);
                        let (sign, mag) = signed_from(factor);
                        (sign, mag + tilt_order * g.log_eval(x))
                    })
                } else {
                    self.quad_scalar(f.dim(), tilt, |x| signed_from(kind.raw_value(f, x)))
                }
            }
            Method::MonteCarlo => {
                self.mc_scalar(f.dim(), SALT_SCALAR, |x| kind.raw_value(f, x))
            }
        }
    }

    /// `E prod_i f_i(X_i)` over the joint law induced by the frame.
    pub fn correlated_product_mean(
        &self,
        fns: &[FunctionModel],
        frame: &CorrelationFrame,
        k: usize,
    ) -> Result<EstimateWithError> {
        let n = frame.n();
        if fns.len() != n {
            return Err(Error::InvalidParameter(format!(
                "need {n} factors, got {}",
                fns.len()
            )));
        }
        if fns.iter().any(|f| f.dim() != k) {
            return Err(Error::InvalidParameter(
                "factor dimension does not match k".into(),
            ));
        }
        let all_gauss = fns.iter().all(|f| f.gauss_exp().is_some());
        let joint_dim = n * k;
        let method = match self.backend {
            BackendKind::Auto => {
                if all_gauss {
                    Method::ClosedForm
                } else if joint_dim <= 6 {
                    Method::Quadrature
                } else {
                    Method::MonteCarlo
                }
            }
            BackendKind::ClosedForm => Method::ClosedForm,
            BackendKind::Quadrature => Method::Quadrature,
            BackendKind::MonteCarlo => Method::MonteCarlo,
        };

        match method {
            Method::ClosedForm => {
                if !all_gauss {
                    return Err(Error::UnsupportedBackend(
                        "closed-form product mean needs oracle-family factors".into(),
                    ));
                }
                let cov = BlockCovariance::constant_correlation(n, k, frame.t())?;
                let (curv, lin, offset) = stacked_exponent(fns, k);
                let log_val = log_gaussian_exp_integral_cov(&curv, &lin, cov.matrix())? + offset;
                Ok(EstimateWithError::closed(log_val.exp()))
            }
            Method::Quadrature => {
                let ops = crate::frames::lifted_frame_operators(frame, k);
                let (tilt, _) = joint_tilt(fns, &ops, joint_dim);
                let grid_eval = move |z: &DVector<f64>| {
                    let mut acc = 0.0;
                    for (f, op) in fns.iter().zip(&ops) {
                        acc += f.log_eval(&(op * z));
                        if acc == f64::NEG_INFINITY {
                            break;
                        }
                    }
                    signed_from_log(acc)
                };
                self.quad_scalar(joint_dim, tilt, grid_eval)
            }
            Method::MonteCarlo => {
                self.mc_tuples(frame, k, SALT_PRODUCT, |tuple| {
                    let mut acc = 0.0;
                    for (f, x) in fns.iter().zip(tuple) {
                        acc += f.log_eval(x);
                        if acc == f64::NEG_INFINITY {
                            break;
                        }
                    }
                    acc.exp()
                })
            }
        }
    }

    /// `E f((1/n) sum_i X_i)` over the joint law induced by the frame.
    pub fn mean_of_average(
        &self,
        f: &FunctionModel,
        frame: &CorrelationFrame,
        k: usize,
    ) -> Result<EstimateWithError> {
        if f.dim() != k {
            return Err(Error::InvalidParameter(
                "function dimension does not match k".into(),
            ));
        }
        let n = frame.n();
        let joint_dim = n * k;
        let method = match self.backend {
            BackendKind::Auto => {
                if f.gauss_exp().is_some() {
                    Method::ClosedForm
                } else if joint_dim <= 6 {
                    Method::Quadrature
                } else {
                    Method::MonteCarlo
                }
            }
            BackendKind::ClosedForm => Method::ClosedForm,
            BackendKind::Quadrature => Method::Quadrature,
            BackendKind::MonteCarlo => Method::MonteCarlo,
        };

        match method {
            Method::ClosedForm => {
                let g = f.gauss_exp().ok_or_else(|| {
                    Error::UnsupportedBackend(
                        "closed-form average mean needs an oracle-family function".into(),
                    )
                })?;
                // law of the average from the block covariance itself
                let cov = BlockCovariance::constant_correlation(n, k, frame.t())?;
                let mut avg_cov = DMatrix::zeros(k, k);
                for i in 0..n {
                    for j in 0..n {
                        avg_cov += cov.block(i, j);
                    }
                }
                avg_cov /= (n * n) as f64;
                let log_val =
                    log_gaussian_exp_integral_cov(g.curvature(), g.tilt(), &avg_cov)?
                        + g.offset();
                Ok(EstimateWithError::closed(log_val.exp()))
            }
            Method::Quadrature => {
                let ops = crate::frames::lifted_frame_operators(frame, k);
                let mut averager = DMatrix::zeros(k, joint_dim);
                for op in &ops {
                    averager += op;
                }
                averager /= n as f64;
                let tilt = f.gauss_exp().and_then(|g| {
                    let curv = averager.transpose() * g.curvature() * &averager;
                    let lin = averager.transpose() * g.tilt();
                    tilt_from_quadratic(&curv, &lin).ok()
                });
                self.quad_scalar(joint_dim, tilt, move |z| {
                    signed_from_log(f.log_eval(&(&averager * z)))
                })
            }
            Method::MonteCarlo => self.mc_tuples(frame, k, SALT_AVERAGE, |tuple| {
                let mut avg = DVector::zeros(k);
                for x in tuple {
                    avg += x;
                }
                avg /= n as f64;
                f.eval(&avg)
            }),
        }
    }

    /// Expectation of an arbitrary scalar functional of `X ~ N(0, cov)`,
    /// routed through the symmetric square root of `cov`. No closed form
    /// exists at this generality; `Auto` and `ClosedForm` fall back to
    /// quadrature in low dimension.
    pub fn gaussian_expectation<G>(
        &self,
        cov: &DMatrix<f64>,
        g: G,
    ) -> Result<EstimateWithError>
    where
        G: Fn(&DVector<f64>) -> f64 + Sync,
    {
        let dim = cov.nrows();
        if !linalg::is_symmetric(cov, 1e-12) {
            return Err(Error::InvalidParameter(
                "covariance must be symmetric".into(),
            ));
        }
        let root = linalg::sym_sqrt(cov);
        let use_mc = match self.backend {
            BackendKind::MonteCarlo => true,
            BackendKind::Auto => dim > 3,
            _ => false,
        };
        if use_mc {
            self.mc_scalar(dim, SALT_SCALAR, |z| g(&(&root * z)))
        } else {
            let fine_nodes = nodes_for_dim(self.quad_nodes, dim)?;
            let fine = QuadratureGrid::new(fine_nodes, dim)?;
            let coarse = QuadratureGrid::new(coarse_count(fine_nodes), dim)?;
            let h = |z: &DVector<f64>| signed_from(g(&(&root * z)));
            let value = fine.expectation(None, h);
            let coarse_value = coarse.expectation(None, h);
            Ok(EstimateWithError {
                value,
                method: Method::Quadrature,
                error: (value - coarse_value).abs(),
                count: fine.total_nodes(),
            })
        }
    }

    /// Vector-valued analogue of [`Self::gaussian_expectation`].
    pub fn gaussian_expectation_vector<G>(
        &self,
        cov: &DMatrix<f64>,
        g: G,
    ) -> Result<VectorEstimate>
    where
        G: Fn(&DVector<f64>) -> DVector<f64> + Sync,
    {
        let dim = cov.nrows();
        if !linalg::is_symmetric(cov, 1e-12) {
            return Err(Error::InvalidParameter(
                "covariance must be symmetric".into(),
            ));
        }
        let root = linalg::sym_sqrt(cov);
        let probe = g(&DVector::zeros(dim));
        let out_dim = probe.len();
        let use_mc = match self.backend {
            BackendKind::MonteCarlo => true,
            BackendKind::Auto => dim > 3,
            _ => false,
        };
        if use_mc {
            let batches = self.mc_batches.max(1) as u64;
            let per_batch = self.mc_samples.div_ceil(batches).max(1) as usize;
            let stats: Vec<(DVector<f64>, DVector<f64>)> = (0..batches)
                .into_par_iter()
                .map(|b| {
                    let sub = self
                        .sampler
                        .with_dimension(dim)
                        .substream(SALT_SCALAR.wrapping_shl(32).wrapping_add(b));
                    let mut sum = DVector::zeros(out_dim);
                    let mut sumsq = DVector::zeros(out_dim);
                    for z in sample_standard(&sub, per_batch) {
                        let v = g(&(&root * z));
                        for i in 0..out_dim {
                            sum[i] += v[i];
                            sumsq[i] += v[i] * v[i];
                        }
                    }
                    (sum, sumsq)
                })
                .collect();
            let n = (per_batch as u64 * batches) as f64;
            let mut value = DVector::zeros(out_dim);
            let mut error = DVector::zeros(out_dim);
            for (s, q) in &stats {
                value += s;
                error += q;
            }
            value /= n;
            for i in 0..out_dim {
                let var = ((error[i] - n * value[i] * value[i]) / (n - 1.0)).max(0.0);
                error[i] = (var / n).sqrt();
            }
            Ok(VectorEstimate {
                value,
                error,
                method: Method::MonteCarlo,
                count: per_batch as u64 * batches,
            })
        } else {
            let fine_nodes = nodes_for_dim(self.quad_nodes, dim)?;
            let fine = QuadratureGrid::new(fine_nodes, dim)?;
            let coarse = QuadratureGrid::new(coarse_count(fine_nodes), dim)?;
            let h = |z: &DVector<f64>| g(&(&root * z));
            let value = fine.expectation_vector(None, out_dim, &h);
            let coarse_value = coarse.expectation_vector(None, out_dim, &h);
            let error = DVector::from_fn(out_dim, |i, _| (value[i] - coarse_value[i]).abs());
            Ok(VectorEstimate {
                value,
                error,
                method: Method::Quadrature,
                count: fine.total_nodes(),
            })
        }
    }

    fn resolve(&self, dim: usize, closed_available: bool) -> Method {
        match self.backend {
            BackendKind::ClosedForm => Method::ClosedForm,
            BackendKind::Quadrature => Method::Quadrature,
            BackendKind::MonteCarlo => Method::MonteCarlo,
            BackendKind::Auto => {
                if closed_available {
                    Method::ClosedForm
                } else if dim <= 3 {
                    Method::Quadrature
                } else {
                    Method::MonteCarlo
                }
            }
        }
    }

    /// Quadrature with node-refinement error: evaluates the integrand on
    /// the full grid and on a coarser one; the difference is the error.
    fn quad_scalar<G>(
        &self,
        dim: usize,
        tilt: Option<(DVector<f64>, DMatrix<f64>)>,
        g: G,
    ) -> Result<EstimateWithError>
    where
        G: Fn(&DVector<f64>) -> (f64, f64) + Sync,
    {
        let fine_nodes = nodes_for_dim(self.quad_nodes, dim)?;
        let coarse_nodes = coarse_count(fine_nodes);
        let map = match tilt {
            Some((center, cov)) => Some(AffineMap::from_gaussian(center, &cov)?),
            None => None,
        };
        let fine = QuadratureGrid::new(fine_nodes, dim)?;
        let coarse = QuadratureGrid::new(coarse_nodes, dim)?;
        let value = fine.expectation(map.as_ref(), &g);
        let coarse_value = coarse.expectation(map.as_ref(), &g);
        Ok(EstimateWithError {
            value,
            method: Method::Quadrature,
            error: (value - coarse_value).abs(),
            count: fine.total_nodes(),
        })
    }

    /// Batched Monte Carlo mean with pooled standard error.
    fn mc_scalar<F>(&self, dim: usize, salt: u64, eval: F) -> Result<EstimateWithError>
    where
        F: Fn(&DVector<f64>) -> f64 + Sync,
    {
        let batches = self.mc_batches.max(1) as u64;
        let per_batch = self.mc_samples.div_ceil(batches).max(1) as usize;
        let stats: Vec<(f64, f64)> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let sub = self
                    .sampler
                    .with_dimension(dim)
                    .substream(salt.wrapping_shl(32).wrapping_add(b));
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for x in sample_standard(&sub, per_batch) {
                    let v = eval(&x);
                    sum += v;
                    sumsq += v * v;
                }
                (sum, sumsq)
            })
            .collect();
        self.finish_mc(stats, per_batch as u64 * batches)
    }

    /// Monte Carlo over correlated tuples drawn through the frame.
    fn mc_tuples<F>(
        &self,
        frame: &CorrelationFrame,
        k: usize,
        salt: u64,
        eval: F,
    ) -> Result<EstimateWithError>
    where
        F: Fn(&[DVector<f64>]) -> f64 + Sync,
    {
        let batches = self.mc_batches.max(1) as u64;
        let per_batch = self.mc_samples.div_ceil(batches).max(1) as usize;
        let stats: Vec<Result<(f64, f64)>> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let sub = self
                    .sampler
                    .substream(salt.wrapping_shl(32).wrapping_add(b));
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for tuple in sample_correlated_frame(frame, k, &sub, per_batch)? {
                    let v = eval(&tuple);
                    sum += v;
                    sumsq += v * v;
                }
                Ok((sum, sumsq))
            })
            .collect();
        let stats = stats.into_iter().collect::<Result<Vec<_>>>()?;
        self.finish_mc(stats, per_batch as u64 * batches)
    }

    /// Variant of [`Self::mc_scalar`] for integrands over the extended
    /// reals: a `-inf` sample short-circuits to a `-inf` mean.
    fn mc_scalar_allow_neg_inf<F>(
        &self,
        dim: usize,
        salt: u64,
        eval: F,
    ) -> Result<EstimateWithError>
    where
        F: Fn(&DVector<f64>) -> f64 + Sync,
    {
        let batches = self.mc_batches.max(1) as u64;
        let per_batch = self.mc_samples.div_ceil(batches).max(1) as usize;
        let stats: Vec<(f64, f64)> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let sub = self
                    .sampler
                    .with_dimension(dim)
                    .substream(salt.wrapping_shl(32).wrapping_add(b));
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for x in sample_standard(&sub, per_batch) {
                    let v = eval(&x);
                    sum += v;
                    sumsq += v * v;
                }
                (sum, sumsq)
            })
            .collect();
        let total = per_batch as u64 * batches;
        if stats.iter().any(|(s, _)| *s == f64::NEG_INFINITY) {
            return Ok(EstimateWithError {
                value: f64::NEG_INFINITY,
                method: Method::MonteCarlo,
                error: 0.0,
                count: total,
            });
        }
        self.finish_mc(stats, total)
    }

    fn finish_mc(&self, stats: Vec<(f64, f64)>, total: u64) -> Result<EstimateWithError> {
        let n = total as f64;
        let sum: f64 = stats.iter().map(|(s, _)| s).sum();
        let sumsq: f64 = stats.iter().map(|(_, q)| q).sum();
        let mean = sum / n;
        let variance = ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
        let error = (variance / n).sqrt();
        if !mean.is_finite() || !error.is_finite() {
            return Err(Error::Divergent(
                "Monte Carlo accumulation left the finite range".into(),
            ));
        }
        // relative-error heuristic; tiny absolute errors around a true
        // zero are fine
        if error > 0.5 * mean.abs() && error > 0.01 * (1.0 + mean.abs()) {
            return Err(Error::Divergent(format!(
                "Monte Carlo estimate {mean:.4e} has standard error {error:.4e} after {total} samples"
            )));
        }
        Ok(EstimateWithError {
            value: mean,
            method: Method::MonteCarlo,
            error,
            count: total,
        })
    }

    fn mc_entropy(&self, f: &FunctionModel) -> Result<EstimateWithError> {
        let batches = self.mc_batches.max(1) as u64;
        let per_batch = self.mc_samples.div_ceil(batches).max(1) as usize;
        let stats: Vec<(f64, f64)> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let sub = self
                    .sampler
                    .with_dimension(f.dim())
                    .substream(SALT_ENTROPY.wrapping_shl(32).wrapping_add(b));
                let mut sum_flogf = 0.0;
                let mut sum_f = 0.0;
                for x in sample_standard(&sub, per_batch) {
                    let lg = f.log_eval(&x);
                    if lg != f64::NEG_INFINITY {
                        let v = lg.exp();
                        sum_flogf += v * lg;
                        sum_f += v;
                    }
                }
                (sum_flogf, sum_f)
            })
            .collect();
        let n = (per_batch as u64 * batches) as f64;
        let m = per_batch as f64;
        let flogf = stats.iter().map(|(a, _)| a).sum::<f64>() / n;
        let mass = stats.iter().map(|(_, b)| b).sum::<f64>() / n;
        let value = plugin_entropy(flogf, mass);
        // spread of per-batch plug-in entropies as the error scale
        let batch_values: Vec<f64> = stats
            .iter()
            .map(|(a, b)| plugin_entropy(a / m, b / m))
            .collect();
        let bm = batch_values.iter().sum::<f64>() / batches as f64;
        let bvar = batch_values.iter().map(|v| (v - bm).powi(2)).sum::<f64>()
            / (batches as f64 - 1.0).max(1.0);
        let error = (bvar / batches as f64).sqrt();
        if !value.is_finite() {
            return Err(Error::Divergent("entropy estimate not finite".into()));
        }
        Ok(EstimateWithError {
            value,
            method: Method::MonteCarlo,
            error,
            count: per_batch as u64 * batches,
        })
    }
}

fn has_moment_closed_form(f: &FunctionModel) -> bool {
    f.gauss_exp().is_some() || f.half_space().is_some()
}

fn plugin_entropy(flogf: f64, mass: f64) -> f64 {
    if mass <= 0.0 {
        return 0.0;
    }
    flogf - mass * mass.ln()
}

/// Which derivative functional to integrate.
#[derive(Debug, Clone, Copy)]
enum DerivativeFunctional {
    Stein,
    Dirichlet,
    Deficit,
    Laplacian,
}

impl DerivativeFunctional {
    /// Power of `f` whose tilted Gaussian to center the grid on.
    fn tilt_order(self) -> f64 {
        match self {
            DerivativeFunctional::Stein | DerivativeFunctional::Laplacian => 1.0,
            DerivativeFunctional::Dirichlet | DerivativeFunctional::Deficit => 2.0,
        }
    }

    /// The polynomial multiplying `f^{tilt_order}` for the oracle family.
    fn polynomial_factor(self, g: &GaussExpFunction, x: &DVector<f64>) -> f64 {
        let grad_log = g.tilt() - g.curvature() * x;
        match self {
            DerivativeFunctional::Stein => x.dot(&grad_log),
            DerivativeFunctional::Dirichlet => grad_log.norm_squared(),
            DerivativeFunctional::Deficit => g.curvature().trace(),
            DerivativeFunctional::Laplacian => {
                grad_log.norm_squared() - g.curvature().trace()
            }
        }
    }

    fn raw_value(self, f: &FunctionModel, x: &DVector<f64>) -> f64 {
        match self {
            DerivativeFunctional::Stein => x.dot(&f.gradient(x)),
            DerivativeFunctional::Dirichlet => f.gradient(x).norm_squared(),
            DerivativeFunctional::Deficit => {
                let v = f.eval(x);
                if v == 0.0 {
                    0.0
                } else {
                    v * v * f.exponent_laplacian(x)
                }
            }
            DerivativeFunctional::Laplacian => f.laplacian(x),
        }
    }
}

/// Closed forms for the derivative functionals on the oracle family, all
/// through the tilted-Gaussian representation `E[f^s q(X)] = m_s E_Y q(Y)`
/// with `Y ~ N(mean_s, cov_s)`.
fn gauss_exp_derivative_functional(
    g: &GaussExpFunction,
    kind: DerivativeFunctional,
) -> Result<f64> {
    let s = kind.tilt_order();
    let (log_mass, mean, cov) = g.tilted_gaussian(s)?;
    let mass = log_mass.exp();
    let a = g.tilt();
    let amat = g.curvature();
    // E_Y |a - A Y|^2 = |a - A mean|^2 + tr(A cov A)
    let centered = a - amat * &mean;
    let quad = (amat * &cov * amat).trace();
    Ok(match kind {
        DerivativeFunctional::Stein => {
            // E_Y <Y, a - A Y> = <mean, a - A mean> - tr(A cov)
            mass * (mean.dot(&centered) - (amat * &cov).trace())
        }
        DerivativeFunctional::Dirichlet => mass * (centered.norm_squared() + quad),
        DerivativeFunctional::Deficit => mass * amat.trace(),
        DerivativeFunctional::Laplacian => {
            mass * (centered.norm_squared() + quad - amat.trace())
        }
    })
}

/// Closed-form entropy of the oracle family.
fn gauss_exp_entropy(g: &GaussExpFunction) -> Result<f64> {
    let (log_mass, mean, cov) = g.tilted_gaussian(1.0)?;
    let mass = log_mass.exp();
    // E_Y log f(Y) = -tr(A cov)/2 - mean'A mean/2 + <a, mean> + c
    let amat = g.curvature();
    let e_log = -0.5 * (amat * &cov).trace() - 0.5 * (amat * &mean).dot(&mean)
        + g.tilt().dot(&mean)
        + g.offset();
    Ok(mass * (e_log - log_mass))
}

/// `log E exp(-Y'CY/2 + l'Y)` for `Y ~ N(0, Cov)`; valid for singular
/// covariances through the symmetric square root.
fn log_gaussian_exp_integral_cov(
    curv: &DMatrix<f64>,
    lin: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let root = linalg::sym_sqrt(cov);
    let m = &root * curv * &root;
    let b = &root * lin;
    log_gaussian_exp_integral(&m, &b)
}

/// `log E exp(-Z'MZ/2 + b'Z)` over the standard Gaussian; needs
/// `I + M` positive definite.
fn log_gaussian_exp_integral(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    let dim = m.nrows();
    let shifted = DMatrix::<f64>::identity(dim, dim) + m;
    let log_det = linalg::sym_log_det(&shifted, 1e-10)?;
    let w = linalg::spd_solve(&shifted, b)?;
    Ok(0.5 * b.dot(&w) - 0.5 * log_det)
}

/// Tilted-Gaussian bulk of `exp(-z'Cz/2 + l'z) d(gamma)`.
fn tilt_from_quadratic(
    curv: &DMatrix<f64>,
    lin: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dim = curv.nrows();
    let shifted = DMatrix::<f64>::identity(dim, dim) + curv;
    let chol = shifted
        .cholesky()
        .ok_or_else(|| Error::NotIntegrable("joint exponent not integrable".into()))?;
    let cov = chol.inverse();
    let center = &cov * lin;
    Ok((center, cov))
}

/// Stacked block-diagonal exponent of a product of oracle functions.
fn stacked_exponent(
    fns: &[FunctionModel],
    k: usize,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = fns.len();
    let mut curv = DMatrix::zeros(n * k, n * k);
    let mut lin = DVector::zeros(n * k);
    let mut offset = 0.0;
    for (i, f) in fns.iter().enumerate() {
        let g = f.gauss_exp().expect("caller checked the family");
        curv.view_mut((i * k, i * k), (k, k)).copy_from(g.curvature());
        lin.rows_mut(i * k, k).copy_from(g.tilt());
        offset += g.offset();
    }
    (curv, lin, offset)
}

/// Joint-space tilt for a product of factors composed with frame
/// operators; `None` when any factor lacks an exponential form.
fn joint_tilt(
    fns: &[FunctionModel],
    ops: &[DMatrix<f64>],
    joint_dim: usize,
) -> (Option<(DVector<f64>, DMatrix<f64>)>, usize) {
    let mut curv = DMatrix::zeros(joint_dim, joint_dim);
    let mut lin = DVector::zeros(joint_dim);
    for (f, op) in fns.iter().zip(ops) {
        match f.gauss_exp() {
            Some(g) => {
                curv += op.transpose() * g.curvature() * op;
                lin += op.transpose() * g.tilt();
            }
            None => return (None, joint_dim),
        }
    }
    (tilt_from_quadratic(&curv, &lin).ok(), joint_dim)
}

/// Per-axis node counts: the requested budget in low dimension, capped
/// so the tensor grid stays within a tractable total.
fn nodes_for_dim(requested: usize, dim: usize) -> Result<usize> {
    let capped = match dim {
        0 => return Err(Error::InvalidParameter("dimension must be >= 1".into())),
        1..=3 => requested,
        4 => requested.min(24),
        5 => requested.min(12),
        6 => requested.min(9),
        _ => {
            return Err(Error::UnsupportedBackend(format!(
                "quadrature beyond dimension 6 (got {dim}); use Monte Carlo"
            )))
        }
    };
    Ok(capped.max(2))
}

/// Coarse companion grid for the refinement delta, kept even so no node
/// lands exactly on the origin.
fn coarse_count(fine: usize) -> usize {
    let mut c = (2 * fine / 3).max(2);
    if c % 2 == 1 {
        c += 1;
    }
    c.min(fine)
}

fn signed_from(v: f64) -> (f64, f64) {
    if v == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        (v.signum(), v.abs().ln())
    }
}

fn signed_from_log(log_v: f64) -> (f64, f64) {
    if log_v == f64::NEG_INFINITY {
        (0.0, f64::NEG_INFINITY)
    } else {
        (1.0, log_v)
    }
}

/// Propagates `x -> x^p` through an estimate (first-order in the error).
fn power_transform(raw: EstimateWithError, p: f64) -> EstimateWithError {
    let value = raw.value.powf(p);
    let error = if raw.value > 0.0 {
        (value * p / raw.value).abs() * raw.error
    } else {
        f64::INFINITY
    };
    EstimateWithError {
        value,
        error,
        ..raw
    }
}

/// Propagates `x -> exp(x)` through an estimate.
fn exp_transform(raw: EstimateWithError) -> EstimateWithError {
    let value = raw.value.exp();
    EstimateWithError {
        value,
        error: value * raw.error,
        ..raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{build_correlation_frame, build_sr_simplex};
    use crate::functions::ConvexPotentialPower;
    use approx::assert_abs_diff_eq;

    fn standard() -> FunctionModel {
        FunctionModel::GaussExp(GaussExpFunction::standard(1))
    }

    fn est(backend: BackendKind) -> Estimator {
        Estimator::new(backend).with_seed(123)
    }

    fn frame(n: usize, t: f64) -> CorrelationFrame {
        build_correlation_frame(&build_sr_simplex(n).unwrap(), t).unwrap()
    }

    #[test]
    fn moment_closed_and_quadrature_agree() {
        let f = standard();
        // M(1/2) = det(1.5)^{-1}
        let closed = est(BackendKind::ClosedForm).moment_m(&f, 0.5).unwrap();
        assert_abs_diff_eq!(closed.value, 1.0 / 1.5, epsilon = 1e-14);
        let quad = est(BackendKind::Quadrature).moment_m(&f, 0.5).unwrap();
        assert_abs_diff_eq!(quad.value, 1.0 / 1.5, epsilon = 1e-8);
        assert_eq!(quad.method, Method::Quadrature);
    }

    #[test]
    fn scaled_mean_values() {
        let f = standard();
        let quad = est(BackendKind::Quadrature).scaled_mean_h(&f, 0.5).unwrap();
        assert_abs_diff_eq!(quad.value, 1.5_f64.powf(-0.5), epsilon = 1e-8);
        // s = 0 is f(0)
        let zero = est(BackendKind::ClosedForm).scaled_mean_h(&f, 0.0).unwrap();
        assert_abs_diff_eq!(zero.value, 1.0, epsilon = 1e-15);
        // s = 1 equals the plain mean from moment_m
        let h1 = est(BackendKind::ClosedForm).scaled_mean_h(&f, 1.0).unwrap();
        let m1 = est(BackendKind::ClosedForm).moment_m(&f, 1.0).unwrap();
        assert_eq!(h1.value.to_bits(), m1.value.to_bits());
    }

    #[test]
    fn backends_agree_at_s_one() {
        let f = standard();
        let c = est(BackendKind::ClosedForm).moment_m(&f, 1.0).unwrap();
        let q = est(BackendKind::Quadrature).moment_m(&f, 1.0).unwrap();
        let mut mc_est = est(BackendKind::MonteCarlo);
        mc_est.mc_samples = 200_000;
        let m = mc_est.moment_m(&f, 1.0).unwrap();
        assert_abs_diff_eq!(c.value, q.value, epsilon = 1e-10);
        assert!((m.value - c.value).abs() < 4.0 * m.error, "{m:?} vs {c:?}");
    }

    #[test]
    fn monte_carlo_matches_closed_form_within_four_sigma() {
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.8, 0.5, -0.2));
        let c = est(BackendKind::ClosedForm).moment_m(&f, 2.0).unwrap();
        let mut e = est(BackendKind::MonteCarlo);
        e.mc_samples = 1_000_000;
        let m = e.moment_m(&f, 2.0).unwrap();
        assert!(
            (m.value - c.value).abs() < 4.0 * m.error,
            "mc {} vs closed {} (se {})",
            m.value,
            c.value,
            m.error
        );
    }

    #[test]
    fn entropy_closed_form_matches_hand_value() {
        // Ent(f^2) for f = e^{-x^2/2}: 3^{-1/2} (-1/3 + ln(3)/2)
        let f_squared = FunctionModel::GaussExp(GaussExpFunction::scalar(2.0, 0.0, 0.0));
        let expected = 3.0_f64.powf(-0.5) * (-1.0 / 3.0 + 3.0_f64.ln() / 2.0);
        let c = est(BackendKind::ClosedForm).entropy(&f_squared).unwrap();
        assert_abs_diff_eq!(c.value, expected, epsilon = 1e-13);
        let q = est(BackendKind::Quadrature).entropy(&f_squared).unwrap();
        assert_abs_diff_eq!(q.value, expected, epsilon = 1e-10);
    }

    #[test]
    fn entropy_of_constant_vanishes() {
        let c = FunctionModel::GaussExp(GaussExpFunction::scalar(0.0, 0.0, 0.7));
        for backend in [BackendKind::ClosedForm, BackendKind::Quadrature] {
            let e = est(backend).entropy(&c).unwrap();
            assert_abs_diff_eq!(e.value, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn entropy_is_scale_homogeneous() {
        // Ent(lambda f) = lambda Ent(f)
        let f = GaussExpFunction::scalar(1.0, 0.3, 0.0);
        let lam: f64 = 2.5;
        let scaled = GaussExpFunction::scalar(1.0, 0.3, lam.ln());
        let e = est(BackendKind::Quadrature);
        let base = e.entropy(&FunctionModel::GaussExp(f)).unwrap();
        let scaled_ent = e.entropy(&FunctionModel::GaussExp(scaled)).unwrap();
        assert_abs_diff_eq!(scaled_ent.value, lam * base.value, epsilon = 1e-9);
    }

    #[test]
    fn derivative_terms_match_hand_values() {
        let f = standard();
        let e = est(BackendKind::ClosedForm);
        // E <X, f'(X)> = -2^{-3/2}
        assert_abs_diff_eq!(
            e.stein_term(&f).unwrap().value,
            -(2.0_f64.powf(-1.5)),
            epsilon = 1e-14
        );
        // E |f'|^2 = 3^{-3/2}
        assert_abs_diff_eq!(
            e.dirichlet_term(&f).unwrap().value,
            3.0_f64.powf(-1.5),
            epsilon = 1e-14
        );
        // E f^2 Delta v = 3^{-1/2}
        assert_abs_diff_eq!(
            e.deficit_term(&f).unwrap().value,
            3.0_f64.powf(-0.5),
            epsilon = 1e-14
        );
        // E Delta f = E <X, grad f> by integration by parts
        assert_abs_diff_eq!(
            e.laplacian_term(&f).unwrap().value,
            e.stein_term(&f).unwrap().value,
            epsilon = 1e-13
        );
        // quadrature agrees
        let q = est(BackendKind::Quadrature);
        assert_abs_diff_eq!(
            q.stein_term(&f).unwrap().value,
            -(2.0_f64.powf(-1.5)),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            q.dirichlet_term(&f).unwrap().value,
            3.0_f64.powf(-1.5),
            epsilon = 1e-10
        );
    }

    #[test]
    fn exponential_laplacian_identity() {
        // A = 0: E Delta f = |a|^2 E f
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.0, 1.2, 0.1));
        let e = est(BackendKind::Quadrature);
        let lap = e.laplacian_term(&f).unwrap().value;
        let mean = e.moment_m(&f, 1.0).unwrap().value;
        assert_abs_diff_eq!(lap, 1.2 * 1.2 * mean, epsilon = 1e-9);
    }

    #[test]
    fn stein_for_centered_exponential_is_zero() {
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.0, 0.0, 0.4));
        let e = est(BackendKind::ClosedForm);
        assert_abs_diff_eq!(e.stein_term(&f).unwrap().value, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn correlated_product_closed_form_instance() {
        // n=2, k=1, t=0.5, f = e^{-x^2/2}: det([[2,.5],[.5,2]])^{-1/2}
        let f = frame(2, 0.5);
        let fns = vec![standard(), standard()];
        let c = est(BackendKind::ClosedForm)
            .correlated_product_mean(&fns, &f, 1)
            .unwrap();
        assert_abs_diff_eq!(c.value, 3.75_f64.powf(-0.5), epsilon = 1e-13);
        let q = est(BackendKind::Quadrature)
            .correlated_product_mean(&fns, &f, 1)
            .unwrap();
        assert_abs_diff_eq!(q.value, 3.75_f64.powf(-0.5), epsilon = 1e-10);
    }

    #[test]
    fn correlated_product_independence_and_duplication() {
        let fns = vec![standard(), standard()];
        // t = 0: product of means
        let c = est(BackendKind::ClosedForm)
            .correlated_product_mean(&fns, &frame(2, 0.0), 1)
            .unwrap();
        let mean = est(BackendKind::ClosedForm)
            .moment_m(&standard(), 1.0)
            .unwrap();
        assert_abs_diff_eq!(c.value, mean.value * mean.value, epsilon = 1e-13);
        // t = 1: E f^2
        let c = est(BackendKind::ClosedForm)
            .correlated_product_mean(&fns, &frame(2, 1.0), 1)
            .unwrap();
        assert_abs_diff_eq!(c.value, 3.0_f64.powf(-0.5), epsilon = 1e-13);
    }

    #[test]
    fn negative_correlation_product() {
        // n=2, t=-0.5: 2-D Gaussian integral with correlation -1/2
        let f = frame(2, -0.5);
        let fns = vec![standard(), standard()];
        let c = est(BackendKind::ClosedForm)
            .correlated_product_mean(&fns, &f, 1)
            .unwrap();
        // det(I + T) with T = [[1,-.5],[-.5,1]]: [[2,-.5],[-.5,2]] -> 3.75
        assert_abs_diff_eq!(c.value, 3.75_f64.powf(-0.5), epsilon = 1e-13);
        let q = est(BackendKind::Quadrature)
            .correlated_product_mean(&fns, &f, 1)
            .unwrap();
        assert_abs_diff_eq!(q.value, c.value, epsilon = 1e-10);
    }

    #[test]
    fn mean_of_average_matches_scaled_mean() {
        // n=2, t=0: E f((X1+X2)/2) = H(1/2)
        let c = est(BackendKind::ClosedForm)
            .mean_of_average(&standard(), &frame(2, 0.0), 1)
            .unwrap();
        assert_abs_diff_eq!(c.value, 1.5_f64.powf(-0.5), epsilon = 1e-13);
        let q = est(BackendKind::Quadrature)
            .mean_of_average(&standard(), &frame(2, 0.0), 1)
            .unwrap();
        assert_abs_diff_eq!(q.value, 1.5_f64.powf(-0.5), epsilon = 1e-9);
        // t=1: H(1) = E f
        let c = est(BackendKind::ClosedForm)
            .mean_of_average(&standard(), &frame(3, 1.0), 1)
            .unwrap();
        assert_abs_diff_eq!(c.value, 2.0_f64.powf(-0.5), epsilon = 1e-13);
    }

    #[test]
    fn geometric_mean_routes() {
        let f = standard();
        let c = est(BackendKind::ClosedForm).geometric_mean(&f).unwrap();
        assert_abs_diff_eq!(c.value, (-0.5_f64).exp(), epsilon = 1e-14);
        let q = est(BackendKind::Quadrature).geometric_mean(&f).unwrap();
        assert_abs_diff_eq!(q.value, (-0.5_f64).exp(), epsilon = 1e-9);
        // truncation kills the geometric mean (mass where f = 0)
        let t = crate::functions::truncate(&f, 2.0).unwrap();
        let g = est(BackendKind::Quadrature).geometric_mean(&t).unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn moment_limit_to_geometric_mean() {
        let e = est(BackendKind::ClosedForm);
        for f in [
            FunctionModel::GaussExp(GaussExpFunction::standard(1)),
            FunctionModel::GaussExp(GaussExpFunction::scalar(0.8, 0.2, -0.1)),
            FunctionModel::GaussExp(GaussExpFunction::scalar(-0.3, 0.1, 0.2)),
        ] {
            let g = e.geometric_mean(&f).unwrap().value;
            let m = e.moment_m(&f, 0.001).unwrap().value;
            assert!((m - g).abs() <= 1e-4 * (1.0 + g), "{m} vs {g}");
        }
    }

    #[test]
    fn divergence_guard_fires_on_heavy_tails() {
        // mean dominated by rare huge draws: the pooled standard error
        // stays comparable to the mean and trips the heuristic
        let mut e = est(BackendKind::MonteCarlo);
        e.mc_samples = 50_000;
        let result = e.mc_scalar(1, 99, |x| if x[0].abs() > 4.1 { 1e9 } else { 0.0 });
        assert!(matches!(result, Err(Error::Divergent(_))), "{result:?}");

        // the hard integrability guard for the oracle family
        let g = FunctionModel::GaussExp(GaussExpFunction::scalar(-0.5, 0.0, 0.0));
        assert!(matches!(
            e.moment_m(&g, 2.0),
            Err(Error::NotIntegrable(_))
        ));
    }

    #[test]
    fn quadrature_handles_non_oracle_families() {
        let p = FunctionModel::PowerPotential(ConvexPotentialPower::new(1, 3.0).unwrap());
        let q = est(BackendKind::Quadrature).moment_m(&p, 1.0).unwrap();
        // Monte Carlo cross-check at 4 sigma
        let mut e = est(BackendKind::MonteCarlo);
        e.mc_samples = 400_000;
        let m = e.moment_m(&p, 1.0).unwrap();
        assert!((q.value - m.value).abs() < 4.0 * m.error);
    }

    #[test]
    fn truncated_means_increase_with_radius() {
        let f = standard();
        let e = est(BackendKind::Quadrature);
        let mut last = 0.0;
        for radius in [1.0, 2.0, 4.0, 8.0] {
            let t = crate::functions::truncate(&f, radius).unwrap();
            let v = e.moment_m(&t, 1.0).unwrap().value;
            assert!(v >= last - 1e-12, "radius {radius}: {v} < {last}");
            last = v;
        }
        let full = e.moment_m(&f, 1.0).unwrap().value;
        assert!((full - last).abs() < 1e-9);
    }

    #[test]
    fn truncation_convergence_of_derivative_terms() {
        // A = 0.5 >= 0.2: all three functionals converge by R = 8
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.5, 0.2, 0.0));
        let sq = FunctionModel::GaussExp(GaussExpFunction::scalar(1.0, 0.4, 0.0));
        let e = est(BackendKind::Quadrature);
        let full_ent = e.entropy(&sq).unwrap().value;
        let full_dir = e.dirichlet_term(&f).unwrap().value;
        let full_def = e.deficit_term(&f).unwrap().value;
        let t8 = crate::functions::truncate(&f, 8.0).unwrap();
        let sq8 = crate::functions::truncate(&sq, 8.0).unwrap();
        assert!((e.entropy(&sq8).unwrap().value - full_ent).abs() < 1e-6);
        assert!((e.dirichlet_term(&t8).unwrap().value - full_dir).abs() < 1e-6);
        assert!((e.deficit_term(&t8).unwrap().value - full_def).abs() < 1e-6);
    }

    #[test]
    fn estimator_is_deterministic() {
        let f = standard();
        let e = est(BackendKind::MonteCarlo);
        let a = e.moment_m(&f, 1.0).unwrap();
        let b = e.moment_m(&f, 1.0).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.error.to_bits(), b.error.to_bits());
    }
}
