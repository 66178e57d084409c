//! Function families the inequality checks quantify over.
//!
//! The central family is [`GaussExpFunction`], `f(x) = exp(-x'Ax/2 + <a,x> + c)`:
//! closed under powers and argument scaling, with every functional the
//! checks need available in closed form. Writing `f = e^{-v}`, the
//! exponent is `v(x) = x'Ax/2 - <a,x> - c`, so the sign spectrum of `A`
//! certifies log-concavity (`A >= 0`) or log-convexity (`A <= 0`).
//!
//! The catalog additionally carries a few non-oracle shapes (half-space
//! indicators, radial potentials) whose functionals are only reachable by
//! quadrature or sampling; they keep the checks honest on functions with
//! no closed form.

use nalgebra::{DMatrix, DVector};


use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalue slack when classifying curvature signs.
const CLASS_TOL: f64 = 1e-12;

/// Margin below which `I + sA` counts as singular and the moment as
/// non-integrable.
const INTEGRABILITY_FLOOR: f64 = 1e-10;

/// Relative step for central finite differences.
const FD_STEP: f64 = 1e-5;

/// Claimed curvature of `log f`, as passed to directional checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogCurvature {
    LogConcave,
    LogConvex,
}

impl std::fmt::Display for LogCurvature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogCurvature::LogConcave => write!(f, "log-concave"),
            LogCurvature::LogConvex => write!(f, "log-convex"),
        }
    }
}

/// Certified convexity class of the exponent `v` in `f = e^{-v}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentClass {
    /// `v` convex: `f` log-concave.
    Convex,
    /// `v` concave: `f` log-convex.
    Concave,
    /// `v` affine: both at once.
    Both,
    Unknown,
}

impl ExponentClass {
    pub fn certifies(self, claim: LogCurvature) -> bool {
        matches!(
            (self, claim),
            (ExponentClass::Convex | ExponentClass::Both, LogCurvature::LogConcave)
                | (ExponentClass::Concave | ExponentClass::Both, LogCurvature::LogConvex)
        )
    }

    /// The claim this class naturally certifies, preferring log-concave
    /// for the affine case.
    pub fn natural_claim(self) -> Option<LogCurvature> {
        match self {
            ExponentClass::Convex | ExponentClass::Both => Some(LogCurvature::LogConcave),
            ExponentClass::Concave => Some(LogCurvature::LogConvex),
            ExponentClass::Unknown => None,
        }
    }
}

/// `f(x) = exp(-x'Ax/2 + <a,x> + c)` with symmetric `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussExpFunction {
    curvature: DMatrix<f64>,
    tilt: DVector<f64>,
    offset: f64,
    eigenvalues: Vec<f64>,
}

impl GaussExpFunction {
    pub fn new(curvature: DMatrix<f64>, tilt: DVector<f64>, offset: f64) -> Result<Self> {
        let k = tilt.len();
        if k == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if curvature.nrows() != k || curvature.ncols() != k {
            return Err(Error::InvalidParameter(format!(
                "curvature matrix is {}x{}, expected {k}x{k}",
                curvature.nrows(),
                curvature.ncols()
            )));
        }
        if !linalg::is_symmetric(&curvature, CLASS_TOL) {
            return Err(Error::InvalidParameter(
                "curvature matrix must be symmetric".into(),
            ));
        }
        if curvature.iter().any(|x| !x.is_finite())
            || tilt.iter().any(|x| !x.is_finite())
            || !offset.is_finite()
        {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        // Work with the exactly symmetric part from here on.
        let sym = (&curvature + curvature.transpose()) * 0.5;
        let eigenvalues = linalg::sym_eigenvalues(&sym);
        Ok(GaussExpFunction {
            curvature: sym,
            tilt,
            offset,
            eigenvalues,
        })
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(curvature: f64, tilt: f64, offset: f64) -> Self {
        GaussExpFunction::new(
            DMatrix::from_vec(1, 1, vec![curvature]),
            DVector::from_vec(vec![tilt]),
            offset,
        )
        .expect("scalar coefficients are always valid")
    }

    /// The standard witness `exp(-|x|^2/2)` in dimension `k`.
    pub fn standard(k: usize) -> Self {
        GaussExpFunction::new(DMatrix::identity(k, k), DVector::zeros(k), 0.0)
            .expect("identity curvature is valid")
    }

    pub fn dim(&self) -> usize {
        self.tilt.len()
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.curvature
    }

    pub fn tilt(&self) -> &DVector<f64> {
        &self.tilt
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn curvature_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn log_eval(&self, x: &DVector<f64>) -> f64 {
        -0.5 * (&self.curvature * x).dot(x) + self.tilt.dot(x) + self.offset
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.log_eval(x).exp()
    }

    pub fn exponent_class(&self) -> ExponentClass {
        let min = *self.eigenvalues.first().unwrap();
        let max = *self.eigenvalues.last().unwrap();
        match (min >= -CLASS_TOL, max <= CLASS_TOL) {
            (true, true) => ExponentClass::Both,
            (true, false) => ExponentClass::Convex,
            (false, true) => ExponentClass::Concave,
            (false, false) => ExponentClass::Unknown,
        }
    }

    /// `f^s` stays in the family: coefficients scale linearly.
    pub fn pow(&self, s: f64) -> GaussExpFunction {
        let sym = &self.curvature * s;
        GaussExpFunction {
            eigenvalues: self.eigenvalues.iter().map(|l| l * s).collect(),
            curvature: sym,
            tilt: &self.tilt * s,
            offset: self.offset * s,
        }
    }

    /// `x -> f(r x)` stays in the family.
    pub fn scale_argument(&self, r: f64) -> GaussExpFunction {
        GaussExpFunction {
            eigenvalues: self.eigenvalues.iter().map(|l| l * r * r).collect(),
            curvature: &self.curvature * (r * r),
            tilt: &self.tilt * r,
            offset: self.offset,
        }
    }

    /// Pointwise product `f * g` (exponents add).
    pub fn product(&self, other: &GaussExpFunction) -> Result<GaussExpFunction> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidParameter("dimension mismatch".into()));
        }
        GaussExpFunction::new(
            &self.curvature + &other.curvature,
            &self.tilt + &other.tilt,
            self.offset + other.offset,
        )
    }

    /// Guard for `E f^s`: requires `I + sA` positive definite.
    pub fn require_integrable(&self, s: f64) -> Result<()> {
        let worst = self
            .eigenvalues
            .iter()
            .map(|l| 1.0 + s * l)
            .fold(f64::INFINITY, f64::min);
        if worst <= INTEGRABILITY_FLOOR {
            return Err(Error::NotIntegrable(format!(
                "I + sA has minimum eigenvalue {worst:.3e} at s = {s}"
            )));
        }
        Ok(())
    }

    /// `log E f(X)^s` for standard Gaussian `X`.
    pub fn log_moment_sum(&self, s: f64) -> Result<f64> {
        self.require_integrable(s)?;
        let shifted = shifted_matrix(&self.curvature, s);
        let w = linalg::spd_solve(&shifted, &self.tilt)?;
        let log_det: f64 = self.eigenvalues.iter().map(|l| (1.0 + s * l).ln()).sum();
        Ok(s * self.offset + 0.5 * s * s * self.tilt.dot(&w) - 0.5 * log_det)
    }

    /// The Gaussian measure proportional to `f^s d(gamma)`: returns
    /// `(log mass, mean, covariance)` with mass `E f^s`.
    pub fn tilted_gaussian(&self, s: f64) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        self.require_integrable(s)?;
        let shifted = shifted_matrix(&self.curvature, s);
        let chol = shifted
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotIntegrable("I + sA not positive definite".into()))?;
        let cov = chol.inverse();
        let mean = &cov * (&self.tilt * s);
        Ok((self.log_moment_sum(s)?, mean, cov))
    }
}

fn shifted_matrix(a: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    let k = a.nrows();
    DMatrix::identity(k, k) + a * s
}

/// `M(s) = (E f(X)^s)^{1/s}` in closed form. The formula is a standard
/// Gaussian integral; the test suite cross-validates it against tensor
/// quadrature before anything else relies on it.
pub fn oracle_moment_m(f: &GaussExpFunction, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Err(Error::InvalidParameter(
            "moment order 0 is the geometric mean; use oracle_geometric_mean".into(),
        ));
    }
    Ok((f.log_moment_sum(s)? / s).exp())
}

/// `H(s) = E f(sqrt(s) X)` in closed form, `s >= 0`.
pub fn oracle_scaled_mean_h(f: &GaussExpFunction, s: f64) -> Result<f64> {
    if s < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "scaled mean needs s >= 0, got {s}"
        )));
    }
    f.require_integrable(s)?;
    let shifted = shifted_matrix(f.curvature(), s);
    let w = linalg::spd_solve(&shifted, f.tilt())?;
    let log_det: f64 = f
        .curvature_eigenvalues()
        .iter()
        .map(|l| (1.0 + s * l).ln())
        .sum();
    Ok((f.offset() + 0.5 * s * f.tilt().dot(&w) - 0.5 * log_det).exp())
}

/// `exp(E log f(X)) = exp(-tr(A)/2 + c)`, the `s -> 0` limit of `M(s)`.
pub fn oracle_geometric_mean(f: &GaussExpFunction) -> f64 {
    (-0.5 * f.curvature().trace() + f.offset()).exp()
}

/// Indicator of the half-space `<normal, x> <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceIndicator {
    normal: DVector<f64>,
    offset: f64,
}

impl HalfSpaceIndicator {
    pub fn new(normal: DVector<f64>, offset: f64) -> Result<Self> {
        if normal.norm() <= 1e-14 {
            return Err(Error::InvalidParameter(
                "half-space normal must be nonzero".into(),
            ));
        }
        if normal.iter().any(|x| !x.is_finite()) || !offset.is_finite() {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        Ok(HalfSpaceIndicator { normal, offset })
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        if self.normal.dot(x) <= self.offset {
            1.0
        } else {
            0.0
        }
    }

    /// `offset / |normal|`: the standardized threshold of the projection.
    fn standardized_offset(&self) -> f64 {
        self.offset / self.normal.norm()
    }

    /// `E f(X)^s = P(<n,X> <= b)` for any `s > 0` (powers of an indicator
    /// are the indicator).
    pub fn mass(&self) -> f64 {
        standard_normal_cdf(self.standardized_offset())
    }

    pub fn moment_m(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Err(Error::NotIntegrable(
                "indicator moments need s > 0".into(),
            ));
        }
        Ok(self.mass().powf(1.0 / s))
    }

    pub fn scaled_mean_h(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scaled mean needs s >= 0, got {s}"
            )));
        }
        if s == 0.0 {
            return Ok(if 0.0 <= self.offset { 1.0 } else { 0.0 });
        }
        Ok(standard_normal_cdf(self.standardized_offset() / s.sqrt()))
    }
}

/// Standard normal CDF through the machine-precision `erfc`.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `f(x) = exp(-|x|^beta / beta)` with convex exponent, `beta >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPotentialPower {
    dim: usize,
    beta: f64,
}

impl ConvexPotentialPower {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(beta >= 1.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "power potential needs beta >= 1, got {beta}"
            )));
        }
        Ok(ConvexPotentialPower { dim, beta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn log_eval(&self, x: &DVector<f64>) -> f64 {
        -x.norm().powf(self.beta) / self.beta
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = x.norm();
        if r == 0.0 {
            return DVector::zeros(self.dim);
        }
        // grad v = |x|^{beta-2} x, grad f = -f grad v
        let f = self.log_eval(x).exp();
        x * (-f * r.powf(self.beta - 2.0))
    }

    /// `Delta v = (k + beta - 2) |x|^{beta - 2}`. For `beta < 2` this has
    /// an integrable singularity at the origin; `0^0 = 1` handles the
    /// `beta = 2` case and a zero coefficient the `k = 1, beta = 1` one.
    fn exponent_laplacian(&self, x: &DVector<f64>) -> f64 {
        let coeff = self.dim as f64 + self.beta - 2.0;
        if coeff == 0.0 {
            return 0.0;
        }
        coeff * x.norm().powf(self.beta - 2.0)
    }

    fn laplacian(&self, x: &DVector<f64>) -> f64 {
        let r = x.norm();
        let f = self.log_eval(x).exp();
        f * (r.powf(2.0 * self.beta - 2.0) - self.exponent_laplacian(x))
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let r = x.norm();
        let f = self.log_eval(x).exp();
        if r == 0.0 {
            // limits: H_v -> I for beta = 2, 0 for beta > 2
            return if (self.beta - 2.0).abs() < 1e-12 {
                DMatrix::identity(self.dim, self.dim) * (-f)
            } else {
                DMatrix::zeros(self.dim, self.dim)
            };
        }
        let grad_v = x * r.powf(self.beta - 2.0);
        let hess_v = DMatrix::identity(self.dim, self.dim) * r.powf(self.beta - 2.0)
            + (x * x.transpose()) * ((self.beta - 2.0) * r.powf(self.beta - 4.0));
        (&grad_v * grad_v.transpose() - hess_v) * f
    }
}

/// `f(x) = |x|^4 / 4`: a polynomial catalog entry whose derivative
/// functionals are integrated exactly by any reasonable Hermite rule.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialQuartic {
    dim: usize,
}

impl RadialQuartic {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(RadialQuartic { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.25 * x.norm_squared().powi(2)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x * x.norm_squared()
    }

    fn laplacian(&self, x: &DVector<f64>) -> f64 {
        (self.dim as f64 + 2.0) * x.norm_squared()
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (x * x.transpose()) * 2.0 + DMatrix::identity(self.dim, self.dim) * x.norm_squared()
    }
}

/// A non-negative function together with everything the estimators need:
/// evaluation, derivatives (analytic where the family has them, central
/// differences otherwise), curvature class, and support information.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionModel {
    GaussExp(GaussExpFunction),
    HalfSpace(HalfSpaceIndicator),
    PowerPotential(ConvexPotentialPower),
    RadialQuartic(RadialQuartic),
    Truncated {
        inner: Box<FunctionModel>,
        radius: f64,
    },
    /// `f^e` for positive `e`, for families without a native power.
    Power {
        inner: Box<FunctionModel>,
        exponent: f64,
    },
}

impl FunctionModel {
    pub fn dim(&self) -> usize {
        match self {
            FunctionModel::GaussExp(f) => f.dim(),
            FunctionModel::HalfSpace(f) => f.dim(),
            FunctionModel::PowerPotential(f) => f.dim(),
            FunctionModel::RadialQuartic(f) => f.dim(),
            FunctionModel::Truncated { inner, .. } => inner.dim(),
            FunctionModel::Power { inner, .. } => inner.dim(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            FunctionModel::GaussExp(f) => f.eval(x),
            FunctionModel::HalfSpace(f) => f.eval(x),
            FunctionModel::PowerPotential(f) => f.log_eval(x).exp(),
            FunctionModel::RadialQuartic(f) => f.eval(x),
            FunctionModel::Truncated { inner, radius } => {
                if x.norm() <= *radius {
                    inner.eval(x)
                } else {
                    0.0
                }
            }
            FunctionModel::Power { .. } => self.log_eval(x).exp(),
        }
    }

    /// `log f(x)`, `-inf` where `f` vanishes.
    pub fn log_eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            FunctionModel::GaussExp(f) => f.log_eval(x),
            FunctionModel::HalfSpace(f) => {
                if f.eval(x) > 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            FunctionModel::PowerPotential(f) => f.log_eval(x),
            FunctionModel::RadialQuartic(f) => {
                let v = f.eval(x);
                if v == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    v.ln()
                }
            }
            FunctionModel::Truncated { inner, radius } => {
                if x.norm() <= *radius {
                    inner.log_eval(x)
                } else {
                    f64::NEG_INFINITY
                }
            }
            FunctionModel::Power { inner, exponent } => exponent * inner.log_eval(x),
        }
    }

    pub fn exponent_class(&self) -> ExponentClass {
        match self {
            FunctionModel::GaussExp(f) => f.exponent_class(),
            FunctionModel::HalfSpace(_) => ExponentClass::Convex,
            FunctionModel::PowerPotential(_) => ExponentClass::Convex,
            FunctionModel::RadialQuartic(_) => ExponentClass::Unknown,
            FunctionModel::Truncated { inner, .. } => match inner.exponent_class() {
                ExponentClass::Convex | ExponentClass::Both => ExponentClass::Convex,
                _ => ExponentClass::Unknown,
            },
            // positive powers scale the exponent and keep its curvature
            FunctionModel::Power { inner, .. } => inner.exponent_class(),
        }
    }

    pub fn support_radius(&self) -> f64 {
        match self {
            FunctionModel::Truncated { inner, radius } => inner.support_radius().min(*radius),
            FunctionModel::Power { inner, .. } => inner.support_radius(),
            _ => f64::INFINITY,
        }
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        match self {
            FunctionModel::GaussExp(_)
            | FunctionModel::PowerPotential(_)
            | FunctionModel::RadialQuartic(_) => true,
            FunctionModel::HalfSpace(_) => false,
            FunctionModel::Truncated { inner, .. } => inner.has_analytic_derivatives(),
            FunctionModel::Power { inner, .. } => inner.has_analytic_derivatives(),
        }
    }

    /// Whether this family supports the derivative-based functionals at
    /// all. Indicators do not: their distributional gradient is a surface
    /// measure that `E |grad f|^2` cannot see.
    pub fn supports_derivatives(&self) -> bool {
        match self {
            FunctionModel::HalfSpace(_) => false,
            FunctionModel::Truncated { inner, .. } => inner.supports_derivatives(),
            FunctionModel::Power { inner, .. } => inner.supports_derivatives(),
            _ => true,
        }
    }

    /// Per-family certificate that Gaussian integration by parts applies:
    /// the function and its first derivatives must be `gamma`-integrable
    /// with vanishing boundary terms. For the oracle family this is
    /// `I + A > 0`; the polynomial-growth families qualify outright, and
    /// truncation (bounded support) preserves the certificate.
    pub fn growth_certified(&self) -> bool {
        match self {
            FunctionModel::GaussExp(f) => f.require_integrable(1.0).is_ok(),
            FunctionModel::HalfSpace(_) => false,
            FunctionModel::PowerPotential(_) | FunctionModel::RadialQuartic(_) => true,
            FunctionModel::Truncated { inner, .. } => inner.supports_derivatives(),
            FunctionModel::Power { inner, .. } => inner.growth_certified(),
        }
    }

    pub fn gauss_exp(&self) -> Option<&GaussExpFunction> {
        match self {
            FunctionModel::GaussExp(f) => Some(f),
            _ => None,
        }
    }

    pub fn half_space(&self) -> Option<&HalfSpaceIndicator> {
        match self {
            FunctionModel::HalfSpace(f) => Some(f),
            _ => None,
        }
    }

    /// Gradient of `f`: analytic where the family has one, otherwise
    /// central differences with relative step. For truncated functions
    /// the gradient is taken on the open-ball interior and is zero
    /// outside (the boundary has measure zero).
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            FunctionModel::GaussExp(f) => {
                let g = f.tilt() - f.curvature() * x;
                g * f.eval(x)
            }
            FunctionModel::PowerPotential(f) => f.gradient(x),
            FunctionModel::RadialQuartic(f) => f.gradient(x),
            FunctionModel::HalfSpace(_) => DVector::zeros(self.dim()),
            FunctionModel::Truncated { inner, radius } => {
                if x.norm() < *radius {
                    inner.gradient(x)
                } else {
                    DVector::zeros(self.dim())
                }
            }
            FunctionModel::Power { inner, exponent } => {
                // grad f^e = e f^{e-1} grad f
                let lg = inner.log_eval(x);
                if lg == f64::NEG_INFINITY {
                    return DVector::zeros(self.dim());
                }
                inner.gradient(x) * (*exponent * ((exponent - 1.0) * lg).exp())
            }
        }
    }

    pub fn laplacian(&self, x: &DVector<f64>) -> f64 {
        match self {
            FunctionModel::GaussExp(f) => {
                let g = f.tilt() - f.curvature() * x;
                f.eval(x) * (g.norm_squared() - f.curvature().trace())
            }
            FunctionModel::PowerPotential(f) => f.laplacian(x),
            FunctionModel::RadialQuartic(f) => f.laplacian(x),
            FunctionModel::HalfSpace(_) => 0.0,
            FunctionModel::Truncated { inner, radius } => {
                if x.norm() < *radius {
                    inner.laplacian(x)
                } else {
                    0.0
                }
            }
            FunctionModel::Power { inner, exponent } => {
                // Delta f^e = e(e-1) f^{e-2} |grad f|^2 + e f^{e-1} Delta f
                let e = *exponent;
                let lg = inner.log_eval(x);
                if lg == f64::NEG_INFINITY {
                    return 0.0;
                }
                e * (e - 1.0) * ((e - 2.0) * lg).exp() * inner.gradient(x).norm_squared()
                    + e * ((e - 1.0) * lg).exp() * inner.laplacian(x)
            }
        }
    }

    /// `Delta v` for `f = e^{-v}`, zero outside the support.
    pub fn exponent_laplacian(&self, x: &DVector<f64>) -> f64 {
        match self {
            FunctionModel::GaussExp(f) => f.curvature().trace(),
            FunctionModel::PowerPotential(f) => f.exponent_laplacian(x),
            FunctionModel::HalfSpace(_) => 0.0,
            FunctionModel::RadialQuartic(f) => {
                // v = -log f; Delta v = |grad f|^2/f^2 - Delta f / f
                let val = f.eval(x);
                if val == 0.0 {
                    return 0.0;
                }
                let g = f.gradient(x);
                g.norm_squared() / (val * val) - f.laplacian(x) / val
            }
            FunctionModel::Truncated { inner, radius } => {
                if x.norm() < *radius {
                    inner.exponent_laplacian(x)
                } else {
                    0.0
                }
            }
            FunctionModel::Power { inner, exponent } => {
                exponent * inner.exponent_laplacian(x)
            }
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            FunctionModel::GaussExp(f) => {
                let g = f.tilt() - f.curvature() * x;
                (&g * g.transpose() - f.curvature()) * f.eval(x)
            }
            FunctionModel::PowerPotential(f) => f.hessian(x),
            FunctionModel::RadialQuartic(f) => f.hessian(x),
            FunctionModel::HalfSpace(_) => DMatrix::zeros(self.dim(), self.dim()),
            FunctionModel::Truncated { inner, radius } => {
                if x.norm() < *radius {
                    inner.hessian(x)
                } else {
                    DMatrix::zeros(self.dim(), self.dim())
                }
            }
            FunctionModel::Power { inner, exponent } => {
                // H(f^e) = e f^{e-1} H_f + e(e-1) f^{e-2} grad f grad f^T
                let e = *exponent;
                let lg = inner.log_eval(x);
                if lg == f64::NEG_INFINITY {
                    return DMatrix::zeros(self.dim(), self.dim());
                }
                let g = inner.gradient(x);
                inner.hessian(x) * (e * ((e - 1.0) * lg).exp())
                    + (&g * g.transpose()) * (e * (e - 1.0) * ((e - 2.0) * lg).exp())
            }
        }
    }

    /// Central-difference gradient, the fallback contract every analytic
    /// gradient is tested against.
    pub fn gradient_fd(&self, x: &DVector<f64>) -> DVector<f64> {
        let h = FD_STEP * x.norm().max(1.0);
        let mut g = DVector::zeros(self.dim());
        let mut probe = x.clone();
        for i in 0..self.dim() {
            probe[i] = x[i] + h;
            let plus = self.eval(&probe);
            probe[i] = x[i] - h;
            let minus = self.eval(&probe);
            probe[i] = x[i];
            g[i] = (plus - minus) / (2.0 * h);
        }
        g
    }

    pub fn laplacian_fd(&self, x: &DVector<f64>) -> f64 {
        let h = FD_STEP * x.norm().max(1.0);
        let center = self.eval(x);
        let mut acc = 0.0;
        let mut probe = x.clone();
        for i in 0..self.dim() {
            probe[i] = x[i] + h;
            let plus = self.eval(&probe);
            probe[i] = x[i] - h;
            let minus = self.eval(&probe);
            probe[i] = x[i];
            acc += (plus - 2.0 * center + minus) / (h * h);
        }
        acc
    }

    /// Integrability guard shared by the moment estimators. Families
    /// bounded by 1 are integrable for every `s > 0`; the oracle family
    /// delegates to its eigenvalue check; polynomials are integrable for
    /// positive integer-like powers of moments we use (s > 0).
    pub fn require_integrable_moment(&self, s: f64) -> Result<()> {
        match self {
            FunctionModel::GaussExp(f) => f.require_integrable(s),
            FunctionModel::HalfSpace(_) => {
                if s > 0.0 {
                    Ok(())
                } else {
                    Err(Error::NotIntegrable(
                        "indicator moments need s > 0".into(),
                    ))
                }
            }
            FunctionModel::PowerPotential(_) | FunctionModel::RadialQuartic(_) => {
                if s > 0.0 {
                    Ok(())
                } else {
                    Err(Error::NotIntegrable(
                        "vanishing functions need s > 0".into(),
                    ))
                }
            }
            FunctionModel::Truncated { inner, .. } => {
                // truncation only shrinks moments
                match inner.require_integrable_moment(s) {
                    Ok(()) => Ok(()),
                    // bounded support makes everything integrable
                    Err(_) if self.support_radius().is_finite() => Ok(()),
                    Err(e) => Err(e),
                }
            }
            FunctionModel::Power { inner, exponent } => {
                inner.require_integrable_moment(s * exponent)
            }
        }
    }

    /// Gaussian bulk `(mean, covariance)` of the tilted measure
    /// `f^s d(gamma)` when the family knows it, used to adapt quadrature
    /// grids. `None` falls back to the plain grid.
    pub fn quadrature_tilt(&self, s: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            FunctionModel::GaussExp(f) => f
                .tilted_gaussian(s)
                .ok()
                .map(|(_, mean, cov)| (mean, cov)),
            FunctionModel::Power { inner, exponent } => inner.quadrature_tilt(s * exponent),
            _ => None,
        }
    }

    /// `f^e` for `e > 0`, staying inside the closed-form family where
    /// possible (oracle powers, idempotent indicators).
    pub fn powered(&self, exponent: f64) -> Result<FunctionModel> {
        if !(exponent > 0.0) || !exponent.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "power must be positive and finite, got {exponent}"
            )));
        }
        Ok(match self {
            FunctionModel::GaussExp(g) => FunctionModel::GaussExp(g.pow(exponent)),
            FunctionModel::HalfSpace(h) => FunctionModel::HalfSpace(h.clone()),
            _ => FunctionModel::Power {
                inner: Box::new(self.clone()),
                exponent,
            },
        })
    }
}

/// Restricts `f` to the centered closed ball of the given radius.
pub fn truncate(f: &FunctionModel, radius: f64) -> Result<FunctionModel> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation radius must be positive, got {radius}"
        )));
    }
    Ok(FunctionModel::Truncated {
        inner: Box::new(f.clone()),
        radius,
    })
}
