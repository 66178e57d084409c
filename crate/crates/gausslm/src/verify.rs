//! Executable inequality checks returning error-qualified verdicts.
//!
//! A check never weakens its claim to pass: deterministic backends are
//! held to a scale-aware tolerance (plus their own refinement deltas),
//! while sampling noise can only downgrade a would-be violation to
//! `Indeterminate` — statistical evidence alone cannot refute an exact
//! statement.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimate::{EstimateWithError, Estimator, Method};
use crate::frames::{build_correlation_frame, build_sr_simplex, CorrelationFrame};
use crate::functions::{FunctionModel, GaussExpFunction, LogCurvature};
use crate::gaussian::{psd_order, BlockCovariance, PsdOrder};

/// Scale factor of the deterministic-backend tolerance.
pub const DETERMINISTIC_TOL: f64 = 1e-9;

/// Multiplier on combined standard errors for stochastic tolerances.
pub const SIGMA_MULTIPLIER: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Leq,
    Geq,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Holds,
    Violated,
    Indeterminate,
    Vacuous,
}

/// Outcome of one inequality check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityVerdict {
    pub check: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub lhs: Option<EstimateWithError>,
    pub rhs: Option<EstimateWithError>,
    pub relation: Relation,
    /// Signed margin in the asserted direction; negative means the
    /// asserted relation fails by that much.
    pub slack: f64,
    #[serde(rename = "tol")]
    pub tolerance: f64,
    pub status: VerdictStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl InequalityVerdict {
    pub fn holds(&self) -> bool {
        self.status == VerdictStatus::Holds
    }

    fn vacuous(check: &str, params: BTreeMap<String, serde_json::Value>, why: String) -> Self {
        InequalityVerdict {
            check: check.to_string(),
            params,
            lhs: None,
            rhs: None,
            relation: Relation::Leq,
            slack: f64::NAN,
            tolerance: f64::NAN,
            status: VerdictStatus::Vacuous,
            note: Some(why),
        }
    }
}

/// Builds a verdict from two successful estimates.
fn conclude(
    check: &str,
    params: BTreeMap<String, serde_json::Value>,
    lhs: EstimateWithError,
    rhs: EstimateWithError,
    relation: Relation,
) -> InequalityVerdict {
    let slack = match relation {
        Relation::Leq => rhs.value - lhs.value,
        Relation::Geq => lhs.value - rhs.value,
        Relation::Eq => -(lhs.value - rhs.value).abs(),
    };
    let deterministic = lhs.method.is_deterministic() && rhs.method.is_deterministic();
    let stochastic_tol =
        SIGMA_MULTIPLIER * (lhs.error * lhs.error + rhs.error * rhs.error).sqrt();
    let tolerance = if deterministic {
        // scale-aware floor plus the backends' own error estimates
        (DETERMINISTIC_TOL * (1.0 + lhs.value.abs() + rhs.value.abs())).max(stochastic_tol)
    } else {
        stochastic_tol
    };
    let status = if slack >= -tolerance {
        VerdictStatus::Holds
    } else if deterministic {
        VerdictStatus::Violated
    } else {
        VerdictStatus::Indeterminate
    };
    InequalityVerdict {
        check: check.to_string(),
        params,
        lhs: Some(lhs),
        rhs: Some(rhs),
        relation,
        slack,
        tolerance,
        status,
        note: None,
    }
}

/// One side of a comparison after estimation: either a value or the
/// reason the claim is vacuous. Hard errors never reach this type.
#[derive(Debug, Clone)]
enum Side {
    Value(EstimateWithError),
    Vacuous(String),
}

/// Classifies estimate failures: integrability and divergence make the
/// claim vacuous; anything else propagates as a hard error.
fn side(r: Result<EstimateWithError>) -> Result<Side> {
    match r {
        Ok(v) => Ok(Side::Value(v)),
        Err(e) if e.is_vacuous() => Ok(Side::Vacuous(e.to_string())),
        Err(e) => Err(e),
    }
}

fn conclude_sides(
    check: &str,
    params: BTreeMap<String, serde_json::Value>,
    relation: Relation,
    lhs: Side,
    rhs: Side,
) -> InequalityVerdict {
    match (lhs, rhs) {
        (Side::Value(l), Side::Value(r)) => conclude(check, params, l, r, relation),
        (Side::Vacuous(w), _) | (_, Side::Vacuous(w)) => {
            InequalityVerdict::vacuous(check, params, w)
        }
    }
}

fn run_sides(
    check: &str,
    params: BTreeMap<String, serde_json::Value>,
    relation: Relation,
    lhs: Result<EstimateWithError>,
    rhs: Result<EstimateWithError>,
) -> Result<InequalityVerdict> {
    Ok(conclude_sides(check, params, relation, side(lhs)?, side(rhs)?))
}

fn base_params(pairs: &[(&str, serde_json::Value)]) -> BTreeMap<String, serde_json::Value> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// Builds the correlation frame for `(n, t)`.
fn frame_for(n: usize, t: f64) -> Result<CorrelationFrame> {
    build_correlation_frame(&build_sr_simplex(n)?, t)
}

/// The square-root moment comparison: for a log-concave `f` and
/// `s <= 1`, `E f(sqrt(s) X) >= (E f^s)^{1/s}`, with all three reversals
/// as the claim and the exponent range flip. At `s = 0` the right side
/// is the geometric mean `exp(E log f)`.
///
/// The claimed curvature is trusted, not re-derived: a deliberately
/// wrong claim must surface as `Violated`.
pub fn check_sqrt_moment(
    est: &Estimator,
    f: &FunctionModel,
    s: f64,
    claim: LogCurvature,
) -> Result<InequalityVerdict> {
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "moment comparisons need s >= 0, got {s}"
        )));
    }
    let params = base_params(&[("s", json!(s)), ("claim", json!(claim))]);
    let relation = match (claim, s <= 1.0) {
        (LogCurvature::LogConcave, true) => Relation::Geq,
        (LogCurvature::LogConcave, false) => Relation::Leq,
        (LogCurvature::LogConvex, true) => Relation::Leq,
        (LogCurvature::LogConvex, false) => Relation::Geq,
    };
    let lhs = est.scaled_mean_h(f, s);
    let rhs = if s == 0.0 {
        est.geometric_mean(f)
    } else {
        est.moment_m(f, s)
    };
    run_sides("sqrt-moment", params, relation, lhs, rhs)
}

/// The three-term chain for log-concave `f` over a correlated tuple:
/// `E (prod f(X_i))^{1/n} <= (E f^{p/n})^{n/p} <= E f((1/n) sum X_i)`
/// with `p = (n-1)t + 1`, `t in [0,1]`.
pub fn check_chain(
    est: &Estimator,
    f: &FunctionModel,
    n: usize,
    t: f64,
    k: usize,
) -> Result<[InequalityVerdict; 2]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "the chain needs t in [0, 1], got {t}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need n >= 2".into()));
    }
    let frame = frame_for(n, t)?;
    let p = frame.p();
    let params = base_params(&[
        ("n", json!(n)),
        ("t", json!(t)),
        ("k", json!(k)),
        ("p", json!(p)),
    ]);

    let root = f.powered(1.0 / n as f64)?;
    let factors: Vec<FunctionModel> = (0..n).map(|_| root.clone()).collect();
    let left = side(est.correlated_product_mean(&factors, &frame, k))?;
    let middle = side(est.moment_m(f, p / n as f64))?;
    let right = side(est.mean_of_average(f, &frame, k))?;

    let first = conclude_sides(
        "chain/left",
        params.clone(),
        Relation::Leq,
        left,
        middle.clone(),
    );
    let second = conclude_sides("chain/right", params, Relation::Leq, middle, right);
    Ok([first, second])
}

/// Two-sided block Hölder bounds for measurable factors over the
/// correlated tuple: with `p = (n-1)t + 1` and `q = 1 - t`,
/// `prod (E f_i^q)^{1/q} <= E prod f_i(X_i) <= prod (E f_i^p)^{1/p}`
/// for `t >= 0`, with `p` and `q` swapping roles for `t <= 0`. A zero
/// exponent is interpreted as the geometric-mean limit.
///
/// The covariance hypothesis (`T <= pI` and `T >= qI`, or swapped) is
/// audited through the PSD order before trusting the bounds.
pub fn check_block_holder(
    est: &Estimator,
    fns: &[FunctionModel],
    n: usize,
    t: f64,
    k: usize,
) -> Result<[InequalityVerdict; 2]> {
    if n < 2 {
        return Err(Error::InvalidParameter("need n >= 2".into()));
    }
    if fns.len() != n {
        return Err(Error::InvalidParameter(format!(
            "need {n} factors, got {}",
            fns.len()
        )));
    }
    let frame = frame_for(n, t)?;
    let p = frame.p();
    let q = frame.q();
    audit_covariance_order(n, k, t, p, q)?;

    let params = base_params(&[
        ("n", json!(n)),
        ("t", json!(t)),
        ("k", json!(k)),
        ("p", json!(p)),
        ("q", json!(q)),
    ]);

    // exponents of the lower and upper product bounds
    let (lower_exp, upper_exp) = if t >= 0.0 { (q, p) } else { (p, q) };
    let product = side(est.correlated_product_mean(fns, &frame, k))?;
    let lower = side(product_of_power_means(est, fns, lower_exp))?;
    let upper = side(product_of_power_means(est, fns, upper_exp))?;

    let first = conclude_sides(
        "block-holder/lower",
        params.clone(),
        Relation::Leq,
        lower,
        product.clone(),
    );
    let second = conclude_sides("block-holder/upper", params, Relation::Leq, product, upper);
    Ok([first, second])
}

/// `T` must sit between `q I` and `p I` (order depending on the sign of
/// `t`); a failed audit is a construction bug, not a vacuous claim.
fn audit_covariance_order(n: usize, k: usize, t: f64, p: f64, q: f64) -> Result<()> {
    let cov = BlockCovariance::constant_correlation(n, k, t)?;
    let dim = cov.dim();
    let p_eye = DMatrix::<f64>::identity(dim, dim) * p;
    let q_eye = DMatrix::<f64>::identity(dim, dim) * q;
    let (against_upper, against_lower) = if t >= 0.0 {
        (
            psd_order(cov.matrix(), &p_eye)?,
            psd_order(&q_eye, cov.matrix())?,
        )
    } else {
        (
            psd_order(cov.matrix(), &q_eye)?,
            psd_order(&p_eye, cov.matrix())?,
        )
    };
    for order in [against_upper, against_lower] {
        if !matches!(order, PsdOrder::LessEq | PsdOrder::Equal) {
            return Err(Error::InvalidParameter(format!(
                "covariance order audit failed for n={n} k={k} t={t}"
            )));
        }
    }
    Ok(())
}

/// `prod_i (E f_i^e)^{1/e}`, using the geometric mean when `e = 0`.
fn product_of_power_means(
    est: &Estimator,
    fns: &[FunctionModel],
    exponent: f64,
) -> Result<EstimateWithError> {
    let mut value = 1.0_f64;
    let mut error = 0.0_f64;
    let mut method = Method::ClosedForm;
    let mut count = 0u64;
    for f in fns {
        let part = if exponent.abs() < 1e-14 {
            est.geometric_mean(f)?
        } else {
            est.moment_m(f, exponent)?
        };
        // first-order error propagation for the product
        error = error * part.value.abs() + part.error * value.abs();
        value *= part.value;
        method = worse_method(method, part.method);
        count = count.max(part.count);
    }
    Ok(EstimateWithError {
        value,
        method,
        error,
        count,
    })
}

fn worse_method(a: Method, b: Method) -> Method {
    use Method::*;
    match (a, b) {
        (MonteCarlo, _) | (_, MonteCarlo) => MonteCarlo,
        (Quadrature, _) | (_, Quadrature) => Quadrature,
        _ => ClosedForm,
    }
}

/// Entropy against the Stein coupling: `Ent(f) >= (1/2) E <X, grad f>`
/// for log-concave `f`, reversed for log-convex.
pub fn check_entropy_stein(
    est: &Estimator,
    f: &FunctionModel,
    claim: LogCurvature,
) -> Result<InequalityVerdict> {
    let params = base_params(&[("claim", json!(claim))]);
    let relation = match claim {
        LogCurvature::LogConcave => Relation::Geq,
        LogCurvature::LogConvex => Relation::Leq,
    };
    let lhs = est.entropy(f);
    let rhs = est.stein_term(f).map(halve);
    run_sides("entropy-stein", params, relation, lhs, rhs)
}

/// Entropy against the averaged curvature: `Ent(f) >= (1/2) E Delta f`
/// for log-concave `f` with certified gradient growth, reversed for
/// log-convex.
pub fn check_entropy_laplacian(
    est: &Estimator,
    f: &FunctionModel,
    claim: LogCurvature,
) -> Result<InequalityVerdict> {
    let params = base_params(&[("claim", json!(claim))]);
    if !f.growth_certified() {
        return Ok(InequalityVerdict::vacuous(
            "entropy-laplacian",
            params,
            "function family lacks the gradient growth certificate".into(),
        ));
    }
    let relation = match claim {
        LogCurvature::LogConcave => Relation::Geq,
        LogCurvature::LogConvex => Relation::Leq,
    };
    let lhs = est.entropy(f);
    let rhs = est.laplacian_term(f).map(halve);
    run_sides("entropy-laplacian", params, relation, lhs, rhs)
}

fn halve(e: EstimateWithError) -> EstimateWithError {
    EstimateWithError {
        value: 0.5 * e.value,
        error: 0.5 * e.error,
        ..e
    }
}

/// Gaussian integration by parts in its second-derivative form: for
/// `X ~ N(0, T)` and a growth-certified `f`,
/// `E <X, grad f(X)> = E tr(T H_f(X))`.
pub fn check_integration_by_parts(
    est: &Estimator,
    f: &FunctionModel,
    covariance: &BlockCovariance,
) -> Result<InequalityVerdict> {
    let k = f.dim();
    if covariance.dim() != k {
        return Err(Error::InvalidParameter(
            "covariance dimension does not match the function".into(),
        ));
    }
    let params = base_params(&[("k", json!(k))]);
    if !f.growth_certified() {
        return Ok(InequalityVerdict::vacuous(
            "integration-by-parts",
            params,
            "function family lacks the gradient growth certificate".into(),
        ));
    }
    let t_matrix = covariance.matrix().clone();
    let lhs = est.gaussian_expectation(&t_matrix, |x| x.dot(&f.gradient(x)));
    let rhs = {
        let t_ref = &t_matrix;
        est.gaussian_expectation(t_ref, move |x| (t_ref * f.hessian(x)).trace())
    };
    run_sides("integration-by-parts", params, Relation::Eq, lhs, rhs)
}

/// The raw scalar integration-by-parts identity
/// `E X F(Y_1..Y_n) = sum_i E[X Y_i] E[dF/dy_i]` for jointly Gaussian
/// `(X, Y)` with the given `(1+n)`-dimensional covariance; `F` and its
/// gradient are supplied as callbacks. Returns the two sides.
pub fn ibp_scalar_sides<F, G>(
    est: &Estimator,
    joint_cov: &DMatrix<f64>,
    f: F,
    grad: G,
) -> Result<(EstimateWithError, EstimateWithError)>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let total = joint_cov.nrows();
    if total < 2 {
        return Err(Error::InvalidParameter(
            "joint covariance must cover X and at least one Y".into(),
        ));
    }
    let n = total - 1;
    let lhs = est.gaussian_expectation(joint_cov, |w| w[0] * f(&w.rows(1, n).into_owned()))?;

    let y_cov = joint_cov.view((1, 1), (n, n)).into_owned();
    let grad_mean = est.gaussian_expectation_vector(&y_cov, &grad)?;
    let mut value = 0.0;
    let mut error = 0.0;
    for i in 0..n {
        value += joint_cov[(0, i + 1)] * grad_mean.value[i];
        error += joint_cov[(0, i + 1)].abs() * grad_mean.error[i];
    }
    let rhs = EstimateWithError {
        value,
        method: grad_mean.method,
        error,
        count: grad_mean.count,
    };
    Ok((lhs, rhs))
}

/// The two-sided stability sandwich around the logarithmic Sobolev
/// inequality for `f = e^{-v}` with convex `v`:
/// `2 E|grad f|^2 - E f^2 Delta v <= Ent(f^2) <= 2 E|grad f|^2`.
pub fn check_log_sobolev_sandwich(
    est: &Estimator,
    f: &FunctionModel,
) -> Result<[InequalityVerdict; 2]> {
    if !f.exponent_class().certifies(LogCurvature::LogConcave) {
        return Err(Error::InvalidParameter(
            "the sandwich needs a certified log-concave function".into(),
        ));
    }
    let params: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    let squared = f.powered(2.0)?;
    let ent = side(est.entropy(&squared))?;
    let dirichlet = side(est.dirichlet_term(f))?;
    let deficit = side(est.deficit_term(f))?;

    let upper = match &dirichlet {
        Side::Value(d) => Side::Value(EstimateWithError {
            value: 2.0 * d.value,
            error: 2.0 * d.error,
            ..*d
        }),
        vac => vac.clone(),
    };
    let lower = match (&dirichlet, &deficit) {
        (Side::Value(d), Side::Value(df)) => Side::Value(EstimateWithError {
            value: 2.0 * d.value - df.value,
            method: worse_method(d.method, df.method),
            error: 2.0 * d.error + df.error,
            count: d.count.max(df.count),
        }),
        (vac @ Side::Vacuous(_), _) | (_, vac @ Side::Vacuous(_)) => vac.clone(),
    };

    let first = conclude_sides(
        "log-sobolev/lower",
        params.clone(),
        Relation::Leq,
        lower,
        ent.clone(),
    );
    let second = conclude_sides("log-sobolev/upper", params, Relation::Leq, ent, upper);
    Ok([first, second])
}

/// Exercises the direction logic itself: on the oracle family the
/// square-root moment slack must vanish at `s = 1` and be nonnegative on
/// the correct side of it.
pub fn slack_profile(
    est: &Estimator,
    f: &GaussExpFunction,
    claim: LogCurvature,
    s_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let model = FunctionModel::GaussExp(f.clone());
    s_grid
        .iter()
        .map(|&s| {
            check_sqrt_moment(est, &model, s, claim).map(|v| (s, v.slack))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::BackendKind;
    use approx::assert_abs_diff_eq;

    fn est() -> Estimator {
        Estimator::new(BackendKind::Auto).with_seed(7)
    }

    fn standard() -> FunctionModel {
        FunctionModel::GaussExp(GaussExpFunction::standard(1))
    }

    #[test]
    fn sqrt_moment_hand_instance() {
        // H(3) = 0.5 <= M(3) = 4^{-1/6}: log-concave, s > 1
        let v = check_sqrt_moment(&est(), &standard(), 3.0, LogCurvature::LogConcave).unwrap();
        assert_eq!(v.status, VerdictStatus::Holds);
        assert_eq!(v.relation, Relation::Leq);
        let lhs = v.lhs.unwrap();
        let rhs = v.rhs.unwrap();
        assert_abs_diff_eq!(lhs.value, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(rhs.value, 4.0_f64.powf(-1.0 / 6.0), epsilon = 1e-10);
    }

    #[test]
    fn sqrt_moment_equality_at_one() {
        let v = check_sqrt_moment(&est(), &standard(), 1.0, LogCurvature::LogConcave).unwrap();
        assert_eq!(v.status, VerdictStatus::Holds);
        assert_eq!(v.slack, 0.0);
    }

    #[test]
    fn sqrt_moment_exponential_equality() {
        // A = 0: equality for every s
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.0, 1.0, 0.0));
        for s in [0.0, 0.25, 1.0, 2.0, 3.0] {
            let v = check_sqrt_moment(&est(), &f, s, LogCurvature::LogConcave).unwrap();
            assert!(v.slack.abs() <= 1e-10, "s={s}: slack {}", v.slack);
            assert_eq!(v.status, VerdictStatus::Holds);
        }
    }

    #[test]
    fn sqrt_moment_teeth() {
        // log-convex g = e^{x^2/4} claimed log-concave at s = 1/2:
        // H = 1.15470 < M = 1.33333 must come out Violated
        let g = FunctionModel::GaussExp(GaussExpFunction::scalar(-0.5, 0.0, 0.0));
        let v = check_sqrt_moment(&est(), &g, 0.5, LogCurvature::LogConcave).unwrap();
        assert_eq!(v.status, VerdictStatus::Violated);
        assert!(v.slack < -0.17);
        // with the honest claim it holds
        let v = check_sqrt_moment(&est(), &g, 0.5, LogCurvature::LogConvex).unwrap();
        assert_eq!(v.status, VerdictStatus::Holds);
        let lhs = v.lhs.unwrap();
        assert_abs_diff_eq!(lhs.value, (4.0_f64 / 3.0).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn sqrt_moment_vacuous_when_not_integrable() {
        let g = FunctionModel::GaussExp(GaussExpFunction::scalar(-0.5, 0.0, 0.0));
        let v = check_sqrt_moment(&est(), &g, 3.0, LogCurvature::LogConvex).unwrap();
        assert_eq!(v.status, VerdictStatus::Vacuous);
        assert!(v.note.is_some());
    }

    #[test]
    fn sqrt_moment_at_zero_uses_geometric_mean() {
        let v = check_sqrt_moment(&est(), &standard(), 0.0, LogCurvature::LogConcave).unwrap();
        // f(0) = 1 >= exp(-1/2)
        let lhs = v.lhs.unwrap();
        let rhs = v.rhs.unwrap();
        assert_abs_diff_eq!(lhs.value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rhs.value, (-0.5_f64).exp(), epsilon = 1e-12);
        assert_eq!(v.status, VerdictStatus::Holds);
    }

    #[test]
    fn chain_hand_instance() {
        // n=2, t=0: left = middle = 1.5^{-1}, right = 1.5^{-1/2}
        let [left, right] = check_chain(&est(), &standard(), 2, 0.0, 1).unwrap();
        assert!(left.holds() && right.holds());
        assert_abs_diff_eq!(left.lhs.unwrap().value, 1.0 / 1.5, epsilon = 1e-10);
        assert_abs_diff_eq!(left.rhs.unwrap().value, 1.0 / 1.5, epsilon = 1e-10);
        assert_abs_diff_eq!(right.rhs.unwrap().value, 1.5_f64.powf(-0.5), epsilon = 1e-10);
    }

    #[test]
    fn chain_degenerate_t_one() {
        let [left, right] = check_chain(&est(), &standard(), 3, 1.0, 1).unwrap();
        assert!(left.holds() && right.holds());
        assert!(left.slack.abs() < 1e-9);
        assert!(right.slack.abs() < 1e-9);
    }

    #[test]
    fn chain_rejects_negative_t() {
        assert!(check_chain(&est(), &standard(), 2, -0.25, 1).is_err());
    }

    #[test]
    fn block_holder_hand_instance() {
        // n=2, t=0.5: 1.5^{-2} <= 3.75^{-1/2} <= 2.5^{-2/3}
        let fns = vec![standard(), standard()];
        let [lower, upper] = check_block_holder(&est(), &fns, 2, 0.5, 1).unwrap();
        assert!(lower.holds() && upper.holds());
        assert_abs_diff_eq!(lower.lhs.unwrap().value, 1.5_f64.powi(-2), epsilon = 1e-8);
        assert_abs_diff_eq!(
            lower.rhs.unwrap().value,
            3.75_f64.powf(-0.5),
            epsilon = 1e-8
        );
        assert_abs_diff_eq!(
            upper.rhs.unwrap().value,
            2.5_f64.powf(-2.0 / 3.0),
            epsilon = 1e-8
        );
    }

    #[test]
    fn block_holder_zero_t_collapses() {
        let fns = vec![standard(), standard()];
        let [lower, upper] = check_block_holder(&est(), &fns, 2, 0.0, 1).unwrap();
        assert!(lower.slack.abs() < 1e-10);
        assert!(upper.slack.abs() < 1e-10);
    }

    #[test]
    fn block_holder_reversed_branch() {
        // n=2, t=-0.5: p = 0.5, q = 1.5, roles swapped
        let fns = vec![standard(), standard()];
        let [lower, upper] = check_block_holder(&est(), &fns, 2, -0.5, 1).unwrap();
        assert!(lower.holds(), "{lower:?}");
        assert!(upper.holds(), "{upper:?}");
        // lower bound uses exponent p = 0.5: (E f^{1/2})^2 = 1.5^{-1}
        // per factor, squared over the two factors
        assert_abs_diff_eq!(lower.lhs.unwrap().value, 1.5_f64.powi(-2), epsilon = 1e-8);
    }

    #[test]
    fn entropy_stein_hand_values() {
        let v = check_entropy_stein(&est(), &standard(), LogCurvature::LogConcave).unwrap();
        assert!(v.holds());
        let lhs = v.lhs.unwrap();
        let rhs = v.rhs.unwrap();
        assert_abs_diff_eq!(
            lhs.value,
            2.0_f64.powf(-0.5) * (-0.25 + 2.0_f64.ln() / 2.0),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(rhs.value, -0.5 * 2.0_f64.powf(-1.5), epsilon = 1e-10);
    }

    #[test]
    fn entropy_stein_exponential_equality() {
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.0, 1.0, 0.0));
        let v = check_entropy_stein(&est(), &f, LogCurvature::LogConcave).unwrap();
        assert!(v.slack.abs() <= 1e-10, "slack {}", v.slack);
    }

    #[test]
    fn entropy_stein_log_convex_reversed() {
        let g = FunctionModel::GaussExp(GaussExpFunction::scalar(-0.5, 0.0, 0.0));
        let v = check_entropy_stein(&est(), &g, LogCurvature::LogConvex).unwrap();
        assert!(v.holds(), "{v:?}");
    }

    #[test]
    fn entropy_laplacian_matches_stein_via_ibp() {
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.7, 0.4, -0.1));
        let stein = check_entropy_stein(&est(), &f, LogCurvature::LogConcave).unwrap();
        let lap = check_entropy_laplacian(&est(), &f, LogCurvature::LogConcave).unwrap();
        assert!(stein.holds() && lap.holds());
        let a = stein.rhs.unwrap().value;
        let b = lap.rhs.unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn constant_function_zero_entropy_both_sides() {
        let c = FunctionModel::GaussExp(GaussExpFunction::scalar(0.0, 0.0, 0.3));
        let v = check_entropy_laplacian(&est(), &c, LogCurvature::LogConcave).unwrap();
        assert!(v.lhs.unwrap().value.abs() < 1e-12);
        assert!(v.rhs.unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn ibp_corollary_form_gauss_exp() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let f = FunctionModel::GaussExp(
            GaussExpFunction::new(a, DVector::from_vec(vec![0.2, -0.4]), 0.0).unwrap(),
        );
        let cov = BlockCovariance::constant_correlation(1, 2, 0.0).unwrap();
        let v = check_integration_by_parts(&est(), &f, &cov).unwrap();
        assert!(v.holds(), "{v:?}");
        assert_eq!(v.relation, Relation::Eq);
    }

    #[test]
    fn ibp_scalar_cubic() {
        // F(y) = y^3 with X = Y: E Y^4 = 3 = E[XY] E[3Y^2]
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let quad_est = Estimator::new(BackendKind::Quadrature).with_seed(7);
        let (lhs, rhs) = ibp_scalar_sides(
            &quad_est,
            &cov,
            |y| y[0].powi(3),
            |y| DVector::from_vec(vec![3.0 * y[0] * y[0]]),
        )
        .unwrap();
        assert_abs_diff_eq!(lhs.value, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rhs.value, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn ibp_scalar_independent_odd() {
        // F odd linear, X independent of Y: both sides vanish
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let quad_est = Estimator::new(BackendKind::Quadrature).with_seed(7);
        let (lhs, rhs) = ibp_scalar_sides(
            &quad_est,
            &cov,
            |y| 2.5 * y[0],
            |_| DVector::from_vec(vec![2.5]),
        )
        .unwrap();
        assert_abs_diff_eq!(lhs.value, 0.0, epsilon = 1e-10);
        // rhs = cov(X,Y) * E[2.5] = 0 * 2.5
        assert_abs_diff_eq!(rhs.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_sobolev_hand_values() {
        let [lower, upper] = check_log_sobolev_sandwich(&est(), &standard()).unwrap();
        assert!(lower.holds() && upper.holds());
        let d = 3.0_f64.powf(-1.5);
        let ent = 3.0_f64.powf(-0.5) * (-1.0 / 3.0 + 3.0_f64.ln() / 2.0);
        assert_abs_diff_eq!(
            lower.lhs.unwrap().value,
            2.0 * d - 3.0_f64.powf(-0.5),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(lower.rhs.unwrap().value, ent, epsilon = 1e-10);
        assert_abs_diff_eq!(upper.rhs.unwrap().value, 2.0 * d, epsilon = 1e-10);
        // deficit gap as reported by the upper slack
        assert_abs_diff_eq!(upper.slack, 2.0 * d - ent, epsilon = 1e-10);
    }

    #[test]
    fn log_sobolev_gross_equality_for_exponentials() {
        let f = FunctionModel::GaussExp(GaussExpFunction::scalar(0.0, 1.0, 0.0));
        let [lower, upper] = check_log_sobolev_sandwich(&est(), &f).unwrap();
        assert!(upper.slack.abs() <= 1e-9, "upper slack {}", upper.slack);
        assert!(lower.slack.abs() <= 1e-9, "lower slack {}", lower.slack);
    }

    #[test]
    fn log_sobolev_rejects_log_convex_input() {
        let g = FunctionModel::GaussExp(GaussExpFunction::scalar(-0.5, 0.0, 0.0));
        assert!(check_log_sobolev_sandwich(&est(), &g).is_err());
    }

    #[test]
    fn log_sobolev_truncation_sequence() {
        let quad_est = Estimator::new(BackendKind::Quadrature).with_seed(7);
        let f = standard();
        let mut sandwiches = Vec::new();
        for radius in [2.0, 4.0, 8.0] {
            let t = crate::functions::truncate(&f, radius).unwrap();
            let [lower, upper] = check_log_sobolev_sandwich(&quad_est, &t).unwrap();
            assert!(lower.holds() && upper.holds(), "radius {radius}");
            sandwiches.push(upper.lhs.unwrap().value);
        }
        // entropies converge to the untruncated value
        let [_, full_upper] = check_log_sobolev_sandwich(&quad_est, &f).unwrap();
        let full = full_upper.lhs.unwrap().value;
        assert!((sandwiches[2] - full).abs() < 1e-6);
    }

    #[test]
    fn closed_form_checks_are_never_indeterminate() {
        // even a violated closed-form check must be Violated, not
        // Indeterminate
        let g = FunctionModel::GaussExp(GaussExpFunction::scalar(-0.5, 0.0, 0.0));
        let v = check_sqrt_moment(&est(), &g, 0.5, LogCurvature::LogConcave).unwrap();
        assert_ne!(v.status, VerdictStatus::Indeterminate);
    }

    #[test]
    fn slack_profile_signs() {
        let e = est();
        let f = GaussExpFunction::scalar(1.0, 0.2, 0.0);
        let grid = [0.0, 0.2, 0.5, 0.8, 1.0, 1.5, 2.0, 3.0];
        let profile = slack_profile(&e, &f, LogCurvature::LogConcave, &grid).unwrap();
        for (s, slack) in profile {
            assert!(slack >= -1e-10, "s={s}: slack {slack}");
            if (s - 1.0).abs() < 1e-12 {
                assert!(slack.abs() <= 1e-10);
            }
        }
        let g = GaussExpFunction::scalar(-0.3, 0.2, 0.0);
        let profile = slack_profile(&e, &g, LogCurvature::LogConvex, &grid).unwrap();
        for (s, slack) in profile {
            assert!(slack >= -1e-10, "log-convex s={s}: slack {slack}");
        }
    }
}
