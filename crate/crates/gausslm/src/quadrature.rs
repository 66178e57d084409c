//! Tensorized Gauss–Hermite quadrature against the standard Gaussian
//! measure.
//!
//! Nodes and weights come from the Golub–Welsch algorithm on the Jacobi
//! matrix of the probabilists' Hermite polynomials, so the 1-D weights
//! sum to one and integrate polynomials of degree `2m - 1` exactly
//! against `gamma_1`.
//!
//! Integrands are supplied in signed log space, `x -> (sign, log|g(x)|)`,
//! which keeps strongly tilted exponential integrands (values far outside
//! the f64 mantissa range during accumulation) exact. An optional affine
//! change of variables recenters and rescales the grid on the integrand's
//! own Gaussian bulk; the Jacobian and density ratio are applied exactly,
//! so the map changes accuracy, never the target value.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;

/// Hard cap on total tensor-grid size.
const MAX_TOTAL_NODES: u64 = 1 << 24;

/// Work unit for the parallel node loop.
const CHUNK: u64 = 8192;

/// One-dimensional Hermite rule normalized for the standard Gaussian.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl HermiteRule {
    /// Golub–Welsch: eigen-decompose the symmetric tridiagonal Jacobi
    /// matrix with off-diagonal `sqrt(i)`; eigenvalues are the nodes and
    /// squared first eigenvector components the weights.
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("quadrature needs >= 1 node".into()));
        }
        let mut jacobi = DMatrix::zeros(m, m);
        for i in 1..m {
            let b = (i as f64).sqrt();
            jacobi[(i - 1, i)] = b;
            jacobi[(i, i - 1)] = b;
        }
        let (values, vectors) = linalg::sym_eigen_sorted(&jacobi);
        let mut nodes = values;
        let mut weights: Vec<f64> = (0..m).map(|j| vectors[(0, j)].powi(2)).collect();

        // Enforce the exact +/- symmetry of the rule.
        for i in 0..m / 2 {
            let j = m - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }

        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(HermiteRule {
            nodes,
            weights,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Affine change of variables `x = center + scale * z` together with the
/// log-Jacobian, for recentring the grid on an integrand's Gaussian bulk.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub center: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub log_det_scale: f64,
}

impl AffineMap {
    /// Map centered at `center` with `scale = cov^{1/2}` for a symmetric
    /// positive definite `cov`.
    pub fn from_gaussian(center: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let log_det_scale = 0.5 * linalg::sym_log_det(cov, 1e-300)?;
        Ok(AffineMap {
            center,
            scale: linalg::sym_sqrt(cov),
            log_det_scale,
        })
    }
}

/// Tensor product of a 1-D Hermite rule over `dimension` axes.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    rule: HermiteRule,
    dimension: usize,
    total: u64,
}

impl QuadratureGrid {
    pub fn new(nodes_per_axis: usize, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidParameter("grid dimension must be >= 1".into()));
        }
        let m = nodes_per_axis as u64;
        let mut total = 1u64;
        for _ in 0..dimension {
            total = total.saturating_mul(m);
            if total > MAX_TOTAL_NODES {
                return Err(Error::UnsupportedBackend(format!(
                    "tensor grid {nodes_per_axis}^{dimension} exceeds the node budget"
                )));
            }
        }
        Ok(QuadratureGrid {
            rule: HermiteRule::new(nodes_per_axis)?,
            dimension,
            total,
        })
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.rule.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn total_nodes(&self) -> u64 {
        self.total
    }

    pub fn rule(&self) -> &HermiteRule {
        &self.rule
    }

    /// Expectation `E_gamma[g]` of a signed log-space integrand, optionally
    /// through an affine map. Node chunks evaluate in parallel and are
    /// merged in fixed order, so the result is deterministic for a given
    /// grid regardless of thread count.
    pub fn expectation<G>(&self, map: Option<&AffineMap>, g: G) -> f64
    where
        G: Fn(&DVector<f64>) -> (f64, f64) + Sync,
    {
        let dim = self.dimension;
        let m = self.rule.len() as u64;
        let chunks: Vec<(f64, f64)> = (0..self.total.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk_idx| {
                let start = chunk_idx * CHUNK;
                let end = (start + CHUNK).min(self.total);
                let mut z = DVector::zeros(dim);
                let mut local_max = f64::NEG_INFINITY;
                let mut local_sum = 0.0_f64;
                let mut pending: Vec<(f64, f64)> = Vec::new();
                for flat in start..end {
                    let mut rest = flat;
                    let mut log_w = 0.0;
                    for axis in 0..dim {
                        let idx = (rest % m) as usize;
                        rest /= m;
                        z[axis] = self.rule.nodes[idx];
                        log_w += self.rule.log_weights[idx];
                    }
                    let (sign, log_mag) = match map {
                        None => g(&z),
                        Some(a) => {
                            let x = &a.center + &a.scale * &z;
                            let (sign, log_mag) = g(&x);
                            let ratio = 0.5 * (z.norm_squared() - x.norm_squared())
                                + a.log_det_scale;
                            (sign, log_mag + ratio)
                        }
                    };
                    if sign == 0.0 || log_mag == f64::NEG_INFINITY {
                        continue;
                    }
                    let term = log_w + log_mag;
                    // shifted signed accumulation
                    if term <= local_max {
                        local_sum += sign * (term - local_max).exp();
                    } else {
                        pending.push((local_max, local_sum));
                        local_max = term;
                        local_sum = sign;
                    }
                    if pending.len() > 64 {
                        let (mx, s) = drain_pending(&mut pending, local_max);
                        debug_assert_eq!(mx, local_max);
                        local_sum += s;
                    }
                }
                let (_, s) = drain_pending(&mut pending, local_max);
                (local_max, local_sum + s)
            })
            .collect();

        let global_max = chunks
            .iter()
            .map(|(m, _)| *m)
            .fold(f64::NEG_INFINITY, f64::max);
        if global_max == f64::NEG_INFINITY {
            return 0.0;
        }
        let mut total = 0.0;
        for (mx, s) in &chunks {
            if *s != 0.0 {
                total += s * (mx - global_max).exp();
            }
        }
        if total == 0.0 {
            return 0.0;
        }
        total.signum() * (global_max + total.abs().ln()).exp()
    }

    /// Plain-value expectation for integrands that are safe to evaluate
    /// directly (no extreme dynamic range).
    pub fn expectation_plain<G>(&self, map: Option<&AffineMap>, g: G) -> f64
    where
        G: Fn(&DVector<f64>) -> f64 + Sync,
    {
        self.expectation(map, |x| {
            let v = g(x);
            if v == 0.0 {
                (0.0, f64::NEG_INFINITY)
            } else {
                (v.signum(), v.abs().ln())
            }
        })
    }

    /// Direct weighted sum in value space. Unlike [`Self::expectation`]
    /// this tolerates `-inf` integrand values (they propagate to a
    /// `-inf` result), which is what a log-mean over a vanishing
    /// function needs.
    pub fn expectation_values<G>(&self, map: Option<&AffineMap>, g: G) -> f64
    where
        G: Fn(&DVector<f64>) -> f64 + Sync,
    {
        let dim = self.dimension;
        let m = self.rule.len() as u64;
        let chunks: Vec<f64> = (0..self.total.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk_idx| {
                let start = chunk_idx * CHUNK;
                let end = (start + CHUNK).min(self.total);
                let mut z = DVector::zeros(dim);
                let mut acc = 0.0_f64;
                for flat in start..end {
                    let mut rest = flat;
                    let mut w = 1.0;
                    for axis in 0..dim {
                        let idx = (rest % m) as usize;
                        rest /= m;
                        z[axis] = self.rule.nodes[idx];
                        w *= self.rule.weights[idx];
                    }
                    let term = match map {
                        None => g(&z),
                        Some(a) => {
                            let x = &a.center + &a.scale * &z;
                            let ratio = (0.5 * (z.norm_squared() - x.norm_squared())
                                + a.log_det_scale)
                                .exp();
                            g(&x) * ratio
                        }
                    };
                    acc += w * term;
                }
                acc
            })
            .collect();
        chunks.iter().sum()
    }
}

impl QuadratureGrid {
    /// Vector-valued direct expectation, componentwise.
    pub fn expectation_vector<G>(
        &self,
        map: Option<&AffineMap>,
        out_dim: usize,
        g: G,
    ) -> DVector<f64>
    where
        G: Fn(&DVector<f64>) -> DVector<f64> + Sync,
    {
        let dim = self.dimension;
        let m = self.rule.len() as u64;
        let chunks: Vec<DVector<f64>> = (0..self.total.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk_idx| {
                let start = chunk_idx * CHUNK;
                let end = (start + CHUNK).min(self.total);
                let mut z = DVector::zeros(dim);
                let mut acc = DVector::zeros(out_dim);
                for flat in start..end {
                    let mut rest = flat;
                    let mut w = 1.0;
                    for axis in 0..dim {
                        let idx = (rest % m) as usize;
                        rest /= m;
                        z[axis] = self.rule.nodes[idx];
                        w *= self.rule.weights[idx];
                    }
                    match map {
                        None => acc.axpy(w, &g(&z), 1.0),
                        Some(a) => {
                            let x = &a.center + &a.scale * &z;
                            let ratio = (0.5 * (z.norm_squared() - x.norm_squared())
                                + a.log_det_scale)
                                .exp();
                            acc.axpy(w * ratio, &g(&x), 1.0);
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = DVector::zeros(out_dim);
        for c in chunks {
            total += c;
        }
        total
    }
}

fn drain_pending(pending: &mut Vec<(f64, f64)>, max: f64) -> (f64, f64) {
    let mut acc = 0.0;
    for (m, s) in pending.drain(..) {
        if s != 0.0 {
            acc += s * (m - max).exp();
        }
    }
    (max, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// E[x^{2m}] against gamma_1 is the odd double factorial.
    fn gaussian_moment(degree: usize) -> f64 {
        if degree % 2 == 1 {
            return 0.0;
        }
        let mut acc = 1.0;
        let mut k = degree as i64 - 1;
        while k > 1 {
            acc *= k as f64;
            k -= 2;
        }
        acc
    }

    #[test]
    fn weights_sum_to_one_and_variance_is_one() {
        for m in [1usize, 2, 5, 16, 64] {
            let rule = HermiteRule::new(m).unwrap();
            let sum: f64 = rule.weights().iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            if m >= 2 {
                let var: f64 = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(x, w)| w * x * x)
                    .sum();
                assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn polynomials_integrate_exactly_up_to_degree_2m_minus_1() {
        for m in 1..=8usize {
            let rule = HermiteRule::new(m).unwrap();
            for degree in 0..=(2 * m - 1) {
                let approx: f64 = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(x, w)| w * x.powi(degree as i32))
                    .sum();
                let exact = gaussian_moment(degree);
                // odd moments cancel through terms of absolute size
                // E|x|^degree, which sets the rounding scale
                let term_scale: f64 = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(x, w)| w * x.abs().powi(degree as i32))
                    .sum();
                assert!(
                    (approx - exact).abs() <= 1e-12 * (1.0 + term_scale),
                    "m={m} degree={degree}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn tensor_grid_integrates_separable_polynomial() {
        let grid = QuadratureGrid::new(8, 3).unwrap();
        // E[x^2 y^4] = 1 * 3
        let val = grid.expectation_plain(None, |x| x[0] * x[0] * x[1].powi(4));
        assert_abs_diff_eq!(val, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn affine_map_is_value_preserving() {
        // E[exp(-x^2)] = 3^{-1/2}; evaluate with a deliberately shifted map.
        let grid = QuadratureGrid::new(64, 1).unwrap();
        let map = AffineMap::from_gaussian(
            DVector::from_vec(vec![0.4]),
            &DMatrix::from_vec(1, 1, vec![0.5]),
        )
        .unwrap();
        let g = |x: &DVector<f64>| (1.0, -x[0] * x[0]);
        let plain = grid.expectation(None, g);
        let mapped = grid.expectation(Some(&map), g);
        let exact = 1.0 / 3.0_f64.sqrt();
        assert_abs_diff_eq!(plain, exact, epsilon = 1e-12);
        assert_abs_diff_eq!(mapped, exact, epsilon = 1e-10);
    }

    #[test]
    fn adapted_map_handles_narrow_tilts() {
        // E[exp(-9 x^2 / 2)] = 10^{-1/2}: far beyond plain 64-node accuracy,
        // exact once the grid is standardized to the integrand's bulk.
        let grid = QuadratureGrid::new(64, 1).unwrap();
        let map = AffineMap::from_gaussian(
            DVector::from_vec(vec![0.0]),
            &DMatrix::from_vec(1, 1, vec![0.1]),
        )
        .unwrap();
        let val = grid.expectation(Some(&map), |x| (1.0, -4.5 * x[0] * x[0]));
        assert_abs_diff_eq!(val, 0.1_f64.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn signed_integrands_cancel_correctly() {
        let grid = QuadratureGrid::new(32, 1).unwrap();
        // E[x^3] = 0 by symmetry
        let val = grid.expectation_plain(None, |x| x[0].powi(3));
        assert_abs_diff_eq!(val, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_rejects_oversized_budgets() {
        assert!(QuadratureGrid::new(64, 6).is_err());
        assert!(QuadratureGrid::new(0, 1).is_err());
    }

    #[test]
    fn determinism_across_repeated_runs() {
        let grid = QuadratureGrid::new(48, 2).unwrap();
        let g = |x: &DVector<f64>| (1.0, -0.3 * x.norm_squared() + x[0]);
        let a = grid.expectation(None, g);
        let b = grid.expectation(None, g);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
