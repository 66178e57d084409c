//! Simplex frames, equiangular correlation frames, and the identity
//! decompositions they induce.
//!
//! The constructions here are exact up to floating-point rounding; every
//! builder re-checks its defining identities at `EXACT_TOL` before
//! returning, so a frame value in hand is always a certified one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute tolerance for identities that hold exactly in real arithmetic.
pub const EXACT_TOL: f64 = 1e-12;

/// The `n` unit vertices of the spherico-regular simplex in `R^{n-1}`:
/// pairwise inner products all `-1/(n-1)`, components summing to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexFrame {
    n: usize,
    vertices: Vec<DVector<f64>>,
}

impl SimplexFrame {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    /// Worst deviation over the three defining properties: unit norms,
    /// equiangularity at `-1/(n-1)`, and zero vertex sum.
    pub fn residual(&self) -> f64 {
        let n = self.n;
        let target = -1.0 / (n as f64 - 1.0);
        let mut worst = 0.0_f64;
        for (i, v) in self.vertices.iter().enumerate() {
            worst = worst.max((v.norm_squared() - 1.0).abs());
            for w in &self.vertices[i + 1..] {
                worst = worst.max((v.dot(w) - target).abs());
            }
        }
        let mut sum = DVector::zeros(n - 1);
        for v in &self.vertices {
            sum += v;
        }
        worst.max(sum.amax())
    }
}

/// Builds the SR-simplex vertices deterministically.
///
/// Construction: factor the target Gram matrix
/// `G = (n/(n-1)) I_n - (1/(n-1)) J_n` through its symmetric
/// eigen-decomposition, keep the (n-1)-dimensional top eigenspace, and
/// renormalize the resulting columns. The invariants are asserted after
/// construction rather than trusted.
pub fn build_sr_simplex(n: usize) -> Result<SimplexFrame> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "simplex needs n >= 2 vertices, got {n}"
        )));
    }
    let nf = n as f64;
    let gram = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            -1.0 / (nf - 1.0)
        }
    });
    let (values, q) = linalg::sym_eigen_sorted(&gram);

    // The top n-1 eigenvalues all equal n/(n-1); the bottom one is 0.
    let mut vertices = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = DVector::zeros(n - 1);
        for (row, item) in v.iter_mut().enumerate() {
            let j = row + 1; // skip the null eigenvector
            *item = values[j].max(0.0).sqrt() * q[(i, j)];
        }
        let norm = v.norm();
        vertices.push(v / norm);
    }

    let frame = SimplexFrame { n, vertices };
    let res = frame.residual();
    if res > EXACT_TOL {
        return Err(Error::InvalidParameter(format!(
            "simplex construction residual {res:.3e} exceeds {EXACT_TOL:.1e}"
        )));
    }
    Ok(frame)
}

/// `n` unit vectors in `R^n` with all pairwise inner products equal to `t`,
/// built by mixing the last basis vector with embedded simplex vertices.
/// Carries the derived exponents `p = (n-1)t + 1` and `q = 1 - t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFrame {
    n: usize,
    t: f64,
    vectors: Vec<DVector<f64>>,
    simplex: SimplexFrame,
}

impl CorrelationFrame {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// `p = (n-1)t + 1`, the larger extreme eigenvalue of the induced
    /// block covariance when `t >= 0`.
    pub fn p(&self) -> f64 {
        (self.n as f64 - 1.0) * self.t + 1.0
    }

    /// `q = 1 - t`, the other extreme eigenvalue.
    pub fn q(&self) -> f64 {
        1.0 - self.t
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn simplex(&self) -> &SimplexFrame {
        &self.simplex
    }

    /// Worst deviation from unit norms and the constant-correlation rule.
    pub fn residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, u) in self.vectors.iter().enumerate() {
            worst = worst.max((u.norm_squared() - 1.0).abs());
            for w in &self.vectors[i + 1..] {
                worst = worst.max((u.dot(w) - self.t).abs());
            }
        }
        worst
    }

    /// Valid correlation range for a frame of `n` vectors.
    pub fn t_range(n: usize) -> (f64, f64) {
        (-1.0 / (n as f64 - 1.0), 1.0)
    }
}

/// Mixes the simplex vertices into equiangular unit vectors at
/// correlation `t in [-1/(n-1), 1]`.
pub fn build_correlation_frame(simplex: &SimplexFrame, t: f64) -> Result<CorrelationFrame> {
    let n = simplex.n();
    let (lo, hi) = CorrelationFrame::t_range(n);
    if !(t >= lo && t <= hi) {
        return Err(Error::InvalidParameter(format!(
            "t outside [{lo}, {hi}]"
        )));
    }
    let nf = n as f64;
    let axis_coeff = (((nf - 1.0) * t + 1.0) / nf).max(0.0).sqrt();
    let simplex_coeff = ((nf - 1.0) / nf * (1.0 - t)).max(0.0).sqrt();

    let vectors = simplex
        .vertices()
        .iter()
        .map(|v| {
            let mut u = DVector::zeros(n);
            for i in 0..n - 1 {
                u[i] = simplex_coeff * v[i];
            }
            u[n - 1] = axis_coeff;
            u
        })
        .collect();

    let frame = CorrelationFrame {
        n,
        t,
        vectors,
        simplex: simplex.clone(),
    };
    let res = frame.residual();
    if res > EXACT_TOL {
        return Err(Error::InvalidParameter(format!(
            "correlation frame residual {res:.3e} exceeds {EXACT_TOL:.1e}"
        )));
    }
    Ok(frame)
}

/// A weighted family `(c_i, M_i)` of co-isometries (`M_i M_i^T = I_k`)
/// resolving the identity: `sum_i c_i M_i^T M_i = I_{kn}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    ambient_dim: usize,
    block_dim: usize,
    terms: Vec<(f64, DMatrix<f64>)>,
}

impl BlockDecomposition {
    /// Ambient dimension `kn`.
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Row count `k` of each term.
    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn terms(&self) -> &[(f64, DMatrix<f64>)] {
        &self.terms
    }

    /// Assembles `sum_i c_i M_i^T M_i`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.ambient_dim, self.ambient_dim);
        for (c, m) in &self.terms {
            acc += m.transpose() * m * *c;
        }
        acc
    }

    /// Max-entry distance of the assembled sum from the identity.
    pub fn identity_residual(&self) -> f64 {
        linalg::identity_residual(&self.assemble())
    }

    /// Worst deviation of any `M_i M_i^T` from `I_k`.
    pub fn coisometry_residual(&self) -> f64 {
        self.terms
            .iter()
            .map(|(_, m)| linalg::identity_residual(&(m * m.transpose())))
            .fold(0.0, f64::max)
    }

    fn validated(self) -> Result<Self> {
        if self.terms.iter().any(|(c, _)| *c < -EXACT_TOL) {
            return Err(Error::InvalidParameter(
                "decomposition has a negative coefficient".into(),
            ));
        }
        let id_res = self.identity_residual();
        let co_res = self.coisometry_residual();
        if id_res > EXACT_TOL || co_res > EXACT_TOL {
            return Err(Error::InvalidParameter(format!(
                "decomposition residuals {id_res:.3e}/{co_res:.3e} exceed {EXACT_TOL:.1e}"
            )));
        }
        Ok(self)
    }
}

/// Resolves the identity on `R^n` through the frame's rank-one projectors.
///
/// For `t >= 0` the terms are `(1/p) u_i u_i^T` plus `(nt/p) e_j e_j^T`
/// for `j <= n-1`; for `t < 0` they are `(1/(1-t)) u_i u_i^T` plus
/// `(-nt/(1-t)) e_n e_n^T`. Both branches are validated entrywise.
pub fn identity_decomposition(frame: &CorrelationFrame) -> Result<BlockDecomposition> {
    let n = frame.n();
    let nf = n as f64;
    let t = frame.t();
    let mut terms = Vec::new();

    let row_of = |v: &DVector<f64>| DMatrix::from_fn(1, n, |_, j| v[j]);
    let basis_row = |j: usize| DMatrix::from_fn(1, n, |_, col| if col == j { 1.0 } else { 0.0 });

    if t >= 0.0 {
        let p = frame.p();
        for u in frame.vectors() {
            terms.push((1.0 / p, row_of(u)));
        }
        for j in 0..n - 1 {
            terms.push((nf * t / p, basis_row(j)));
        }
    } else {
        let q = frame.q();
        for u in frame.vectors() {
            terms.push((1.0 / q, row_of(u)));
        }
        terms.push((-nf * t / q, basis_row(n - 1)));
    }

    BlockDecomposition {
        ambient_dim: n,
        block_dim: 1,
        terms,
    }
    .validated()
}

/// Lifts a decomposition on `R^n` to `R^{kn}` by replacing each row `v^T`
/// with `v^T (x) I_k` (Kronecker product); coefficients are unchanged.
pub fn tensor_lift(decomp: &BlockDecomposition, k: usize) -> Result<BlockDecomposition> {
    if k < 1 {
        return Err(Error::InvalidParameter("tensor lift needs k >= 1".into()));
    }
    let eye = DMatrix::<f64>::identity(k, k);
    let terms = decomp
        .terms()
        .iter()
        .map(|(c, m)| (*c, m.kronecker(&eye)))
        .collect();
    BlockDecomposition {
        ambient_dim: decomp.ambient_dim() * k,
        block_dim: decomp.block_dim() * k,
        terms,
    }
    .validated()
}

/// The lifted frame operators `U_i = u_i^T (x) I_k` for a correlation
/// frame, used both for sampling and for the block-covariance Gram checks.
pub fn lifted_frame_operators(frame: &CorrelationFrame, k: usize) -> Vec<DMatrix<f64>> {
    let eye = DMatrix::<f64>::identity(k, k);
    frame
        .vectors()
        .iter()
        .map(|u| DMatrix::from_fn(1, frame.n(), |_, j| u[j]).kronecker(&eye))
        .collect()
}

/// JSON document for frames and decompositions, round-trippable through
/// the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDocument {
    pub n: usize,
    pub t: f64,
    pub vertices: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub terms: Vec<DecompositionTermDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionTermDocument {
    pub c: f64,
    pub rows: Vec<Vec<f64>>,
}

impl FrameDocument {
    pub fn from_parts(frame: &CorrelationFrame, decomp: &BlockDecomposition) -> Self {
        FrameDocument {
            n: frame.n(),
            t: frame.t(),
            vertices: frame
                .simplex()
                .vertices()
                .iter()
                .map(|v| v.iter().copied().collect())
                .collect(),
            u: frame
                .vectors()
                .iter()
                .map(|u| u.iter().copied().collect())
                .collect(),
            terms: decomp
                .terms()
                .iter()
                .map(|(c, m)| DecompositionTermDocument {
                    c: *c,
                    rows: (0..m.nrows())
                        .map(|r| m.row(r).iter().copied().collect())
                        .collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds typed values from the document, re-validating every
    /// invariant. Rejects ragged or inconsistent payloads.
    pub fn into_parts(self) -> Result<(CorrelationFrame, BlockDecomposition)> {
        let n = self.n;
        if n < 2 {
            return Err(Error::Parse(format!("frame document has n={n} < 2")));
        }
        if self.vertices.len() != n || self.u.len() != n {
            return Err(Error::Parse(
                "frame document vertex/vector counts do not match n".into(),
            ));
        }
        if self.vertices.iter().any(|v| v.len() != n - 1) {
            return Err(Error::Parse("simplex vertex of wrong dimension".into()));
        }
        if self.u.iter().any(|u| u.len() != n) {
            return Err(Error::Parse("frame vector of wrong dimension".into()));
        }
        if !self.t.is_finite() || self.vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Parse("non-finite entry in frame document".into()));
        }

        let simplex = SimplexFrame {
            n,
            vertices: self
                .vertices
                .iter()
                .map(|v| DVector::from_vec(v.clone()))
                .collect(),
        };
        if simplex.residual() > EXACT_TOL {
            return Err(Error::Parse(
                "simplex vertices fail the SR invariants".into(),
            ));
        }
        let frame = CorrelationFrame {
            n,
            t: self.t,
            vectors: self.u.iter().map(|u| DVector::from_vec(u.clone())).collect(),
            simplex,
        };
        if frame.residual() > EXACT_TOL {
            return Err(Error::Parse(
                "frame vectors fail the equiangularity invariants".into(),
            ));
        }
        // The u vectors must actually be the mixed simplex vertices, not
        // just any equiangular family.
        let rebuilt = build_correlation_frame(frame.simplex(), self.t)
            .map_err(|e| Error::Parse(format!("frame parameters invalid: {e}")))?;
        let drift = frame
            .vectors()
            .iter()
            .zip(rebuilt.vectors())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        if drift > EXACT_TOL {
            return Err(Error::Parse(
                "frame vectors do not match the simplex construction".into(),
            ));
        }

        let mut block_dim = None;
        let mut terms = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let rows = term.rows.len();
            if rows == 0 {
                return Err(Error::Parse("decomposition term with no rows".into()));
            }
            let dim = block_dim.get_or_insert(rows);
            if *dim != rows {
                return Err(Error::Parse("decomposition terms of mixed block size".into()));
            }
            if term.rows.iter().any(|r| r.len() != rows * n) {
                return Err(Error::Parse(
                    "decomposition row of wrong ambient dimension".into(),
                ));
            }
            if !term.c.is_finite() || term.rows.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::Parse("non-finite entry in decomposition".into()));
            }
            let mat = DMatrix::from_fn(rows, rows * n, |i, j| term.rows[i][j]);
            terms.push((term.c, mat));
        }
        let k = block_dim.ok_or_else(|| Error::Parse("decomposition has no terms".into()))?;
        let decomp = BlockDecomposition {
            ambient_dim: k * n,
            block_dim: k,
            terms,
        }
        .validated()
        .map_err(|e| Error::Parse(format!("decomposition invalid: {e}")))?;

        Ok((frame, decomp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(build_sr_simplex(0).is_err());
        assert!(build_sr_simplex(1).is_err());
    }

    #[test]
    fn n2_simplex_is_plus_minus_one() {
        let s = build_sr_simplex(2).unwrap();
        assert_abs_diff_eq!(s.vertices()[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.vertices()[1][0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn n3_simplex_has_pairwise_minus_half() {
        let s = build_sr_simplex(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let dot = s.vertices()[i].dot(&s.vertices()[j]);
                    assert_abs_diff_eq!(dot, -0.5, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn n7_simplex_passes_invariants() {
        let s = build_sr_simplex(7).unwrap();
        assert!(s.residual() < 1e-12);
    }

    #[test]
    fn construction_is_bit_deterministic() {
        let a = build_sr_simplex(5).unwrap();
        let b = build_sr_simplex(5).unwrap();
        assert_eq!(a, b);
        let fa = build_correlation_frame(&a, 0.3).unwrap();
        let fb = build_correlation_frame(&b, 0.3).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn frame_at_t_one_collapses_to_axis() {
        let s = build_sr_simplex(4).unwrap();
        let f = build_correlation_frame(&s, 1.0).unwrap();
        for u in f.vectors() {
            for i in 0..3 {
                assert_abs_diff_eq!(u[i], 0.0, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(u[3], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn n2_t0_frame_is_the_45_degree_pair() {
        let s = build_sr_simplex(2).unwrap();
        let f = build_correlation_frame(&s, 0.0).unwrap();
        let r = 0.5_f64.sqrt();
        assert_abs_diff_eq!(f.vectors()[0][0], r, epsilon = 1e-12);
        assert_abs_diff_eq!(f.vectors()[0][1], r, epsilon = 1e-12);
        assert_abs_diff_eq!(f.vectors()[1][0], -r, epsilon = 1e-12);
        assert_abs_diff_eq!(f.vectors()[1][1], r, epsilon = 1e-12);
        assert_abs_diff_eq!(f.vectors()[0].dot(&f.vectors()[1]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn n3_half_correlation() {
        let s = build_sr_simplex(3).unwrap();
        let f = build_correlation_frame(&s, 0.5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(
                        f.vectors()[i].dot(&f.vectors()[j]),
                        0.5,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_t_outside_range() {
        let s = build_sr_simplex(2).unwrap();
        assert!(build_correlation_frame(&s, 1.5).is_err());
        assert!(build_correlation_frame(&s, -1.0001).is_err());
        let s3 = build_sr_simplex(3).unwrap();
        assert!(build_correlation_frame(&s3, -0.6).is_err());
    }

    #[test]
    fn positive_branch_decomposition_n2_t0() {
        let s = build_sr_simplex(2).unwrap();
        let f = build_correlation_frame(&s, 0.0).unwrap();
        let d = identity_decomposition(&f).unwrap();
        assert!(d.identity_residual() < 1e-12);
        // p = 1 with zero-weight basis terms present
        assert_eq!(d.terms().len(), 3);
        assert_abs_diff_eq!(d.terms()[2].0, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn positive_branch_decomposition_n3_t1() {
        let s = build_sr_simplex(3).unwrap();
        let f = build_correlation_frame(&s, 1.0).unwrap();
        let d = identity_decomposition(&f).unwrap();
        assert!(d.identity_residual() < 1e-12);
        for (c, _) in &d.terms()[0..3] {
            assert_abs_diff_eq!(*c, 1.0 / 3.0, epsilon = 1e-15);
        }
        for (c, _) in &d.terms()[3..5] {
            assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn negative_branch_decomposition_n4() {
        let s = build_sr_simplex(4).unwrap();
        let f = build_correlation_frame(&s, -1.0 / 3.0).unwrap();
        let d = identity_decomposition(&f).unwrap();
        assert!(d.identity_residual() < 1e-12);
        assert_eq!(d.terms().len(), 5);
    }

    #[test]
    fn tensor_lift_k1_is_identity_map() {
        let s = build_sr_simplex(3).unwrap();
        let f = build_correlation_frame(&s, 0.4).unwrap();
        let d = identity_decomposition(&f).unwrap();
        let lifted = tensor_lift(&d, 1).unwrap();
        assert_eq!(&lifted, &d);
    }

    #[test]
    fn tensor_lift_n2_t0_k2() {
        let s = build_sr_simplex(2).unwrap();
        let f = build_correlation_frame(&s, 0.0).unwrap();
        let d = identity_decomposition(&f).unwrap();
        let lifted = tensor_lift(&d, 2).unwrap();
        assert_eq!(lifted.ambient_dim(), 4);
        assert!(lifted.identity_residual() < 1e-12);
    }

    #[test]
    fn lifted_operators_reproduce_frame_grams() {
        let s = build_sr_simplex(3).unwrap();
        let f = build_correlation_frame(&s, 0.5).unwrap();
        let ops = lifted_frame_operators(&f, 2);
        // U_i U_j^T = <u_i, u_j> I_k
        let g = &ops[0] * ops[1].transpose();
        assert!(linalg::max_abs_entry(&(g.clone() - DMatrix::identity(2, 2) * 0.5)) < 1e-12);
        // U_i E_j^T = sqrt((n-1)/n * q) <v_i, e_j> I_k
        let eye = DMatrix::<f64>::identity(2, 2);
        let e0 = DMatrix::from_fn(1, 3, |_, j| if j == 0 { 1.0 } else { 0.0 }).kronecker(&eye);
        let coeff = (2.0 / 3.0 * f.q()).sqrt() * f.simplex().vertices()[0][0];
        let lhs = &ops[0] * e0.transpose();
        assert!(linalg::max_abs_entry(&(lhs - eye * coeff)) < 1e-12);
    }

    #[test]
    fn document_round_trip_preserves_values() {
        let s = build_sr_simplex(3).unwrap();
        let f = build_correlation_frame(&s, 0.25).unwrap();
        let d = tensor_lift(&identity_decomposition(&f).unwrap(), 2).unwrap();
        let doc = FrameDocument::from_parts(&f, &d);
        let json = serde_json::to_string(&doc).unwrap();
        let parsed: FrameDocument = serde_json::from_str(&json).unwrap();
        let (f2, d2) = parsed.into_parts().unwrap();
        assert_eq!(f, f2);
        assert_eq!(d, d2);
    }

    #[test]
    fn document_rejects_tampered_vectors() {
        let s = build_sr_simplex(3).unwrap();
        let f = build_correlation_frame(&s, 0.25).unwrap();
        let d = identity_decomposition(&f).unwrap();
        let mut doc = FrameDocument::from_parts(&f, &d);
        doc.u[0][0] += 1e-3;
        assert!(doc.into_parts().is_err());
    }
}
