//! Pointwise exterior algebra on an n-dimensional Euclidean space.
//!
//! Forms are stored densely in the orthonormal coframe `ω¹, …, ωⁿ`: a p-form
//! carries one coefficient per strictly increasing multi-index, ranked in
//! lexicographic order. Indices are 0-based internally and 1-based in
//! `Display` output.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::convexity::{min_p_trace, Tolerances};

/// Relative kernel cutoff used by [`pinv_f`] when no tolerance is given.
pub const DEFAULT_PINV_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExteriorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degree {degree} exceeds ambient dimension {n}")]
    DegreeOverflow { degree: usize, n: usize },
    #[error("degree {0} is not allowed for this operation")]
    InvalidDegree(usize),
    #[error("form is not in Im F: orthogonal component {residual:.3e} exceeds {bound:.3e}")]
    Membership { residual: f64, bound: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("symmetric eigensolver did not converge")]
    EigenFailure,
}

/// Binomial coefficient `C(n, k)`, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Parity of the permutation that sorts `seq`, or `None` if `seq` has a repeat.
/// Returns `+1.0` or `-1.0` by counting inversions.
pub fn sort_sign(seq: &[usize]) -> Option<f64> {
    let mut inversions = 0usize;
    for i in 0..seq.len() {
        for j in (i + 1)..seq.len() {
            if seq[i] == seq[j] {
                return None;
            }
            if seq[i] > seq[j] {
                inversions += 1;
            }
        }
    }
    Some(if inversions % 2 == 0 { 1.0 } else { -1.0 })
}

/// Strictly increasing multi-index `(j_1 < … < j_p)`, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self, ExteriorError> {
        let sign = sort_sign(&indices);
        if sign.is_none() {
            return Err(ExteriorError::InvalidDegree(indices.len()));
        }
        indices.sort_unstable();
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(ExteriorError::DimensionMismatch { expected: n, got: last + 1 });
            }
        }
        Ok(MultiIndex(indices))
    }

    /// Builds from 1-based indices, as written in formulas.
    pub fn from_one_based(indices: &[usize], n: usize) -> Result<Self, ExteriorError> {
        if indices.iter().any(|&i| i == 0) {
            return Err(ExteriorError::DimensionMismatch { expected: n, got: 0 });
        }
        Self::new(indices.iter().map(|i| i - 1).collect(), n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    /// Lexicographic rank among all `C(n, p)` increasing multi-indices.
    pub fn rank(&self, n: usize) -> usize {
        rank_of(&self.0, n)
    }

    pub fn unrank(rank: usize, n: usize, p: usize) -> Self {
        MultiIndex(unrank_of(rank, n, p))
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, ")")
    }
}

pub(crate) fn rank_of(idx: &[usize], n: usize) -> usize {
    let p = idx.len();
    let mut rank = 0;
    let mut start = 0;
    for (pos, &c) in idx.iter().enumerate() {
        for v in start..c {
            rank += binomial(n - 1 - v, p - 1 - pos);
        }
        start = c + 1;
    }
    rank
}

pub(crate) fn unrank_of(mut rank: usize, n: usize, p: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(p);
    let mut v = 0;
    for pos in 0..p {
        loop {
            let block = binomial(n - 1 - v, p - 1 - pos);
            if rank < block {
                break;
            }
            rank -= block;
            v += 1;
        }
        out.push(v);
        v += 1;
    }
    out
}

/// All increasing multi-indices of length `p` in `0..n`, in rank order.
pub fn multi_indices(n: usize, p: usize) -> Vec<Vec<usize>> {
    (0..binomial(n, p)).map(|r| unrank_of(r, n, p)).collect()
}

/// A p-form at a single point, `g = g_J ω^J`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointForm {
    n: usize,
    p: usize,
    coeffs: Vec<f64>,
}

impl PointForm {
    pub fn zeros(n: usize, p: usize) -> Result<Self, ExteriorError> {
        if p > n {
            return Err(ExteriorError::DegreeOverflow { degree: p, n });
        }
        Ok(PointForm { n, p, coeffs: vec![0.0; binomial(n, p)] })
    }

    pub fn from_coeffs(n: usize, p: usize, coeffs: Vec<f64>) -> Result<Self, ExteriorError> {
        if p > n {
            return Err(ExteriorError::DegreeOverflow { degree: p, n });
        }
        let len = binomial(n, p);
        if coeffs.len() != len {
            return Err(ExteriorError::DimensionMismatch { expected: len, got: coeffs.len() });
        }
        Ok(PointForm { n, p, coeffs })
    }

    /// The basis form `ω^J` for 1-based indices `J`.
    pub fn basis(n: usize, one_based: &[usize]) -> Result<Self, ExteriorError> {
        let idx = MultiIndex::from_one_based(one_based, n)?;
        let mut g = Self::zeros(n, idx.degree())?;
        g.coeffs[idx.rank(n)] = 1.0;
        Ok(g)
    }

    /// The 1-form `τ_i ω^i`.
    pub fn covector(tau: &[f64]) -> Self {
        PointForm { n: tau.len(), p: 1, coeffs: tau.to_vec() }
    }

    pub fn scalar(n: usize, value: f64) -> Self {
        PointForm { n, p: 0, coeffs: vec![value] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.p
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn coeff(&self, idx: &MultiIndex) -> f64 {
        self.coeffs[idx.rank(self.n)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &PointForm) -> Result<f64, ExteriorError> {
        self.check_same_shape(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, s: f64) -> PointForm {
        PointForm { n: self.n, p: self.p, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn add(&self, other: &PointForm) -> Result<PointForm, ExteriorError> {
        self.check_same_shape(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(PointForm { n: self.n, p: self.p, coeffs })
    }

    pub fn sub(&self, other: &PointForm) -> Result<PointForm, ExteriorError> {
        self.add(&other.scaled(-1.0))
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    fn check_same_shape(&self, other: &PointForm) -> Result<(), ExteriorError> {
        if self.n != other.n {
            return Err(ExteriorError::DimensionMismatch { expected: self.n, got: other.n });
        }
        if self.p != other.p {
            return Err(ExteriorError::InvalidDegree(other.p));
        }
        Ok(())
    }
}

/// Symmetric bilinear form `θ_{ij} ω^i ⊗ ω^j`; symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    entries: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn new(m: DMatrix<f64>) -> Result<Self, ExteriorError> {
        if m.nrows() != m.ncols() {
            return Err(ExteriorError::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(QuadraticForm { entries: sym })
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self, ExteriorError> {
        if data.len() != n * n {
            return Err(ExteriorError::DimensionMismatch { expected: n * n, got: data.len() });
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn identity(n: usize) -> Self {
        QuadraticForm { entries: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        QuadraticForm { entries: DMatrix::zeros(n, n) }
    }

    pub fn diag(d: &[f64]) -> Self {
        QuadraticForm { entries: DMatrix::from_diagonal(&DVector::from_column_slice(d)) }
    }

    /// `τ ⊗ τ`.
    pub fn outer(tau: &[f64]) -> Self {
        let v = DVector::from_column_slice(tau);
        QuadraticForm { entries: &v * v.transpose() }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn scaled(&self, s: f64) -> Self {
        QuadraticForm { entries: &self.entries * s }
    }

    pub fn add(&self, other: &QuadraticForm) -> Self {
        QuadraticForm { entries: &self.entries + &other.entries }
    }

    pub fn sub(&self, other: &QuadraticForm) -> Self {
        QuadraticForm { entries: &self.entries - &other.entries }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
    pub fn sorted_eigen(&self) -> Result<(Vec<f64>, DMatrix<f64>), ExteriorError> {
        sorted_symmetric_eigen(&self.entries)
    }
}

pub(crate) fn sorted_symmetric_eigen(
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>), ExteriorError> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or(ExteriorError::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    Ok((values, vectors))
}

/// Exterior product `a ∧ b`.
pub fn wedge(a: &PointForm, b: &PointForm) -> Result<PointForm, ExteriorError> {
    if a.n != b.n {
        return Err(ExteriorError::DimensionMismatch { expected: a.n, got: b.n });
    }
    let n = a.n;
    let degree = a.p + b.p;
    let mut out = PointForm::zeros(n, degree)?;
    let ia = multi_indices(n, a.p);
    let ib = multi_indices(n, b.p);
    let mut seq = Vec::with_capacity(degree);
    for (ra, ca) in a.coeffs.iter().enumerate() {
        if *ca == 0.0 {
            continue;
        }
        for (rb, cb) in b.coeffs.iter().enumerate() {
            if *cb == 0.0 {
                continue;
            }
            seq.clear();
            seq.extend_from_slice(&ia[ra]);
            seq.extend_from_slice(&ib[rb]);
            if let Some(sign) = sort_sign(&seq) {
                seq.sort_unstable();
                out.coeffs[rank_of(&seq, n)] += sign * ca * cb;
            }
        }
    }
    Ok(out)
}

/// Interior product `v ⌟ g`, with `(v⌟g)_K = v_j g_{jK}`.
pub fn interior_product(v: &[f64], g: &PointForm) -> Result<PointForm, ExteriorError> {
    if v.len() != g.n {
        return Err(ExteriorError::DimensionMismatch { expected: g.n, got: v.len() });
    }
    if g.p == 0 {
        return Err(ExteriorError::InvalidDegree(0));
    }
    let n = g.n;
    let mut out = PointForm::zeros(n, g.p - 1)?;
    let mut rest = Vec::with_capacity(g.p - 1);
    for (r, idx) in multi_indices(n, g.p).into_iter().enumerate() {
        let c = g.coeffs[r];
        if c == 0.0 {
            continue;
        }
        for a in 0..g.p {
            rest.clear();
            rest.extend(idx.iter().enumerate().filter(|(k, _)| *k != a).map(|(_, &i)| i));
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            out.coeffs[rank_of(&rest, n)] += sign * v[idx[a]] * c;
        }
    }
    Ok(out)
}

fn unit(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

/// `F_θ g = θ_{jk} ω^k ∧ (e_j ⌟ g)`.
pub fn apply_f(theta: &QuadraticForm, g: &PointForm) -> Result<PointForm, ExteriorError> {
    let n = theta.dim();
    if g.n != n {
        return Err(ExteriorError::DimensionMismatch { expected: n, got: g.n });
    }
    if g.p == 0 {
        return PointForm::zeros(n, 0);
    }
    let contractions: Vec<PointForm> =
        (0..n).map(|j| interior_product(&unit(n, j), g)).collect::<Result<_, _>>()?;
    let mut out = PointForm::zeros(n, g.p)?;
    for k in 0..n {
        let mut h = PointForm::zeros(n, g.p - 1)?;
        for (j, cj) in contractions.iter().enumerate() {
            let t = theta.get(j, k);
            if t != 0.0 {
                for (hc, c) in h.coeffs.iter_mut().zip(&cj.coeffs) {
                    *hc += t * c;
                }
            }
        }
        let term = wedge(&PointForm::covector(&unit(n, k)), &h)?;
        for (o, t) in out.coeffs.iter_mut().zip(&term.coeffs) {
            *o += t;
        }
    }
    Ok(out)
}

/// Dense `C(n,p) × C(n,p)` matrix of `F_θ` in the ranked basis.
pub fn f_matrix(theta: &QuadraticForm, p: usize) -> Result<DMatrix<f64>, ExteriorError> {
    let n = theta.dim();
    if p > n {
        return Err(ExteriorError::DegreeOverflow { degree: p, n });
    }
    let len = binomial(n, p);
    let mut m = DMatrix::zeros(len, len);
    let mut e = PointForm::zeros(n, p)?;
    for col in 0..len {
        e.coeffs.iter_mut().for_each(|c| *c = 0.0);
        e.coeffs[col] = 1.0;
        let image = apply_f(theta, &e)?;
        m.set_column(col, &image.to_vector());
    }
    Ok(m)
}

/// Spectrum of `F_θ` on p-forms, assembled from the eigenvalues of `θ`.
#[derive(Debug, Clone)]
pub struct EigenSummaryF {
    pub p: usize,
    /// All `λ_J = Σ_{j∈J} λ_j`, ascending.
    pub values: Vec<f64>,
    /// `λ_1 ≤ … ≤ λ_n`.
    pub base_values: Vec<f64>,
    /// Orthonormal eigenvectors of `θ`, one column per base eigenvalue.
    pub base_vectors: DMatrix<f64>,
}

pub fn eigen_f(theta: &QuadraticForm, p: usize) -> Result<EigenSummaryF, ExteriorError> {
    let n = theta.dim();
    if p == 0 || p > n {
        return Err(ExteriorError::InvalidDegree(p));
    }
    let (base_values, base_vectors) = theta.sorted_eigen()?;
    let mut values: Vec<f64> = multi_indices(n, p)
        .iter()
        .map(|idx| idx.iter().map(|&j| base_values[j]).sum())
        .collect();
    values.sort_by(f64::total_cmp);
    Ok(EigenSummaryF { p, values, base_values, base_vectors })
}

/// `F_θ⁻¹ f` on `Im F_θ`.
///
/// Eigenvalues with `|λ| ≤ tol·max|λ|` are treated as kernel. Fails with
/// [`ExteriorError::Membership`] when the kernel component of `f` exceeds `tol·|f|`.
pub fn pinv_f(theta: &QuadraticForm, f: &PointForm, tol: f64) -> Result<PointForm, ExteriorError> {
    let n = theta.dim();
    if f.n != n {
        return Err(ExteriorError::DimensionMismatch { expected: n, got: f.n });
    }
    if f.p == 0 {
        return Err(ExteriorError::InvalidDegree(0));
    }
    let m = f_matrix(theta, f.p)?;
    let (values, vectors) = sorted_symmetric_eigen(&m)?;
    let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = tol * scale;
    let fv = f.to_vector();
    let mut out = DVector::zeros(fv.len());
    let mut kernel_sq = 0.0;
    for (k, &lambda) in values.iter().enumerate() {
        let col = vectors.column(k);
        let c = col.dot(&fv);
        if scale == 0.0 || lambda.abs() <= cutoff {
            kernel_sq += c * c;
        } else {
            out += col * (c / lambda);
        }
    }
    let residual = kernel_sq.sqrt();
    let bound = tol * f.norm();
    if residual > bound {
        return Err(ExteriorError::Membership { residual, bound });
    }
    PointForm::from_coeffs(n, f.p, out.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WedgeInverseRecord {
    pub membership_ok: bool,
    pub cross_ineq_ok: bool,
    pub self_ineq_ok: bool,
    /// `|τ∧ξ − P_Im(τ∧ξ)|`.
    pub membership_residual: f64,
    /// `⟨F⁻¹f, τ∧ξ⟩`.
    pub cross_lhs: f64,
    /// `⟨F⁻¹f, f⟩^{1/2} |ξ|`.
    pub cross_rhs: f64,
    /// `⟨F⁻¹(τ∧ξ), τ∧ξ⟩`.
    pub self_lhs: f64,
    /// `|ξ|²`.
    pub xi_norm_sq: f64,
}

/// Checks `τ∧ξ ∈ Im F_θ` together with the cross and self inequalities,
/// given `θ − τ⊗τ` p-positive semi-definite and `f ∈ Im F_θ`.
pub fn wedge_inverse_check(
    theta: &QuadraticForm,
    tau: &[f64],
    xi: &PointForm,
    f: &PointForm,
    slack: f64,
) -> Result<WedgeInverseRecord, ExteriorError> {
    let n = theta.dim();
    let p = xi.p + 1;
    if tau.len() != n || xi.n != n {
        return Err(ExteriorError::DimensionMismatch { expected: n, got: tau.len().max(xi.n) });
    }
    if f.p != p {
        return Err(ExteriorError::InvalidDegree(f.p));
    }
    let tol = Tolerances::default();
    let shifted = theta.sub(&QuadraticForm::outer(tau));
    let trace = min_p_trace(&shifted, p)?;
    if trace < -tol.semi {
        return Err(ExteriorError::Precondition(format!(
            "θ − τ⊗τ is not {p}-positive semi-definite (min {p}-trace {trace:.3e})"
        )));
    }
    let tx = wedge(&PointForm::covector(tau), xi)?;
    let xi_norm_sq = xi.norm_sq();

    let (membership_ok, membership_residual, self_lhs) = match pinv_f(theta, &tx, DEFAULT_PINV_TOL) {
        Ok(inv) => {
            let image = apply_f(theta, &inv)?;
            (true, image.sub(&tx)?.norm(), inv.dot(&tx)?)
        }
        Err(ExteriorError::Membership { residual, .. }) => (false, residual, f64::NAN),
        Err(e) => return Err(e),
    };
    let inv_f = pinv_f(theta, f, DEFAULT_PINV_TOL)?;
    let cross_lhs = inv_f.dot(&tx)?;
    let cross_rhs = inv_f.dot(f)?.max(0.0).sqrt() * xi_norm_sq.sqrt();
    Ok(WedgeInverseRecord {
        membership_ok,
        cross_ineq_ok: cross_lhs <= cross_rhs + slack,
        self_ineq_ok: membership_ok && self_lhs <= xi_norm_sq + slack,
        membership_residual,
        cross_lhs,
        cross_rhs,
        self_lhs,
        xi_norm_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseBound {
    /// `⟨F_θ⁻¹ g, g⟩`.
    pub lhs: f64,
    /// `p⁻² θ^{jk} g_{jK} g_{kK}`.
    pub rhs: f64,
}

impl InverseBound {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
    }
}

/// Both sides of `⟨F_θ⁻¹g, g⟩ ≤ p⁻² θ^{jk} g_{jK} g_{kK}` for positive-definite `θ`.
pub fn inverse_bound_check(theta: &QuadraticForm, g: &PointForm) -> Result<InverseBound, ExteriorError> {
    let n = theta.dim();
    if g.n != n {
        return Err(ExteriorError::DimensionMismatch { expected: n, got: g.n });
    }
    if g.p == 0 {
        return Err(ExteriorError::InvalidDegree(0));
    }
    let lowest = min_p_trace(theta, 1)?;
    if lowest <= Tolerances::default().strict {
        return Err(ExteriorError::Precondition(format!(
            "θ is not strictly positive definite (smallest eigenvalue {lowest:.3e})"
        )));
    }
    let inverse = theta
        .matrix()
        .clone()
        .try_inverse()
        .ok_or_else(|| ExteriorError::Precondition("θ is singular".into()))?;
    let theta_inv = QuadraticForm::new(inverse)?;
    let lhs = pinv_f(theta, g, DEFAULT_PINV_TOL)?.dot(g)?;
    // θ^{jk} g_{jK} g_{kK} = ⟨F_{θ⁻¹} g, g⟩
    let p = g.p as f64;
    let rhs = apply_f(&theta_inv, g)?.dot(g)? / (p * p);
    Ok(InverseBound { lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rank_unrank_small() {
        for n in 1..=8 {
            for p in 0..=n {
                for r in 0..binomial(n, p) {
                    let idx = MultiIndex::unrank(r, n, p);
                    assert_eq!(idx.rank(n), r);
                    assert!(idx.indices().windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }

    #[test]
    fn lex_order_of_pairs() {
        let pairs = multi_indices(3, 2);
        assert_eq!(pairs, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn wedge_basis() {
        let w = wedge(&PointForm::basis(3, &[1]).unwrap(), &PointForm::basis(3, &[2]).unwrap()).unwrap();
        assert_eq!(w, PointForm::basis(3, &[1, 2]).unwrap());
    }

    #[test]
    fn wedge_sorts_with_sign() {
        // (ω¹+ω²) ∧ (ω¹∧ω³) = ω²∧ω¹∧ω³ = −ω¹∧ω²∧ω³
        let a = PointForm::covector(&[1.0, 1.0, 0.0]);
        let b = PointForm::basis(3, &[1, 3]).unwrap();
        let w = wedge(&a, &b).unwrap();
        assert_eq!(w.coeffs(), &[-1.0]);
    }

    #[test]
    fn wedge_degree_overflow() {
        let a = PointForm::basis(2, &[1, 2]).unwrap();
        let b = PointForm::basis(2, &[1]).unwrap();
        assert!(matches!(wedge(&a, &b), Err(ExteriorError::DegreeOverflow { .. })));
        let c = PointForm::basis(3, &[1]).unwrap();
        assert!(matches!(wedge(&b, &c), Err(ExteriorError::DimensionMismatch { .. })));
    }

    #[test]
    fn interior_basis_contractions() {
        let g = PointForm::basis(3, &[1, 2]).unwrap();
        let e1 = interior_product(&[1.0, 0.0, 0.0], &g).unwrap();
        assert_eq!(e1, PointForm::basis(3, &[2]).unwrap());
        let e2 = interior_product(&[0.0, 1.0, 0.0], &g).unwrap();
        assert_eq!(e2, PointForm::basis(3, &[1]).unwrap().scaled(-1.0));
        let e3 = interior_product(&[0.0, 0.0, 1.0], &g).unwrap();
        assert_eq!(e3.norm(), 0.0);
        assert!(matches!(
            interior_product(&[1.0], &PointForm::scalar(1, 2.0)),
            Err(ExteriorError::InvalidDegree(0))
        ));
    }

    #[test]
    fn f_identity_scales_by_degree() {
        let g = PointForm::from_coeffs(4, 2, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]).unwrap();
        let fg = apply_f(&QuadraticForm::identity(4), &g).unwrap();
        for (a, b) in fg.coeffs().iter().zip(g.coeffs()) {
            assert_abs_diff_eq!(*a, 2.0 * b, epsilon = 1e-15);
        }
    }

    #[test]
    fn f_diag_on_basis() {
        let theta = QuadraticForm::diag(&[1.0, 2.0, 3.0]);
        let g = PointForm::basis(3, &[1, 2]).unwrap();
        assert_eq!(apply_f(&theta, &g).unwrap(), g.scaled(3.0));
    }

    #[test]
    fn eigen_f_examples() {
        let s = eigen_f(&QuadraticForm::diag(&[1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(s.values, vec![3.0, 4.0, 5.0]);
        let s = eigen_f(&QuadraticForm::identity(4), 3).unwrap();
        assert_eq!(s.values, vec![3.0; 4]);
        let s = eigen_f(&QuadraticForm::diag(&[-1.0, 2.0]), 2).unwrap();
        assert_eq!(s.values, vec![1.0]);
    }

    #[test]
    fn pinv_examples() {
        let theta = QuadraticForm::diag(&[0.0, 0.0, 1.0]);
        let w3 = PointForm::basis(3, &[3]).unwrap();
        let inv = pinv_f(&theta, &w3, DEFAULT_PINV_TOL).unwrap();
        assert_abs_diff_eq!(inv.coeffs()[2], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(inv.coeffs()[0].abs() + inv.coeffs()[1].abs(), 0.0, epsilon = 1e-14);
        let w1 = PointForm::basis(3, &[1]).unwrap();
        assert!(matches!(pinv_f(&theta, &w1, DEFAULT_PINV_TOL), Err(ExteriorError::Membership { .. })));
    }

    #[test]
    fn pinv_of_zero_operator() {
        let theta = QuadraticForm::zeros(2);
        let zero = PointForm::zeros(2, 1).unwrap();
        assert_eq!(pinv_f(&theta, &zero, DEFAULT_PINV_TOL).unwrap().norm(), 0.0);
        let w1 = PointForm::basis(2, &[1]).unwrap();
        assert!(pinv_f(&theta, &w1, DEFAULT_PINV_TOL).is_err());
    }

    #[test]
    fn wedge_inverse_equality_case() {
        let tau = [1.0, 0.0, 0.0];
        let theta = QuadraticForm::outer(&tau);
        let xi = PointForm::basis(3, &[2]).unwrap();
        let f = PointForm::basis(3, &[1, 2]).unwrap();
        let rec = wedge_inverse_check(&theta, &tau, &xi, &f, 1e-10).unwrap();
        assert!(rec.membership_ok && rec.cross_ineq_ok && rec.self_ineq_ok);
        assert_abs_diff_eq!(rec.self_lhs, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rec.xi_norm_sq, 1.0, epsilon = 0.0);
    }

    #[test]
    fn wedge_inverse_zero_xi() {
        let tau = [0.3, -0.2];
        let theta = QuadraticForm::outer(&tau).add(&QuadraticForm::identity(2));
        let xi = PointForm::zeros(2, 0).unwrap();
        let f = PointForm::covector(&[1.0, 2.0]);
        let rec = wedge_inverse_check(&theta, &tau, &xi, &f, 1e-10).unwrap();
        assert_eq!(rec.self_lhs, 0.0);
        assert_eq!(rec.cross_lhs, 0.0);
        assert!(rec.cross_ineq_ok && rec.self_ineq_ok);
    }

    #[test]
    fn wedge_inverse_precondition() {
        let tau = [1.0, 0.0];
        let theta = QuadraticForm::identity(2).scaled(0.5);
        let xi = PointForm::scalar(2, 1.0);
        let f = PointForm::covector(&[1.0, 0.0]);
        assert!(matches!(
            wedge_inverse_check(&theta, &tau, &xi, &f, 1e-10),
            Err(ExteriorError::Precondition(_))
        ));
    }

    #[test]
    fn inverse_bound_examples() {
        let g = PointForm::basis(2, &[1, 2]).unwrap();
        let b = inverse_bound_check(&QuadraticForm::diag(&[1.0, 100.0]), &g).unwrap();
        assert_abs_diff_eq!(b.lhs, 1.0 / 101.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.rhs, 0.25 * (1.0 + 0.01), epsilon = 1e-15);
        assert!(b.holds(0.0));

        let g = PointForm::from_coeffs(3, 2, vec![0.6, 0.0, 0.8]).unwrap();
        let b = inverse_bound_check(&QuadraticForm::identity(3), &g).unwrap();
        assert_abs_diff_eq!(b.lhs, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(b.rhs, 0.5, epsilon = 1e-14);

        assert!(matches!(
            inverse_bound_check(&QuadraticForm::diag(&[1.0, 0.0]), &PointForm::basis(2, &[1]).unwrap()),
            Err(ExteriorError::Precondition(_))
        ));
    }
}
