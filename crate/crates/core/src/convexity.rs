//! p-positivity of symmetric forms, p-plurisubharmonicity of fields, boundary
//! p-convexity of defining functions, and the curvature term on p-forms.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::exterior::{
    binomial, multi_indices, rank_of, sort_sign, sorted_symmetric_eigen, ExteriorError, PointForm,
    QuadraticForm,
};
use crate::fieldexpr::{ExprError, Field};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvexityError {
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error("evaluation failed at sample {index}: {source}")]
    Evaluation { index: usize, source: ExprError },
    #[error("gradient norm {norm:.3e} at sample {index} is below {tol:.3e}")]
    DegenerateGradient { index: usize, norm: f64, tol: f64 },
    #[error("no samples supplied")]
    NoSamples,
}

/// Sign bands for verdicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `min_p_trace > strict` counts as strictly positive.
    pub strict: f64,
    /// `min_p_trace ≥ −semi` counts as semi-definite.
    pub semi: f64,
    /// Smallest admissible `|∇r|` at boundary samples.
    pub gradient: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { strict: 1e-8, semi: 1e-8, gradient: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Fail,
    Semi,
    Strict,
}

impl Verdict {
    pub fn classify(min_p_trace: f64, tol: &Tolerances) -> Verdict {
        if min_p_trace > tol.strict {
            Verdict::Strict
        } else if min_p_trace >= -tol.semi {
            Verdict::Semi
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Fail => "fail",
            Verdict::Semi => "semi",
            Verdict::Strict => "strict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Strict,
    Semi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub p: usize,
    pub min_p_trace: f64,
    pub verdict: Verdict,
    /// Eigenvectors of the `p` smallest eigenvalues, one per column.
    pub witness: DMatrix<f64>,
}

impl ConvexityReport {
    /// Whether the verdict meets the requested mode.
    pub fn satisfies(&self, mode: Mode) -> bool {
        match mode {
            Mode::Strict => self.verdict == Verdict::Strict,
            Mode::Semi => self.verdict >= Verdict::Semi,
        }
    }
}

/// `λ₁ + … + λ_p` for the ascending eigenvalues of `θ`.
pub fn min_p_trace(theta: &QuadraticForm, p: usize) -> Result<f64, ExteriorError> {
    let n = theta.dim();
    if p == 0 || p > n {
        return Err(ExteriorError::InvalidDegree(p));
    }
    let (values, _) = theta.sorted_eigen()?;
    Ok(values[..p].iter().sum())
}

fn report_from_matrix(
    m: &DMatrix<f64>,
    p: usize,
    shift: f64,
    tol: &Tolerances,
) -> Result<ConvexityReport, ExteriorError> {
    let n = m.nrows();
    if p == 0 || p > n {
        return Err(ExteriorError::InvalidDegree(p));
    }
    let (values, vectors) = sorted_symmetric_eigen(m)?;
    let min_p_trace = values[..p].iter().sum::<f64>() + shift;
    Ok(ConvexityReport {
        p,
        min_p_trace,
        verdict: Verdict::classify(min_p_trace, tol),
        witness: vectors.columns(0, p).into_owned(),
    })
}

/// p-positivity report for `θ`. Use [`ConvexityReport::satisfies`] with a [`Mode`].
pub fn is_p_positive(theta: &QuadraticForm, p: usize, tol: &Tolerances) -> Result<ConvexityReport, ExteriorError> {
    report_from_matrix(theta.matrix(), p, 0.0, tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRegionReport {
    pub samples: Vec<Vec<f64>>,
    pub reports: Vec<ConvexityReport>,
    pub verdict: Verdict,
    /// Sample index with the smallest p-trace.
    pub worst: usize,
}

impl FieldRegionReport {
    pub fn min_p_trace(&self) -> f64 {
        self.reports[self.worst].min_p_trace
    }

    fn assemble(samples: &[Vec<f64>], reports: Vec<ConvexityReport>) -> Self {
        let worst = (0..reports.len())
            .min_by(|&a, &b| reports[a].min_p_trace.total_cmp(&reports[b].min_p_trace))
            .unwrap_or(0);
        let verdict = reports.iter().map(|r| r.verdict).min().unwrap_or(Verdict::Fail);
        FieldRegionReport { samples: samples.to_vec(), reports, verdict, worst }
    }
}

/// Hessian p-positivity of `φ` at every sample; the global verdict is the worst one.
pub fn field_p_psh_report(
    phi: &dyn Field,
    samples: &[Vec<f64>],
    p: usize,
    tol: &Tolerances,
) -> Result<FieldRegionReport, ConvexityError> {
    if samples.is_empty() {
        return Err(ConvexityError::NoSamples);
    }
    let mut reports = Vec::with_capacity(samples.len());
    for (index, x) in samples.iter().enumerate() {
        let jet = phi.jet(x).map_err(|source| ConvexityError::Evaluation { index, source })?;
        reports.push(report_from_matrix(&jet.hess, p, 0.0, tol)?);
    }
    Ok(FieldRegionReport::assemble(samples, reports))
}

/// Orthonormal basis of `{v : ⟨v, ν⟩ = 0}` as columns, for a unit vector `ν`.
pub fn tangent_basis(normal: &DVector<f64>) -> DMatrix<f64> {
    let n = normal.len();
    let mut basis: Vec<DVector<f64>> = vec![normal.clone()];
    // Seed with coordinate axes least aligned with ν first.
    let mut axes: Vec<usize> = (0..n).collect();
    axes.sort_by(|&a, &b| normal[a].abs().total_cmp(&normal[b].abs()));
    for &i in &axes {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    DMatrix::from_columns(&basis[1..])
}

/// Tangential p-positivity of `D²r` at boundary samples.
pub fn boundary_p_convexity(
    r: &dyn Field,
    boundary_samples: &[Vec<f64>],
    p: usize,
    tol: &Tolerances,
) -> Result<FieldRegionReport, ConvexityError> {
    let n = r.dim();
    if p == 0 || p >= n {
        return Err(ExteriorError::InvalidDegree(p).into());
    }
    if boundary_samples.is_empty() {
        return Err(ConvexityError::NoSamples);
    }
    let mut reports = Vec::with_capacity(boundary_samples.len());
    for (index, x) in boundary_samples.iter().enumerate() {
        let jet = r.jet(x).map_err(|source| ConvexityError::Evaluation { index, source })?;
        let norm = jet.grad.norm();
        if norm <= tol.gradient {
            return Err(ConvexityError::DegenerateGradient { index, norm, tol: tol.gradient });
        }
        let t = tangent_basis(&(&jet.grad / norm));
        let restricted = t.transpose() * &jet.hess * &t;
        let sym = (&restricted + restricted.transpose()) * 0.5;
        let mut rep = report_from_matrix(&sym, p, 0.0, tol)?;
        rep.witness = &t * rep.witness;
        reports.push(rep);
    }
    Ok(FieldRegionReport::assemble(boundary_samples, reports))
}

/// Self-adjoint operator on 2-forms in the ranked basis `ω^k∧ω^l`, `k < l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureOperator {
    n: usize,
    matrix: DMatrix<f64>,
}

impl CurvatureOperator {
    pub fn new(n: usize, m: DMatrix<f64>) -> Result<Self, ExteriorError> {
        let len = binomial(n, 2);
        if m.nrows() != len || m.ncols() != len {
            return Err(ExteriorError::DimensionMismatch { expected: len, got: m.nrows() });
        }
        Ok(CurvatureOperator { n, matrix: (&m + m.transpose()) * 0.5 })
    }

    /// Flat space.
    pub fn zero(n: usize) -> Self {
        let len = binomial(n, 2);
        CurvatureOperator { n, matrix: DMatrix::zeros(len, len) }
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let len = binomial(n, 2);
        CurvatureOperator { n, matrix: DMatrix::identity(len, len) * c }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Smallest and largest eigenvalues.
    pub fn extremes(&self) -> Result<(f64, f64), ExteriorError> {
        if self.matrix.nrows() == 0 {
            return Ok((0.0, 0.0));
        }
        let (values, _) = sorted_symmetric_eigen(&self.matrix)?;
        Ok((values[0], values[values.len() - 1]))
    }

    pub fn quadratic(&self, xi: &PointForm) -> f64 {
        let v = xi.to_vector();
        v.dot(&(&self.matrix * &v))
    }
}

/// `ξ^g_I = Σ_a Σ_i g_{i₁…(i)_a…i_p} ω^i∧ω^{i_a}`, one 2-form per increasing `I`.
pub fn xi_forms(g: &PointForm) -> Result<Vec<PointForm>, ExteriorError> {
    let n = g.dim();
    let p = g.degree();
    if p == 0 || p > n {
        return Err(ExteriorError::InvalidDegree(p));
    }
    let mut out = Vec::with_capacity(binomial(n, p));
    let mut seq = vec![0usize; p];
    for idx in multi_indices(n, p) {
        let mut xi = PointForm::zeros(n, 2)?;
        for a in 0..p {
            for i in 0..n {
                if i == idx[a] {
                    continue;
                }
                seq.copy_from_slice(&idx);
                seq[a] = i;
                let Some(sign) = sort_sign(&seq) else { continue };
                let mut sorted = seq.clone();
                sorted.sort_unstable();
                let coeff = sign * g.coeffs()[rank_of(&sorted, n)];
                // ω^i ∧ ω^{i_a}
                let (lo, hi, s) = if i < idx[a] { (i, idx[a], 1.0) } else { (idx[a], i, -1.0) };
                xi.coeffs_mut()[rank_of(&[lo, hi], n)] += s * coeff;
            }
        }
        out.push(xi);
    }
    Ok(out)
}

/// `Σ_I ⟨𝔯 ξ^g_I, ξ^g_I⟩`.
pub fn curvature_term(curv: &CurvatureOperator, g: &PointForm) -> Result<f64, ExteriorError> {
    if curv.dim() != g.dim() {
        return Err(ExteriorError::DimensionMismatch { expected: curv.dim(), got: g.dim() });
    }
    Ok(xi_forms(g)?.iter().map(|xi| curv.quadratic(xi)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureBounds {
    pub term: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CurvatureBounds {
    pub fn holds(&self, slack: f64) -> bool {
        self.lower <= self.term + slack && self.term <= self.upper + slack
    }
}

/// `p(n−p)λ_𝔯|g|² ≤ Σ_I ⟨𝔯ξ_I, ξ_I⟩ ≤ p(n−p)Λ_𝔯|g|²`.
pub fn curvature_bounds_check(curv: &CurvatureOperator, g: &PointForm) -> Result<CurvatureBounds, ExteriorError> {
    let term = curvature_term(curv, g)?;
    let (lo, hi) = curv.extremes()?;
    let factor = (g.degree() * (g.dim() - g.degree())) as f64 * g.norm_sq();
    Ok(CurvatureBounds { term, lower: factor * lo, upper: factor * hi })
}

/// For each fixed increasing `J`, counts the triples `(I, a, i ∉ I)` whose
/// substituted index is a permutation of `J`. Returns the common count.
///
/// # Panics
/// If the count differs between two multi-indices `J`.
pub fn signature_count(n: usize, p: usize) -> usize {
    assert!(p >= 1 && p <= n, "need 1 <= p <= n");
    let mut counts = vec![0usize; binomial(n, p)];
    let mut seq = vec![0usize; p];
    for idx in multi_indices(n, p) {
        for a in 0..p {
            for i in 0..n {
                if idx.contains(&i) {
                    continue;
                }
                seq.copy_from_slice(&idx);
                seq[a] = i;
                if let Some(sign) = sort_sign(&seq) {
                    let mut sorted = seq.clone();
                    sorted.sort_unstable();
                    counts[rank_of(&sorted, n)] += (sign * sign) as usize;
                }
            }
        }
    }
    let first = counts[0];
    assert!(counts.iter().all(|&c| c == first), "signature counts differ across multi-indices");
    first
}

/// p-positivity of `F_φ + p(n−p)λ_𝔯 Id` on p-forms.
pub fn curvature_shift_hypothesis(
    theta_phi: &QuadraticForm,
    lambda_r: f64,
    p: usize,
    tol: &Tolerances,
) -> Result<ConvexityReport, ExteriorError> {
    let n = theta_phi.dim();
    if p == 0 || p > n {
        return Err(ExteriorError::InvalidDegree(p));
    }
    let shift = (p * (n - p)) as f64 * lambda_r;
    report_from_matrix(theta_phi.matrix(), p, shift, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldexpr::ScalarFieldExpr;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn min_p_trace_examples() {
        let t = QuadraticForm::diag(&[-1.0, 2.0, 3.0]);
        assert!((min_p_trace(&t, 1).unwrap() + 1.0).abs() < 1e-14);
        assert!((min_p_trace(&t, 2).unwrap() - 1.0).abs() < 1e-14);
        assert!((min_p_trace(&t, 3).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn verdicts() {
        let t = QuadraticForm::diag(&[-1.0, 2.0, 3.0]);
        assert_eq!(is_p_positive(&t, 1, &tol()).unwrap().verdict, Verdict::Fail);
        assert_eq!(is_p_positive(&t, 2, &tol()).unwrap().verdict, Verdict::Strict);
        let r = is_p_positive(&QuadraticForm::diag(&[-1.0, 1.0]), 2, &tol()).unwrap();
        assert_eq!(r.verdict, Verdict::Semi);
        assert!(r.satisfies(Mode::Semi) && !r.satisfies(Mode::Strict));
        assert_eq!(is_p_positive(&QuadraticForm::identity(3), 2, &tol()).unwrap().verdict, Verdict::Strict);
    }

    #[test]
    fn field_reports() {
        let pts = vec![vec![0.1, 0.2], vec![-0.5, 0.7]];
        let r = field_p_psh_report(&ScalarFieldExpr::parse("x1^2 + x2^2", 2).unwrap(), &pts, 2, &tol()).unwrap();
        assert_eq!(r.verdict, Verdict::Strict);
        assert!((r.min_p_trace() - 4.0).abs() < 1e-12);
        let r = field_p_psh_report(&ScalarFieldExpr::parse("x1^2 - x2^2", 2).unwrap(), &pts, 2, &tol()).unwrap();
        assert_eq!(r.verdict, Verdict::Semi);
        let r = field_p_psh_report(&ScalarFieldExpr::parse("x1^2 - 3*x2^2", 2).unwrap(), &pts, 2, &tol()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!((r.min_p_trace() + 4.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_sphere_and_halfspace() {
        let sphere = ScalarFieldExpr::parse("x1^2 + x2^2 + x3^2 - 1", 3).unwrap();
        let pts = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]];
        for p in 1..=2 {
            let r = boundary_p_convexity(&sphere, &pts, p, &tol()).unwrap();
            assert_eq!(r.verdict, Verdict::Strict);
            assert!((r.min_p_trace() - 2.0 * p as f64).abs() < 1e-12);
        }
        let half = ScalarFieldExpr::parse("x3", 3).unwrap();
        let r = boundary_p_convexity(&half, &[vec![0.3, 0.1, 0.0]], 2, &tol()).unwrap();
        assert_eq!(r.verdict, Verdict::Semi);
        assert!(boundary_p_convexity(&half, &[vec![0.0; 3]], 3, &tol()).is_err());
    }

    #[test]
    fn boundary_torus_inner_equator() {
        // tangential Hessian at (R−a, 0, 0) is diag(−2a/(R−a), 2)
        let (big, small) = (2.0, 0.5);
        let r = ScalarFieldExpr::parse(
            &format!("(sqrt(x1^2 + x2^2) - {big})^2 + x3^2 - {}", small * small),
            3,
        )
        .unwrap();
        let pt = vec![vec![big - small, 0.0, 0.0]];
        let k = -2.0 * small / (big - small);
        let r1 = boundary_p_convexity(&r, &pt, 1, &tol()).unwrap();
        assert_eq!(r1.verdict, Verdict::Fail);
        assert!((r1.min_p_trace() - k).abs() < 1e-12);
        let r2 = boundary_p_convexity(&r, &pt, 2, &tol()).unwrap();
        assert_eq!(r2.verdict, Verdict::Strict);
        assert!((r2.min_p_trace() - (k + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gradient() {
        let r = ScalarFieldExpr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        assert!(matches!(
            boundary_p_convexity(&r, &[vec![0.0, 0.0]], 1, &tol()),
            Err(ConvexityError::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn xi_forms_example() {
        let g = PointForm::basis(2, &[1]).unwrap();
        let xi = xi_forms(&g).unwrap();
        assert_eq!(xi[0].norm(), 0.0);
        assert_eq!(xi[1], PointForm::basis(2, &[1, 2]).unwrap());
        let zero = PointForm::zeros(3, 2).unwrap();
        assert!(xi_forms(&zero).unwrap().iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn curvature_identity_and_flat() {
        let g = PointForm::from_coeffs(4, 2, vec![0.5, -0.1, 0.3, 0.7, 0.2, -0.4]).unwrap();
        let g = g.scaled(1.0 / g.norm());
        let t = curvature_term(&CurvatureOperator::scaled_identity(4, 1.0), &g).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert_eq!(curvature_term(&CurvatureOperator::zero(4), &g).unwrap(), 0.0);
    }

    #[test]
    fn signature_examples() {
        assert_eq!(signature_count(4, 2), 4);
        assert_eq!(signature_count(3, 3), 0);
    }

    #[test]
    fn curvature_shift_examples() {
        let theta = QuadraticForm::diag(&[0.5, 1.0, 2.0]);
        let a = curvature_shift_hypothesis(&theta, 0.0, 2, &tol()).unwrap();
        let b = is_p_positive(&theta, 2, &tol()).unwrap();
        assert_eq!(a.min_p_trace, b.min_p_trace);
        let (n, p) = (4usize, 2usize);
        let lam = -1.0 / (2.0 * (n - p) as f64);
        let r = curvature_shift_hypothesis(&QuadraticForm::identity(n), lam, p, &tol()).unwrap();
        assert!((r.min_p_trace - p as f64 / 2.0).abs() < 1e-14);
        assert_eq!(r.verdict, Verdict::Strict);
        let r = curvature_shift_hypothesis(&QuadraticForm::zeros(3), -0.1, 1, &tol()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
    }
}
