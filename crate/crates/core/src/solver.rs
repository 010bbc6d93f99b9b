//! Weighted minimal solutions of `du = f` on cubical complexes, bound reports
//! for the weighted L² estimates, harmonic spaces and the marginal convexity
//! check for `−log ∫ e^{−φ(x, y)} dy`.
//!
//! The minimal solution in weight `φ` is `u = M_{p−1}⁻¹ dᵀ y` with
//! `(d M_{p−1}⁻¹ dᵀ) y = f`, solved by Jacobi-preconditioned conjugate
//! gradients. Its weighted norm is compared against quadratures of
//! `⟨F_θ⁻¹ f, f⟩` at top-cell centres.

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::convexity::{field_p_psh_report, min_p_trace, ConvexityError, Tolerances, Verdict};
use crate::discrete::{apply_d, mass, spmv, spmv_t, Cochain, CubicalComplex, DiscreteError, WeightedMass};
use crate::exterior::{
    apply_f, binomial, multi_indices, pinv_f, ExteriorError, QuadraticForm, DEFAULT_PINV_TOL,
};
use crate::fieldexpr::{ExprError, Field, Jet2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Discrete(#[from] DiscreteError),
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Convexity(#[from] ConvexityError),
    #[error("right-hand side is not closed: |df| = {norm:.3e} exceeds {bound:.3e}")]
    NotClosed { norm: f64, bound: f64 },
    #[error("harmonic component {norm:.3e} ({relative:.3e} relative) obstructs solvability")]
    CohomologyObstruction { norm: f64, relative: f64 },
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:.3e} (Jacobi diagonal ratio {diag_ratio:.3e})")]
    NoConvergence { iterations: usize, residual: f64, diag_ratio: f64 },
    #[error("top cell {cell}: f has a component {residual:.3e} in the kernel of F (bound {bound:.3e})")]
    Membership { cell: usize, residual: f64, bound: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no spectral gap of {factor}x around the cutoff; spectrum {spectrum:?}")]
    GapAmbiguous { spectrum: Vec<f64>, factor: f64 },
    #[error("quadrature box too small at x = {x:?}: tail fraction {tail:.3e}")]
    Tail { x: Vec<f64>, tail: f64 },
}

/// Conjugate-gradient settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative residual target of the CG iterations.
    pub tol: f64,
    /// Relative bound on `|df|` and on the harmonic part of `f`.
    pub closed_tol: f64,
    /// `None` picks `10·(rows) + 1000`.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-12, closed_tol: 1e-8, max_iter: None }
    }
}

/// Settings shared by the bound reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub solve: SolveOptions,
    pub slack: f64,
    pub tolerances: Tolerances,
    /// Membership tolerance for `F⁻¹`.
    pub pinv_tol: f64,
    /// Seed for sampled checks.
    pub seed: u64,
    /// Number of sampled forms in the a-priori check.
    pub apriori_samples: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            solve: SolveOptions::default(),
            slack: 0.05,
            tolerances: Tolerances::default(),
            pinv_tol: DEFAULT_PINV_TOL,
            seed: 0,
            apriori_samples: 4,
        }
    }
}

// ---------------------------------------------------------------------------
// Conjugate gradients
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − Ax‖₂ / ‖b‖₂` from the recurrence.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG for a symmetric positive semi-definite operator and a
/// consistent right-hand side. `inv_diag` is the Jacobi preconditioner.
/// Stops once `‖r‖₂ ≤ max(tol·‖b‖₂, atol)`.
pub fn pcg<A>(mut apply: A, inv_diag: &[f64], b: &[f64], tol: f64, atol: f64, max_iter: usize) -> CgOutcome
where
    A: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm <= atol {
        return CgOutcome { x, iterations: 0, residual: 0.0, converged: true };
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, m)| r * m).collect();
    let mut dir = z.clone();
    let mut ad = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    let target = (tol * b_norm).max(atol) / b_norm;
    for it in 1..=max_iter {
        apply(&dir, &mut ad);
        let curvature = dot(&dir, &ad);
        if !(curvature > 0.0) {
            return CgOutcome { x, iterations: it, residual, converged: residual <= target };
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * dir[i];
            r[i] -= alpha * ad[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if residual <= target {
            return CgOutcome { x, iterations: it, residual, converged: true };
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            dir[i] = z[i] + beta * dir[i];
        }
    }
    CgOutcome { x, iterations: max_iter, residual, converged: false }
}

/// `tol·‖|A| |x|‖₂`: the rounding scale of `A x` before cancellation.
fn rounding_floor(a: &nalgebra_sparse::CsrMatrix<f64>, x: &[f64], transpose: bool, tol: f64) -> f64 {
    let mut out = vec![0.0; if transpose { a.ncols() } else { a.nrows() }];
    for (row, col, &v) in a.triplet_iter() {
        if transpose {
            out[col] += (v * x[row]).abs();
        } else {
            out[row] += (v * x[col]).abs();
        }
    }
    tol * dot(&out, &out).sqrt()
}

fn invert_diag(diag: &[f64]) -> (Vec<f64>, f64) {
    let positive = diag.iter().copied().filter(|&v| v > 0.0);
    let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let ratio = if hi > 0.0 { hi / lo } else { 1.0 };
    (diag.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect(), ratio)
}

fn default_max_iter(rows: usize, opts: &SolveOptions) -> usize {
    opts.max_iter.unwrap_or(10 * rows + 1000)
}

fn cg_or_fail(out: CgOutcome, diag_ratio: f64) -> Result<CgOutcome, SolverError> {
    if out.converged {
        Ok(out)
    } else {
        Err(SolverError::NoConvergence { iterations: out.iterations, residual: out.residual, diag_ratio })
    }
}

/// Solves `(d M_lo⁻¹ dᵀ) y = f` and returns `u = M_lo⁻¹ dᵀ y`.
fn solve_coexact(
    cx: &CubicalComplex,
    lower: &WeightedMass,
    f: &[f64],
    atol: f64,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, usize), SolverError> {
    let d = cx.coboundary(lower.p);
    let mut diag = vec![0.0; d.nrows()];
    for (row, col, &v) in d.triplet_iter() {
        diag[row] += v * v / lower.diag[col];
    }
    let (inv, ratio) = invert_diag(&diag);
    let mut tmp = vec![0.0; d.ncols()];
    let apply = |y: &[f64], out: &mut [f64]| {
        spmv_t(d, y, &mut tmp);
        for (t, m) in tmp.iter_mut().zip(&lower.diag) {
            *t /= m;
        }
        spmv(d, &tmp, out);
    };
    let out = cg_or_fail(pcg(apply, &inv, f, opts.tol, atol, default_max_iter(f.len(), opts)), ratio)?;
    let mut u = vec![0.0; d.ncols()];
    spmv_t(d, &out.x, &mut u);
    for (v, m) in u.iter_mut().zip(&lower.diag) {
        *v /= m;
    }
    Ok((u, out.iterations))
}

/// Weighted least-squares projection of `c` onto `Im d_{p−1}`: returns `d a`.
fn exact_part(
    cx: &CubicalComplex,
    upper: &WeightedMass,
    c: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, usize), SolverError> {
    let p = upper.p;
    let d = cx.coboundary(p - 1);
    let mut diag = vec![0.0; d.ncols()];
    for (row, col, &v) in d.triplet_iter() {
        diag[col] += v * v * upper.diag[row];
    }
    let (inv, ratio) = invert_diag(&diag);
    let weighted: Vec<f64> = c.iter().zip(&upper.diag).map(|(v, m)| v * m).collect();
    let mut rhs = vec![0.0; d.ncols()];
    spmv_t(d, &weighted, &mut rhs);
    let mut tmp = vec![0.0; d.nrows()];
    let apply = |a: &[f64], out: &mut [f64]| {
        spmv(d, a, &mut tmp);
        for (t, m) in tmp.iter_mut().zip(&upper.diag) {
            *t *= m;
        }
        spmv_t(d, &tmp, out);
    };
    let atol = rounding_floor(d, &weighted, true, opts.tol);
    let out = cg_or_fail(pcg(apply, &inv, &rhs, opts.tol, atol, default_max_iter(rhs.len(), opts)), ratio)?;
    let mut da = vec![0.0; d.nrows()];
    spmv(d, &out.x, &mut da);
    Ok((da, out.iterations))
}

// ---------------------------------------------------------------------------
// Minimal solutions
// ---------------------------------------------------------------------------

/// Weighted-minimal solution of `du = f`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalSolution {
    pub u: Cochain,
    pub iterations: usize,
    /// `‖du − f‖_{M_p} / ‖f‖_{M_p}`.
    pub residual: f64,
    /// `‖f − Proj_{Im d} f‖_{M_p}`.
    pub harmonic_obstruction: f64,
}

/// Solution of `du = f` orthogonal to `Ker d` in the `e^{−φ}`-weighted inner product.
pub fn minimal_solution(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    opts: &SolveOptions,
) -> Result<MinimalSolution, SolverError> {
    let p = f.p;
    let n = cx.dim();
    if p == 0 || p > n {
        return Err(DiscreteError::InvalidDegree(p).into());
    }
    if f.values.len() != cx.num_cells(p) {
        return Err(DiscreteError::LengthMismatch { expected: cx.num_cells(p), got: f.values.len() }.into());
    }
    let lower = mass(cx, phi, p - 1)?;
    let upper = mass(cx, phi, p)?;
    let f_norm = upper.norm_sq(&f.values).sqrt();
    if f_norm == 0.0 {
        return Ok(MinimalSolution { u: Cochain::zeros(cx, p - 1), iterations: 0, residual: 0.0, harmonic_obstruction: 0.0 });
    }
    if p < n {
        let df = apply_d(cx, f);
        let norm = mass(cx, phi, p + 1)?.norm_sq(&df.values).sqrt();
        let bound = opts.closed_tol * f_norm;
        if norm > bound {
            return Err(SolverError::NotClosed { norm, bound });
        }
    }
    let (exact, proj_iters) = exact_part(cx, &upper, &f.values, opts)?;
    let harmonic: Vec<f64> = f.values.iter().zip(&exact).map(|(a, b)| a - b).collect();
    let obstruction = upper.norm_sq(&harmonic).sqrt();
    if obstruction > opts.closed_tol * f_norm {
        return Err(SolverError::CohomologyObstruction { norm: obstruction, relative: obstruction / f_norm });
    }
    let atol = opts.tol * dot(&f.values, &f.values).sqrt();
    let (u, iterations) = solve_coexact(cx, &lower, &exact, atol, opts)?;
    let u = Cochain { p: p - 1, values: u };
    let du = apply_d(cx, &u);
    let diff: Vec<f64> = du.values.iter().zip(&f.values).map(|(a, b)| a - b).collect();
    let residual = upper.norm_sq(&diff).sqrt() / f_norm;
    debug!("minimal solution: p = {p}, {proj_iters} + {iterations} CG iterations, residual {residual:.3e}");
    Ok(MinimalSolution { u, iterations: proj_iters + iterations, residual, harmonic_obstruction: obstruction })
}

// ---------------------------------------------------------------------------
// Hodge decomposition and harmonic spaces
// ---------------------------------------------------------------------------

/// `c = exact + coexact + harmonic`, orthogonal in the weighted inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct HodgeParts {
    pub exact: Vec<f64>,
    pub coexact: Vec<f64>,
    pub harmonic: Vec<f64>,
}

pub fn hodge_decomposition(
    cx: &CubicalComplex,
    phi: &dyn Field,
    c: &Cochain,
    opts: &SolveOptions,
) -> Result<HodgeParts, SolverError> {
    let p = c.p;
    let n = cx.dim();
    if p > n {
        return Err(DiscreteError::InvalidDegree(p).into());
    }
    let len = cx.num_cells(p);
    let upper = mass(cx, phi, p)?;
    let exact = if p > 0 { exact_part(cx, &upper, &c.values, opts)?.0 } else { vec![0.0; len] };
    let coexact = if p < n {
        let dc = apply_d(cx, c);
        let atol = rounding_floor(cx.coboundary(p), &c.values, false, opts.tol);
        solve_coexact(cx, &upper, &dc.values, atol, opts)?.0
    } else {
        vec![0.0; len]
    };
    let harmonic = (0..len).map(|i| c.values[i] - exact[i] - coexact[i]).collect();
    Ok(HodgeParts { exact, coexact, harmonic })
}

/// Harmonic space found by projecting random probes.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSpace {
    pub p: usize,
    pub rank: usize,
    /// Orthonormal in the weighted inner product.
    pub basis: Vec<Cochain>,
    /// Gram eigenvalues of the projected probes, descending.
    pub spectrum: Vec<f64>,
}

pub const COHOMOLOGY_PROBES: usize = 30;
pub const COHOMOLOGY_CUTOFF: f64 = 1e-8;
pub const GAP_FACTOR: f64 = 10.0;

/// Dimension of `Ker(dδ_φ + δ_φ d)` on p-cochains.
///
/// Thirty seeded unit probes are stripped of their exact and coexact parts;
/// the rank is the number of Gram eigenvalues above the cutoff, which must be
/// separated from the rest by a factor of ten.
pub fn cohomology_rank(
    cx: &CubicalComplex,
    p: usize,
    phi: &dyn Field,
    seed: u64,
    opts: &SolveOptions,
) -> Result<HarmonicSpace, SolverError> {
    if p > cx.dim() {
        return Err(DiscreteError::InvalidDegree(p).into());
    }
    let len = cx.num_cells(p);
    let m = mass(cx, phi, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = COHOMOLOGY_PROBES.min(len.max(1));
    let mut columns = Vec::with_capacity(probes);
    for _ in 0..probes {
        let mut values: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = m.norm_sq(&values).sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        let parts = hodge_decomposition(cx, phi, &Cochain { p, values }, opts)?;
        columns.push(parts.harmonic);
    }
    let gram = DMatrix::from_fn(probes, probes, |i, j| m.inner(&columns[i], &columns[j]));
    let eig = nalgebra::SymmetricEigen::try_new(gram, 1e-14, 10_000).ok_or(ExteriorError::EigenFailure)?;
    let mut order: Vec<usize> = (0..probes).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let rank = spectrum.iter().filter(|&&v| v > COHOMOLOGY_CUTOFF).count();
    let gap_ok = match (rank, spectrum.get(rank)) {
        (_, None) => false,
        (0, Some(_)) => true,
        (r, Some(&below)) => spectrum[r - 1] >= GAP_FACTOR * below.max(0.0),
    };
    if !gap_ok {
        return Err(SolverError::GapAmbiguous { spectrum, factor: GAP_FACTOR });
    }
    let basis = order[..rank]
        .iter()
        .map(|&k| {
            let v = eig.eigenvectors.column(k);
            let scale = 1.0 / eig.eigenvalues[k].sqrt();
            let values = (0..len).map(|i| scale * (0..probes).map(|j| v[j] * columns[j][i]).sum::<f64>()).collect();
            Cochain { p, values }
        })
        .collect();
    Ok(HarmonicSpace { p, rank, basis, spectrum })
}

// ---------------------------------------------------------------------------
// Weight combinations
// ---------------------------------------------------------------------------

/// `Σ cᵢ φᵢ` over borrowed fields.
#[derive(Clone)]
pub struct FieldCombination<'a> {
    n: usize,
    terms: Vec<(f64, &'a dyn Field)>,
}

impl<'a> FieldCombination<'a> {
    pub fn of(f: &'a dyn Field) -> Self {
        FieldCombination { n: f.dim(), terms: vec![(1.0, f)] }
    }

    pub fn plus(mut self, c: f64, f: &'a dyn Field) -> Self {
        self.terms.push((c, f));
        self
    }
}

impl Field for FieldCombination<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        let mut acc = self.terms[0].1.jet(x)?.scale(self.terms[0].0);
        for &(c, f) in &self.terms[1..] {
            acc = acc.add(&f.jet(x)?.scale(c));
        }
        Ok(acc)
    }

    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        let mut acc = self.terms[0].0 * self.terms[0].1.value(x)?;
        for &(c, f) in &self.terms[1..] {
            acc += c * f.value(x)?;
        }
        Ok(acc)
    }
}

/// `−e^{−ψ}`.
struct NegExpNeg<'a>(&'a dyn Field);

impl Field for NegExpNeg<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        let j = self.0.jet(x)?;
        let e = (-j.value).exp();
        Ok(j.chain(-e, e, -e))
    }
}

// ---------------------------------------------------------------------------
// Bound reports
// ---------------------------------------------------------------------------

/// `lhs ≤ constant · rhs`, with `ratio = lhs / rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub test: String,
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub ratio: f64,
    pub h: f64,
    pub pass: bool,
    pub vacuous: bool,
}

impl BoundReport {
    pub fn new(test: impl Into<String>, lhs: f64, rhs: f64, constant: f64, h: f64, slack: f64) -> Self {
        let vacuous = rhs == 0.0 && lhs == 0.0;
        let ratio = if vacuous { 0.0 } else { lhs / rhs };
        let pass = vacuous || ratio <= constant * (1.0 + slack);
        BoundReport { test: test.into(), lhs, rhs, constant, ratio, h, pass, vacuous }
    }

    /// `ratio / constant`.
    pub fn normalized(&self) -> f64 {
        self.ratio / self.constant
    }
}

fn top_centres(cx: &CubicalComplex) -> Vec<Vec<f64>> {
    cx.top_cells().map(|t| cx.barycenter(cx.dim(), t)).collect()
}

fn require_p_psh(field: &dyn Field, cx: &CubicalComplex, p: usize, tol: &Tolerances, what: &str) -> Result<(), SolverError> {
    let samples = top_centres(cx);
    let report = field_p_psh_report(field, &samples, p, tol)?;
    if report.verdict == Verdict::Fail {
        return Err(SolverError::Precondition(format!(
            "{what} is not {p}-plurisubharmonic at {:?} (min p-trace {:.3e})",
            report.samples[report.worst],
            report.min_p_trace()
        )));
    }
    Ok(())
}

/// Top cells on which the reconstructed form is nonzero.
fn support(cx: &CubicalComplex, f: &Cochain) -> Result<Vec<usize>, SolverError> {
    let norms = cx
        .top_cells()
        .map(|t| Ok(cx.reconstruct(f, t)?.norm()))
        .collect::<Result<Vec<f64>, SolverError>>()?;
    let max = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok((0..norms.len()).filter(|&t| norms[t] > 1e-12 * max).collect())
}

/// `ω ≤ α` on the support of `f` and `0 ≤ ω < upper` at every top-cell centre.
fn require_omega(
    cx: &CubicalComplex,
    f: &Cochain,
    omega: &dyn Field,
    alpha: f64,
    upper: f64,
) -> Result<(), SolverError> {
    let n = cx.dim();
    for t in cx.top_cells() {
        let x = cx.barycenter(n, t);
        let w = omega.value(&x)?;
        if !(0.0..upper).contains(&w) {
            return Err(SolverError::Precondition(format!("omega = {w} at {x:?} is outside [0, {upper})")));
        }
    }
    for t in support(cx, f)? {
        let x = cx.barycenter(n, t);
        let w = omega.value(&x)?;
        if w > alpha {
            return Err(SolverError::Precondition(format!("omega = {w} exceeds alpha = {alpha} at {x:?} in supp f")));
        }
    }
    Ok(())
}

/// `ω² D²a − db ⊗ db` p-positive semi-definite at top-cell centres.
fn require_twist_form(
    cx: &CubicalComplex,
    hess_source: &dyn Field,
    grad_source: &dyn Field,
    omega: &dyn Field,
    p: usize,
    tol: &Tolerances,
) -> Result<(), SolverError> {
    for x in top_centres(cx) {
        let a = hess_source.jet(&x)?;
        let b = grad_source.jet(&x)?;
        let w = omega.value(&x)?;
        let theta = QuadraticForm::new(&a.hess * (w * w) - &b.grad * b.grad.transpose())?;
        let m = min_p_trace(&theta, p)?;
        if m < -tol.semi {
            return Err(SolverError::Precondition(format!(
                "omega^2 D^2 - d(.) (x) d(.) is not {p}-positive semi-definite at {x:?} (min p-trace {m:.3e})"
            )));
        }
    }
    Ok(())
}

/// `Σ_t ⟨F_θ⁻¹ f_t, f_t⟩ e^{−w(c_t)} hⁿ` with `θ = D²(hess_source)` at top-cell centres.
fn inverse_quadrature(
    cx: &CubicalComplex,
    f: &Cochain,
    hess_source: &dyn Field,
    weight: &dyn Field,
    pinv_tol: f64,
) -> Result<f64, SolverError> {
    let n = cx.dim();
    let vol = cx.h().powi(n as i32);
    let mut acc = 0.0;
    for t in cx.top_cells() {
        let ft = cx.reconstruct(f, t)?;
        if ft.norm() == 0.0 {
            continue;
        }
        let x = cx.barycenter(n, t);
        let theta = QuadraticForm::new(hess_source.jet(&x)?.hess)?;
        let g = pinv_f(&theta, &ft, pinv_tol).map_err(|e| match e {
            ExteriorError::Membership { residual, bound } => SolverError::Membership { cell: t, residual, bound },
            other => other.into(),
        })?;
        acc += g.dot(&ft)? * (-weight.value(&x)?).exp() * vol;
    }
    Ok(acc)
}

/// `Σ_σ factor(c_σ) e^{−w(c_σ)} h^{n−2p} u_σ²`.
fn factored_norm_sq(
    cx: &CubicalComplex,
    u: &Cochain,
    weight: &dyn Field,
    factor: Option<&dyn Field>,
) -> Result<f64, SolverError> {
    let m = mass(cx, weight, u.p)?;
    match factor {
        None => Ok(m.norm_sq(&u.values)),
        Some(fac) => {
            let mut acc = 0.0;
            for (i, (&d, &v)) in m.diag.iter().zip(&u.values).enumerate() {
                acc += fac.value(&cx.barycenter(u.p, i))? * d * v * v;
            }
            Ok(acc)
        }
    }
}

/// One estimate: solve in `solve_weight`, measure `u` in `lhs_weight` (times
/// an optional factor), integrate `⟨F⁻¹f, f⟩` with Hessian source and weight.
struct Estimate<'a> {
    test: &'a str,
    solve_weight: &'a dyn Field,
    lhs_weight: &'a dyn Field,
    lhs_factor: Option<&'a dyn Field>,
    hess_source: &'a dyn Field,
    rhs_weight: &'a dyn Field,
    constant: f64,
}

fn run_estimate(
    cx: &CubicalComplex,
    f: &Cochain,
    est: &Estimate<'_>,
    opts: &ReportOptions,
) -> Result<(BoundReport, MinimalSolution), SolverError> {
    let sol = minimal_solution(cx, f, est.solve_weight, &opts.solve)?;
    let lhs = factored_norm_sq(cx, &sol.u, est.lhs_weight, est.lhs_factor)?;
    let rhs = inverse_quadrature(cx, f, est.hess_source, est.rhs_weight, opts.pinv_tol)?;
    let report = BoundReport::new(est.test, lhs, rhs, est.constant, cx.h(), opts.slack);
    debug!("{}: lhs {:.6e}, rhs {:.6e}, ratio {:.6e}", report.test, lhs, rhs, report.ratio);
    Ok((report, sol))
}

fn check_alpha(alpha: f64, upper: f64) -> Result<(), SolverError> {
    if !(0.0..upper).contains(&alpha) {
        return Err(SolverError::InvalidParameter(format!("alpha = {alpha} must lie in [0, {upper})")));
    }
    Ok(())
}

/// `‖u‖²_φ ≤ ∫⟨F_φ⁻¹ f, f⟩ e^{−φ}` for the minimal solution in weight `φ`.
pub fn hormander_report(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    opts: &ReportOptions,
) -> Result<BoundReport, SolverError> {
    require_p_psh(phi, cx, f.p, &opts.tolerances, "phi")?;
    let w = FieldCombination::of(phi);
    let est = Estimate {
        test: "hormander",
        solve_weight: &w,
        lhs_weight: &w,
        lhs_factor: None,
        hess_source: &w,
        rhs_weight: &w,
        constant: 1.0,
    };
    Ok(run_estimate(cx, f, &est, opts)?.0)
}

/// Bound with two weights of opposite sign plus the sampled a-priori check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerndtssonReport {
    pub bound: BoundReport,
    pub apriori: BoundReport,
}

/// `‖u‖²_{φ−αψ} ≤ 4/(1−α)² ∫⟨F_ψ⁻¹ f, f⟩ e^{−φ+αψ}`.
///
/// `u = e^{−(1+α)ψ/4} v` with `v` minimal for `d∘e^{−(1+α)ψ/4}` in weight
/// `φ + (1−α)ψ/2`; this `u` is exactly the minimal solution in weight `φ − αψ`.
pub fn berndtsson_report(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    psi: &dyn Field,
    alpha: f64,
    opts: &ReportOptions,
) -> Result<BerndtssonReport, SolverError> {
    check_alpha(alpha, 1.0)?;
    let p = f.p;
    require_p_psh(phi, cx, p, &opts.tolerances, "phi")?;
    require_p_psh(&NegExpNeg(psi), cx, p, &opts.tolerances, "-exp(-psi)")?;
    let w = FieldCombination::of(phi).plus(-alpha, psi);
    let est = Estimate {
        test: "berndtsson",
        solve_weight: &w,
        lhs_weight: &w,
        lhs_factor: None,
        hess_source: psi,
        rhs_weight: &w,
        constant: 4.0 / ((1.0 - alpha) * (1.0 - alpha)),
    };
    let bound = run_estimate(cx, f, &est, opts)?.0;
    let apriori = apriori_check(cx, phi, psi, (1.0 - alpha) / 2.0, p, opts)?;
    Ok(BerndtssonReport { bound, apriori })
}

/// Sampled check of `‖δ_{φ+σψ} g‖²_{φ+ψ} + ‖dg‖²_{φ+ψ} ≥ σ² ∫⟨F_ψ g, g⟩ e^{−φ−ψ}`
/// on coexact `g = δ_{φ+σψ} s`, `s` a random smooth (p+1)-form. Reported with
/// the integral as `lhs`, the energy as `rhs` and constant 1; the worst sample wins.
pub fn apriori_check(
    cx: &CubicalComplex,
    phi: &dyn Field,
    psi: &dyn Field,
    sigma: f64,
    p: usize,
    opts: &ReportOptions,
) -> Result<BoundReport, SolverError> {
    let n = cx.dim();
    if p == 0 || p > n {
        return Err(DiscreteError::InvalidDegree(p).into());
    }
    let test = "apriori_sampled";
    if p == n {
        return Ok(BoundReport::new(test, 0.0, 0.0, 1.0, cx.h(), opts.slack));
    }
    let twisted = FieldCombination::of(phi).plus(sigma, psi);
    let full = FieldCombination::of(phi).plus(1.0, psi);
    let m_tw_lo = mass(cx, &twisted, p - 1)?;
    let m_tw = mass(cx, &twisted, p)?;
    let m_tw_hi = mass(cx, &twisted, p + 1)?;
    let m_full_lo = mass(cx, &full, p - 1)?;
    let m_full_hi = mass(cx, &full, p + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: Option<BoundReport> = None;
    for _ in 0..opts.apriori_samples.max(1) {
        let s = random_smooth_cochain(cx, p + 1, &mut rng);
        let g = codifferential(cx, &m_tw, &m_tw_hi, &s.values);
        let g = Cochain { p, values: g };
        let delta_g = codifferential(cx, &m_tw_lo, &m_tw, &g.values);
        let dg = apply_d(cx, &g);
        let energy = m_full_lo.norm_sq(&delta_g) + m_full_hi.norm_sq(&dg.values);
        let integral = sigma * sigma * f_quadrature(cx, &g, psi, &full)?;
        let report = BoundReport::new(test, integral, energy, 1.0, cx.h(), opts.slack);
        if worst.as_ref().is_none_or(|w| report.ratio > w.ratio) {
            worst = Some(report);
        }
    }
    Ok(worst.expect("at least one sample"))
}

/// `M_lo⁻¹ dᵀ M_hi s`.
fn codifferential(cx: &CubicalComplex, lower: &WeightedMass, upper: &WeightedMass, s: &[f64]) -> Vec<f64> {
    let d = cx.coboundary(lower.p);
    let weighted: Vec<f64> = s.iter().zip(&upper.diag).map(|(v, m)| v * m).collect();
    let mut out = vec![0.0; d.ncols()];
    spmv_t(d, &weighted, &mut out);
    out.iter_mut().zip(&lower.diag).for_each(|(v, m)| *v /= m);
    out
}

/// `Σ_t ⟨F_θ g_t, g_t⟩ e^{−w} hⁿ`.
fn f_quadrature(cx: &CubicalComplex, g: &Cochain, hess_source: &dyn Field, weight: &dyn Field) -> Result<f64, SolverError> {
    let n = cx.dim();
    let vol = cx.h().powi(n as i32);
    let mut acc = 0.0;
    for t in cx.top_cells() {
        let gt = cx.reconstruct(g, t)?;
        let x = cx.barycenter(n, t);
        let theta = QuadraticForm::new(hess_source.jet(&x)?.hess)?;
        acc += apply_f(&theta, &gt)?.dot(&gt)? * (-weight.value(&x)?).exp() * vol;
    }
    Ok(acc)
}

/// Midpoint samples of a form whose coefficients are short random cosine sums
/// of low frequency relative to the bounding box.
fn random_smooth_cochain(cx: &CubicalComplex, p: usize, rng: &mut ChaCha8Rng) -> Cochain {
    let n = cx.dim();
    let count = binomial(n, p);
    let (lo, hi) = bounding_box(cx);
    let modes: Vec<Vec<(f64, Vec<f64>, f64)>> = (0..count)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let amp = rng.random_range(-1.0..1.0);
                    let k = (0..n)
                        .map(|d| rng.random_range(-2i32..=2) as f64 * std::f64::consts::PI / (hi[d] - lo[d]))
                        .collect();
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (amp, k, phase)
                })
                .collect()
        })
        .collect();
    let index = multi_indices(n, p);
    let scale = cx.h().powi(p as i32);
    let values = (0..cx.num_cells(p))
        .map(|i| {
            let axes = cx.cell_axes(p, i);
            let r = index.iter().position(|a| *a == axes).expect("axes form a multi-index");
            let x = cx.barycenter(p, i);
            let c: f64 = modes[r]
                .iter()
                .map(|(a, k, ph)| a * (k.iter().zip(&x).map(|(k, x)| k * x).sum::<f64>() + ph).cos())
                .sum();
            c * scale
        })
        .collect();
    Cochain { p, values }
}

fn bounding_box(cx: &CubicalComplex) -> (Vec<f64>, Vec<f64>) {
    let n = cx.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for i in 0..cx.num_cells(0) {
        for (d, v) in cx.barycenter(0, i).into_iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    (lo, hi)
}

/// `‖u‖_φ ≤ (2D/p) ‖f‖_φ` for the minimal solution, as a ratio of norms.
pub fn diameter_report(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    diameter: f64,
    opts: &ReportOptions,
) -> Result<BoundReport, SolverError> {
    if !(diameter > 0.0) {
        return Err(SolverError::InvalidParameter(format!("diameter must be positive, got {diameter}")));
    }
    let p = f.p;
    require_p_psh(phi, cx, p, &opts.tolerances, "phi")?;
    let sol = minimal_solution(cx, f, phi, &opts.solve)?;
    let lhs = mass(cx, phi, p - 1)?.norm_sq(&sol.u.values).sqrt();
    let rhs = mass(cx, phi, p)?.norm_sq(&f.values).sqrt();
    Ok(BoundReport::new("diameter", lhs, rhs, 2.0 * diameter / p as f64, cx.h(), opts.slack))
}

/// `∫(1−ω²)|u_φ|² e^{−φ+ψ} ≤ (1+α)/(1−α) ∫⟨F_ψ⁻¹ f, f⟩ e^{−φ+ψ}` for the
/// minimal solution in weight `φ`.
pub fn minimal_estimate_report(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    psi: &dyn Field,
    omega: &dyn Field,
    alpha: f64,
    opts: &ReportOptions,
) -> Result<BoundReport, SolverError> {
    check_alpha(alpha, 1.0)?;
    let p = f.p;
    require_p_psh(phi, cx, p, &opts.tolerances, "phi")?;
    require_omega(cx, f, omega, alpha, 1.0)?;
    require_twist_form(cx, psi, psi, omega, p, &opts.tolerances)?;
    let w = FieldCombination::of(phi).plus(-1.0, psi);
    let factor = OneMinusScaledSquare { omega, scale: 1.0 };
    let est = Estimate {
        test: "minimal_estimate",
        solve_weight: phi,
        lhs_weight: &w,
        lhs_factor: Some(&factor),
        hess_source: psi,
        rhs_weight: &w,
        constant: (1.0 + alpha) / (1.0 - alpha),
    };
    Ok(run_estimate(cx, f, &est, opts)?.0)
}

/// The minimal-solution estimate applied to `αψ₀` with constant `ω = √α`:
/// `‖u_φ‖²_{φ−αψ₀} ≤ 1/(α(1−√α)²) ∫⟨F_{ψ₀}⁻¹ f, f⟩ e^{−φ+αψ₀}`.
pub fn minimal_estimate_scaled_report(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    psi0: &dyn Field,
    alpha: f64,
    opts: &ReportOptions,
) -> Result<BoundReport, SolverError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SolverError::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let p = f.p;
    require_p_psh(phi, cx, p, &opts.tolerances, "phi")?;
    require_p_psh(&NegExpNeg(psi0), cx, p, &opts.tolerances, "-exp(-psi)")?;
    let w = FieldCombination::of(phi).plus(-alpha, psi0);
    let est = Estimate {
        test: "minimal_estimate_scaled",
        solve_weight: phi,
        lhs_weight: &w,
        lhs_factor: None,
        hess_source: psi0,
        rhs_weight: &w,
        constant: 1.0 / (alpha * (1.0 - alpha.sqrt()).powi(2)),
    };
    Ok(run_estimate(cx, f, &est, opts)?.0)
}

/// `∫(1−ω²/4)|u|² e^{−φ+ψ} ≤ (2+α)/(2−α) ∫⟨F_φ⁻¹ f, f⟩ e^{−φ+ψ}` for the
/// minimal solution in weight `φ − ψ/2`; `ψ` need not be plurisubharmonic.
pub fn nonpsh_report(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    psi: &dyn Field,
    omega: &dyn Field,
    alpha: f64,
    opts: &ReportOptions,
) -> Result<BoundReport, SolverError> {
    check_alpha(alpha, 2.0)?;
    let p = f.p;
    require_p_psh(phi, cx, p, &opts.tolerances, "phi")?;
    require_omega(cx, f, omega, alpha, 2.0)?;
    require_twist_form(cx, phi, psi, omega, p, &opts.tolerances)?;
    let solve = FieldCombination::of(phi).plus(-0.5, psi);
    let w = FieldCombination::of(phi).plus(-1.0, psi);
    let factor = OneMinusScaledSquare { omega, scale: 0.25 };
    let est = Estimate {
        test: "nonpsh",
        solve_weight: &solve,
        lhs_weight: &w,
        lhs_factor: Some(&factor),
        hess_source: phi,
        rhs_weight: &w,
        constant: (2.0 + alpha) / (2.0 - alpha),
    };
    Ok(run_estimate(cx, f, &est, opts)?.0)
}

/// Constant-`ω` form: `‖u‖²_{φ−ψ} ≤ 4/(2−α)² ∫⟨F_φ⁻¹ f, f⟩ e^{−φ+ψ}` when
/// `α² D²φ − dψ⊗dψ` is p-positive semi-definite.
pub fn nonpsh_constant_report(
    cx: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    psi: &dyn Field,
    alpha: f64,
    opts: &ReportOptions,
) -> Result<BoundReport, SolverError> {
    check_alpha(alpha, 2.0)?;
    let p = f.p;
    require_p_psh(phi, cx, p, &opts.tolerances, "phi")?;
    let omega = crate::fieldexpr::ConstantField { n: cx.dim(), value: alpha };
    require_twist_form(cx, phi, psi, &omega, p, &opts.tolerances)?;
    let solve = FieldCombination::of(phi).plus(-0.5, psi);
    let w = FieldCombination::of(phi).plus(-1.0, psi);
    let est = Estimate {
        test: "nonpsh_constant",
        solve_weight: &solve,
        lhs_weight: &w,
        lhs_factor: None,
        hess_source: phi,
        rhs_weight: &w,
        constant: 4.0 / ((2.0 - alpha) * (2.0 - alpha)),
    };
    Ok(run_estimate(cx, f, &est, opts)?.0)
}

/// `1 − scale·ω²`.
struct OneMinusScaledSquare<'a> {
    omega: &'a dyn Field,
    scale: f64,
}

impl Field for OneMinusScaledSquare<'_> {
    fn dim(&self) -> usize {
        self.omega.dim()
    }

    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        let j = self.omega.jet(x)?;
        let w = j.value;
        Ok(j.chain(1.0 - self.scale * w * w, -2.0 * self.scale * w, -2.0 * self.scale))
    }

    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        let w = self.omega.value(x)?;
        Ok(1.0 - self.scale * w * w)
    }
}

// ---------------------------------------------------------------------------
// Monotonicity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MonotonicityKind {
    /// `Ω₁ ⊂ Ω₂`: expects `‖u₁‖ ≤ ‖u₂‖`.
    Domain,
    /// `φ₁ ≤ φ₂`: expects `‖u₁‖_{φ₁} ≥ ‖u₂‖_{φ₂}`.
    Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityRecord {
    pub kind: MonotonicityKind,
    pub norm_sq_1: f64,
    pub norm_sq_2: f64,
    pub holds: bool,
}

fn monotone(kind: MonotonicityKind, a: f64, b: f64, rel_tol: f64) -> MonotonicityRecord {
    let scale = a.abs().max(b.abs());
    let holds = match kind {
        MonotonicityKind::Domain => a <= b + rel_tol * scale,
        MonotonicityKind::Weight => a + rel_tol * scale >= b,
    };
    MonotonicityRecord { kind, norm_sq_1: a, norm_sq_2: b, holds }
}

/// Restriction of a cochain on `big` to the cells of `small` (same lattice).
pub fn restrict(small: &CubicalComplex, big: &CubicalComplex, c: &Cochain) -> Result<Cochain, SolverError> {
    let values = (0..small.num_cells(c.p))
        .map(|i| {
            let x = small.barycenter(c.p, i);
            big.locate(c.p, &x).map(|j| c.values[j]).ok_or_else(|| {
                SolverError::Precondition(format!("cell at {x:?} of the inner complex is missing from the outer one"))
            })
        })
        .collect::<Result<Vec<f64>, SolverError>>()?;
    Ok(Cochain { p: c.p, values })
}

/// Minimal solutions on `Ω₁ ⊂ Ω₂` for `f` given on `Ω₂`.
pub fn monotonicity_domains(
    inner: &CubicalComplex,
    outer: &CubicalComplex,
    f: &Cochain,
    phi: &dyn Field,
    opts: &SolveOptions,
) -> Result<MonotonicityRecord, SolverError> {
    let f1 = restrict(inner, outer, f)?;
    let u1 = minimal_solution(inner, &f1, phi, opts)?;
    let u2 = minimal_solution(outer, f, phi, opts)?;
    let a = mass(inner, phi, f.p - 1)?.norm_sq(&u1.u.values);
    let b = mass(outer, phi, f.p - 1)?.norm_sq(&u2.u.values);
    Ok(monotone(MonotonicityKind::Domain, a, b, 1e-8))
}

/// Minimal solutions for `φ₁ ≤ φ₂` on one complex.
pub fn monotonicity_weights(
    cx: &CubicalComplex,
    f: &Cochain,
    phi1: &dyn Field,
    phi2: &dyn Field,
    opts: &SolveOptions,
) -> Result<MonotonicityRecord, SolverError> {
    for i in 0..cx.num_cells(f.p - 1) {
        let x = cx.barycenter(f.p - 1, i);
        if phi1.value(&x)? > phi2.value(&x)? {
            return Err(SolverError::Precondition(format!("phi1 > phi2 at {x:?}")));
        }
    }
    let u1 = minimal_solution(cx, f, phi1, opts)?;
    let u2 = minimal_solution(cx, f, phi2, opts)?;
    let a = mass(cx, phi1, f.p - 1)?.norm_sq(&u1.u.values);
    let b = mass(cx, phi2, f.p - 1)?.norm_sq(&u2.u.values);
    Ok(monotone(MonotonicityKind::Weight, a, b, 1e-8))
}

// ---------------------------------------------------------------------------
// Marginal convexity
// ---------------------------------------------------------------------------

/// Uniform tensor grid in `y` and the step for second differences in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSetup {
    pub x_dim: usize,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub y_points: usize,
    pub step: f64,
    pub tol: f64,
    /// Upper bound on boundary mass relative to the integral.
    pub tail_tol: f64,
}

impl MarginalSetup {
    pub fn new(x_dim: usize, y_lo: Vec<f64>, y_hi: Vec<f64>) -> Self {
        MarginalSetup { x_dim, y_lo, y_hi, y_points: 401, step: 1e-2, tol: 1e-6, tail_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalSample {
    pub x: Vec<f64>,
    pub value: f64,
    /// `(φ̃(x+s eᵢ) − 2φ̃(x) + φ̃(x−s eᵢ))/s²` per axis.
    pub second_differences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalReport {
    pub convex_input: bool,
    pub min_hessian_eigenvalue: f64,
    pub samples: Vec<MarginalSample>,
    pub min_second_difference: f64,
    pub skipped: bool,
    pub pass: bool,
}

/// Convexity of `φ̃(x) = −log ∫ e^{−φ(x, y)} dy` by trapezoid quadrature in `y`.
///
/// A non-convex input is flagged and the check skipped.
pub fn prekopa_check(
    phi: &dyn Field,
    x_samples: &[Vec<f64>],
    setup: &MarginalSetup,
) -> Result<MarginalReport, SolverError> {
    let m = setup.x_dim;
    let k = setup.y_lo.len();
    if phi.dim() != m + k || setup.y_hi.len() != k || k == 0 || m == 0 {
        return Err(SolverError::InvalidParameter("x and y blocks must partition the variables".into()));
    }
    if setup.y_points < 3 || !(setup.step > 0.0) {
        return Err(SolverError::InvalidParameter("need at least 3 y points and a positive step".into()));
    }
    let nodes: Vec<Vec<f64>> = (0..k)
        .map(|d| {
            let (a, b) = (setup.y_lo[d], setup.y_hi[d]);
            (0..setup.y_points).map(|i| a + (b - a) * i as f64 / (setup.y_points - 1) as f64).collect()
        })
        .collect();
    let coarse: Vec<Vec<f64>> = nodes.iter().map(|v| v.iter().step_by((setup.y_points / 8).max(1)).copied().collect()).collect();
    let mut min_eig = f64::INFINITY;
    for x in x_samples {
        for y in tensor(&coarse) {
            let z: Vec<f64> = x.iter().chain(&y).copied().collect();
            let (values, _) = QuadraticForm::new(phi.jet(&z)?.hess)?.sorted_eigen()?;
            min_eig = min_eig.min(values[0]);
        }
    }
    let convex_input = min_eig >= -setup.tol;
    if !convex_input {
        return Ok(MarginalReport {
            convex_input,
            min_hessian_eigenvalue: min_eig,
            samples: Vec::new(),
            min_second_difference: f64::NAN,
            skipped: true,
            pass: false,
        });
    }
    let marginal = |x: &[f64]| marginal_value(phi, x, &nodes, setup);
    let mut samples = Vec::with_capacity(x_samples.len());
    let mut min_sd = f64::INFINITY;
    for x in x_samples {
        let centre = marginal(x)?;
        let mut sds = Vec::with_capacity(m);
        for i in 0..m {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += setup.step;
            minus[i] -= setup.step;
            let sd = (marginal(&plus)? - 2.0 * centre + marginal(&minus)?) / (setup.step * setup.step);
            min_sd = min_sd.min(sd);
            sds.push(sd);
        }
        samples.push(MarginalSample { x: x.clone(), value: centre, second_differences: sds });
    }
    Ok(MarginalReport {
        convex_input,
        min_hessian_eigenvalue: min_eig,
        samples,
        min_second_difference: min_sd,
        skipped: false,
        pass: min_sd >= -setup.tol,
    })
}

fn tensor(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out.into_iter().flat_map(|prefix| axis.iter().map(move |&v| [prefix.clone(), vec![v]].concat())).collect();
    }
    out
}

fn marginal_value(phi: &dyn Field, x: &[f64], nodes: &[Vec<f64>], setup: &MarginalSetup) -> Result<f64, SolverError> {
    let k = nodes.len();
    let counts: Vec<usize> = nodes.iter().map(Vec::len).collect();
    let total: usize = counts.iter().product();
    let mut values = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut boundary = Vec::with_capacity(total);
    let mut z: Vec<f64> = x.to_vec();
    z.resize(x.len() + k, 0.0);
    let mut idx = vec![0usize; k];
    for _ in 0..total {
        let mut w = 1.0;
        let mut on_edge = false;
        for d in 0..k {
            z[x.len() + d] = nodes[d][idx[d]];
            let hd = (setup.y_hi[d] - setup.y_lo[d]) / (counts[d] - 1) as f64;
            let edge = idx[d] == 0 || idx[d] == counts[d] - 1;
            on_edge |= edge;
            w *= if edge { hd / 2.0 } else { hd };
        }
        values.push(phi.value(&z)?);
        weights.push(w);
        boundary.push(on_edge);
        for d in 0..k {
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let floor = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut integral = 0.0;
    let mut edge_max = 0.0f64;
    for i in 0..total {
        let e = (floor - values[i]).exp();
        integral += weights[i] * e;
        if boundary[i] {
            edge_max = edge_max.max(e);
        }
    }
    let volume: f64 = (0..k).map(|d| setup.y_hi[d] - setup.y_lo[d]).product();
    let tail = edge_max * volume / integral;
    if tail > setup.tail_tol {
        return Err(SolverError::Tail { x: x.to_vec(), tail });
    }
    Ok(floor - integral.ln())
}
