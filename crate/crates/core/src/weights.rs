//! Weight constructions: composed scalar maps over a base field, the
//! Diederich-Fornæss grid search, shell-wise convexification, integrability
//! modification and the cubic hinge family χ_ν.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::convexity::{min_p_trace, Tolerances};
use crate::exterior::{ExteriorError, QuadraticForm};
use crate::fieldexpr::{compose_df, Expr, ExprError, Field, Jet2, ScalarFieldExpr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no (K, eta) pair on the grid is feasible; best min p-trace {best:.3e} at K = {k}, eta = {eta}")]
    InfeasibleOnGrid { k: f64, eta: f64, best: f64 },
}

/// C² spline whose second derivative is a sum of triangular hats, one per knot
/// interval, each vanishing at the knots. Extended linearly outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct C2Spline {
    knots: Vec<f64>,
    amplitudes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl C2Spline {
    /// `amplitudes[k]` is the peak of the hat on `[knots[k], knots[k+1]]`.
    pub fn new(knots: Vec<f64>, amplitudes: Vec<f64>, value0: f64, slope0: f64) -> Result<Self, WeightError> {
        if knots.is_empty() || amplitudes.len() + 1 != knots.len() {
            return Err(WeightError::InvalidParameter("spline needs m+1 knots for m amplitudes".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(WeightError::InvalidParameter("spline knots must increase strictly".into()));
        }
        let mut values = vec![value0];
        let mut slopes = vec![slope0];
        for (k, a) in amplitudes.iter().enumerate() {
            let l = knots[k + 1] - knots[k];
            values.push(values[k] + slopes[k] * l + a * l * l / 4.0);
            slopes.push(slopes[k] + a * l / 2.0);
        }
        Ok(C2Spline { knots, amplitudes, values, slopes })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// Slopes at the knots.
    pub fn knot_slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    /// `(κ, κ′, κ″)` at `t`.
    pub fn eval3(&self, t: f64) -> [f64; 3] {
        let m = self.amplitudes.len();
        let first = self.knots[0];
        if t <= first {
            return [self.values[0] + self.slopes[0] * (t - first), self.slopes[0], 0.0];
        }
        let last = self.knots[m];
        if t >= last {
            return [self.values[m] + self.slopes[m] * (t - last), self.slopes[m], 0.0];
        }
        let k = self.knots.partition_point(|&c| c <= t) - 1;
        let (c0, c1) = (self.knots[k], self.knots[k + 1]);
        let l = c1 - c0;
        let a = self.amplitudes[k];
        let tau = t - c0;
        if tau <= l / 2.0 {
            [
                self.values[k] + self.slopes[k] * tau + a * tau.powi(3) / (3.0 * l),
                self.slopes[k] + a * tau * tau / l,
                2.0 * a * tau / l,
            ]
        } else {
            let s = c1 - t;
            [
                self.values[k + 1] - self.slopes[k + 1] * s + a * s.powi(3) / (3.0 * l),
                self.slopes[k + 1] - a * s * s / l,
                2.0 * a * s / l,
            ]
        }
    }
}

/// A C² scalar map with value, first and second derivative.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarMap {
    Identity,
    /// `ν·max(t, 0)³`.
    Chi { nu: f64 },
    Spline(C2Spline),
    /// `t + γ(t)`.
    PlusSpline(C2Spline),
}

impl ScalarMap {
    pub fn eval3(&self, t: f64) -> [f64; 3] {
        match self {
            ScalarMap::Identity => [t, 1.0, 0.0],
            ScalarMap::Chi { nu } => {
                if t <= 0.0 {
                    [0.0, 0.0, 0.0]
                } else {
                    [nu * t * t * t, 3.0 * nu * t * t, 6.0 * nu * t]
                }
            }
            ScalarMap::Spline(s) => s.eval3(t),
            ScalarMap::PlusSpline(s) => {
                let [g0, g1, g2] = s.eval3(t);
                [t + g0, 1.0 + g1, g2]
            }
        }
    }

    /// Samples the second derivative on `[lo, hi]` and reports the smallest
    /// values of `κ′` and `κ″` seen.
    pub fn sampled_minima(&self, lo: f64, hi: f64, count: usize) -> (f64, f64) {
        let mut min1 = f64::INFINITY;
        let mut min2 = f64::INFINITY;
        for i in 0..=count {
            let t = lo + (hi - lo) * i as f64 / count as f64;
            let [_, d1, d2] = self.eval3(t);
            min1 = min1.min(d1);
            min2 = min2.min(d2);
        }
        (min1, min2)
    }
}

impl fmt::Display for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarMap::Identity => write!(f, "id"),
            ScalarMap::Chi { nu } => write!(f, "chi[{nu}]"),
            ScalarMap::Spline(s) => write!(f, "kappa[{} knots]", s.knots.len()),
            ScalarMap::PlusSpline(s) => write!(f, "id+gamma[{} knots]", s.knots.len()),
        }
    }
}

/// `χ_ν(t) = ν·max(t, 0)³`.
pub fn chi_family(nu: u32) -> Result<ScalarMap, WeightError> {
    if nu == 0 {
        return Err(WeightError::InvalidParameter("chi family index must be at least 1".into()));
    }
    Ok(ScalarMap::Chi { nu: nu as f64 })
}

/// `m_k ∘ … ∘ m_1 ∘ base`.
#[derive(Clone)]
pub struct PiecewiseWeight {
    base: Arc<dyn Field>,
    chain: Vec<ScalarMap>,
}

impl fmt::Debug for PiecewiseWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PiecewiseWeight").field("dim", &self.base.dim()).field("chain", &self.chain).finish()
    }
}

impl PiecewiseWeight {
    pub fn new(base: Arc<dyn Field>) -> Self {
        PiecewiseWeight { base, chain: Vec::new() }
    }

    pub fn then(&self, map: ScalarMap) -> Self {
        let mut chain = self.chain.clone();
        chain.push(map);
        PiecewiseWeight { base: self.base.clone(), chain }
    }

    pub fn chain(&self) -> &[ScalarMap] {
        &self.chain
    }

    pub fn base(&self) -> &Arc<dyn Field> {
        &self.base
    }
}

impl Field for PiecewiseWeight {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        let mut j = self.base.jet(x)?;
        for m in &self.chain {
            let [f0, f1, f2] = m.eval3(j.value);
            j = j.chain(f0, f1, f2);
        }
        Ok(j)
    }

    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        let mut v = self.base.value(x)?;
        for m in &self.chain {
            v = m.eval3(v)[0];
        }
        Ok(v)
    }
}

fn hessian_form(j: &Jet2) -> Result<QuadraticForm, ExteriorError> {
    QuadraticForm::new(j.hess.clone())
}

/// `ψ = p|x − center|²/(2D²)`.
pub fn diameter_weight(p: usize, diameter: f64, center: &[f64]) -> Result<ScalarFieldExpr, WeightError> {
    if !(diameter > 0.0) {
        return Err(WeightError::InvalidParameter(format!("diameter must be positive, got {diameter}")));
    }
    if p == 0 || p > center.len() {
        return Err(WeightError::InvalidParameter(format!("degree {p} out of range")));
    }
    let mut sum: Option<Expr> = None;
    for (i, &c) in center.iter().enumerate() {
        let shifted = if c == 0.0 { Expr::var(i) } else { Expr::sub(Expr::var(i), Expr::num(c)) };
        let sq = Expr::pow(shifted, Expr::Num(2.0));
        sum = Some(match sum {
            None => sq,
            Some(s) => Expr::add(s, sq),
        });
    }
    let coeff = p as f64 / (2.0 * diameter * diameter);
    let ast = Expr::mul(Expr::num(coeff), sum.expect("non-empty center"));
    Ok(ScalarFieldExpr::from_ast(ast, center.len())?)
}

/// Outcome of [`df_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct DfResult {
    pub k: f64,
    pub eta: f64,
    pub min_p_trace_over_grid: f64,
    /// `(point, min p-trace of D²ρ)` at the selected pair.
    pub samples: Vec<(Vec<f64>, f64)>,
    /// `(K, η, min p-trace)` for every grid pair.
    pub table: Vec<(f64, f64, f64)>,
    pub feasible: bool,
}

impl DfResult {
    pub fn feasible_pairs(&self) -> impl Iterator<Item = &(f64, f64, f64)> {
        self.table.iter().filter(|t| t.2 > 0.0)
    }

    /// Converts an infeasible search into [`WeightError::InfeasibleOnGrid`].
    pub fn into_feasible(self) -> Result<DfResult, WeightError> {
        if self.feasible {
            Ok(self)
        } else {
            Err(WeightError::InfeasibleOnGrid { k: self.k, eta: self.eta, best: self.min_p_trace_over_grid })
        }
    }
}

/// Minimum over samples of the p-trace of `D²ρ`, `ρ = −(−r e^{−Kφ})^η`.
pub fn df_min_p_trace(
    r: &ScalarFieldExpr,
    phi: &ScalarFieldExpr,
    samples: &[Vec<f64>],
    p: usize,
    k: f64,
    eta: f64,
) -> Result<(f64, Vec<f64>), WeightError> {
    let rho = compose_df(r, phi, k, eta)?;
    let mut per = Vec::with_capacity(samples.len());
    for x in samples {
        per.push(min_p_trace(&hessian_form(&rho.eval_jet2(x)?)?, p)?);
    }
    let worst = per.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((worst, per))
}

/// Grid search for a Diederich-Fornæss pair `(K, η)`.
///
/// Selects the pair maximizing the sampled min p-trace of `D²ρ`; the result is
/// feasible when that minimum is positive.
pub fn df_search(
    r: &ScalarFieldExpr,
    phi: &ScalarFieldExpr,
    samples: &[Vec<f64>],
    p: usize,
    k_grid: &[f64],
    eta_grid: &[f64],
) -> Result<DfResult, WeightError> {
    if samples.is_empty() || k_grid.is_empty() || eta_grid.is_empty() {
        return Err(WeightError::InvalidParameter("empty samples or search grid".into()));
    }
    let tol = Tolerances::default();
    for x in samples {
        if r.eval(x)? >= 0.0 {
            return Err(WeightError::Precondition(format!("r >= 0 at sample {x:?}")));
        }
        let t = min_p_trace(&hessian_form(&phi.eval_jet2(x)?)?, p)?;
        if t <= tol.strict {
            return Err(WeightError::Precondition(format!(
                "phi is not strictly {p}-psh at {x:?} (min {p}-trace {t:.3e})"
            )));
        }
    }
    let mut table = Vec::with_capacity(k_grid.len() * eta_grid.len());
    for &k in k_grid {
        for &eta in eta_grid {
            let (worst, _) = df_min_p_trace(r, phi, samples, p, k, eta)?;
            table.push((k, eta, worst));
        }
    }
    let chosen = *table.iter().max_by(|a, b| a.2.total_cmp(&b.2)).expect("non-empty table");
    let feasible = chosen.2 > 0.0;
    let (worst, per) = df_min_p_trace(r, phi, samples, p, chosen.0, chosen.1)?;
    Ok(DfResult {
        k: chosen.0,
        eta: chosen.1,
        min_p_trace_over_grid: worst,
        samples: samples.iter().cloned().zip(per).collect(),
        table,
        feasible,
    })
}

/// Lattice points with `r ≤ −δ·|∇r|` plus a finer collar with `−δ·|∇r| < r < 0`.
///
/// `δ` defaults to `0.05·diam(box)`.
pub fn df_samples(
    r: &dyn Field,
    lo: &[f64],
    hi: &[f64],
    per_axis: usize,
    delta: Option<f64>,
) -> Result<Vec<Vec<f64>>, WeightError> {
    let n = lo.len();
    if hi.len() != n || n != r.dim() || per_axis < 2 {
        return Err(WeightError::InvalidParameter("bad sampling box".into()));
    }
    let diam = lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    let delta = delta.unwrap_or(0.05 * diam);
    let mut out = Vec::new();
    let collect = |count: usize, collar: bool, out: &mut Vec<Vec<f64>>| -> Result<(), WeightError> {
        let total = count.pow(n as u32);
        for flat in 0..total {
            let mut rem = flat;
            let x: Vec<f64> = (0..n)
                .map(|d| {
                    let i = rem % count;
                    rem /= count;
                    lo[d] + (hi[d] - lo[d]) * (i as f64 + 0.5) / count as f64
                })
                .collect();
            let j = r.jet(&x)?;
            if j.value >= 0.0 {
                continue;
            }
            let dist = -j.value / j.grad.norm().max(f64::MIN_POSITIVE);
            if (dist < delta) == collar {
                out.push(x);
            }
        }
        Ok(())
    };
    collect(per_axis, false, &mut out)?;
    collect(per_axis * 4, true, &mut out)?;
    Ok(out)
}

/// Outcome of [`convexify`].
#[derive(Debug, Clone)]
pub struct ConvexifyResult {
    pub weight: PiecewiseWeight,
    /// Largest `−pω/Λ_φ` per shell.
    pub sigma: Vec<f64>,
    /// Slope `κ′` enforced at the left end of each shell.
    pub slopes: Vec<f64>,
    pub first_shell_exempt: bool,
    /// Smallest `min_p_trace(D²(κ∘φ)) + pω` over non-exempt samples.
    pub min_margin: f64,
}

/// Safety factor on the per-shell slope requirement.
const SLOPE_MARGIN: f64 = 1.05;

/// Builds `κ∘φ` shell by shell so that `min_p_trace(D²(κ∘φ)) + pω > 0` at the samples.
///
/// Shell `k` is `{c_k ≤ φ < c_{k+1}}`; values below `c_0` join the first shell
/// and values above the last level form a final unbounded shell.
pub fn convexify(
    phi: &PiecewiseWeight,
    omega: &dyn Field,
    p: usize,
    sublevels: &[f64],
    samples: &[Vec<f64>],
    exempt_first_shell: bool,
) -> Result<ConvexifyResult, WeightError> {
    if sublevels.is_empty() || sublevels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(WeightError::InvalidParameter("sublevels must be non-empty and increasing".into()));
    }
    let shells = sublevels.len();
    let mut sigma = vec![0.0f64; shells];
    let shell_of = |v: f64| sublevels.partition_point(|&c| c <= v).saturating_sub(1);
    let mut evaluated = Vec::with_capacity(samples.len());
    for x in samples {
        let j = phi.jet(x)?;
        let shell = shell_of(j.value);
        let lam = min_p_trace(&hessian_form(&j)?, p)?;
        let w = omega.value(x)?;
        let exempt = exempt_first_shell && shell == 0;
        if !exempt {
            if lam <= 0.0 {
                return Err(WeightError::Precondition(format!(
                    "phi is not strictly {p}-psh at {x:?} (min {p}-trace {lam:.3e})"
                )));
            }
            sigma[shell] = sigma[shell].max(-(p as f64) * w / lam);
        }
        evaluated.push((shell, w, exempt));
    }
    let mut slopes = Vec::with_capacity(shells);
    let mut running = 1.0f64;
    for s in &sigma {
        running = running.max(SLOPE_MARGIN * s + 1e-9);
        slopes.push(running);
    }
    let amplitudes: Vec<f64> = (0..shells - 1)
        .map(|k| 2.0 * (slopes[k + 1] - slopes[k]) / (sublevels[k + 1] - sublevels[k]))
        .collect();
    let spline = C2Spline::new(sublevels.to_vec(), amplitudes, sublevels[0], slopes[0])?;
    let weight = phi.then(ScalarMap::Spline(spline));
    let mut min_margin = f64::INFINITY;
    for (x, (_, w, exempt)) in samples.iter().zip(&evaluated) {
        if *exempt {
            continue;
        }
        let t = min_p_trace(&hessian_form(&weight.jet(x)?)?, p)?;
        min_margin = min_margin.min(t + p as f64 * w);
    }
    Ok(ConvexifyResult { weight, sigma, slopes, first_shell_exempt: exempt_first_shell, min_margin })
}

/// A quadrature node: point, weight, value of `η` there.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadNode {
    pub point: Vec<f64>,
    pub weight: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct IntegrabilityResult {
    pub weight: PiecewiseWeight,
    pub gamma: C2Spline,
    /// `(ν, I_ν, γ(c+ν))` for every active shell.
    pub shells: Vec<(usize, f64, f64)>,
}

/// `ψ = φ + γ∘φ` with `γ ≡ 0` below `c` and `γ(c+ν) > ν + log I_ν`,
/// `I_ν = ∫_{φ < c+ν+1} |η|²` from the quadrature nodes.
///
/// Only shells with `c + ν ≤ max φ` over the nodes are constrained.
pub fn integrability_modifier(
    phi: &PiecewiseWeight,
    c: f64,
    nodes: &[QuadNode],
) -> Result<IntegrabilityResult, WeightError> {
    let mut values = Vec::with_capacity(nodes.len());
    for q in nodes {
        values.push((phi.value(&q.point)?, q.weight * q.eta * q.eta));
    }
    let max_phi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let active = if max_phi >= c + 1.0 { (max_phi - c).floor() as usize } else { 0 };
    let knots: Vec<f64> = (0..=active.max(1)).map(|k| c + k as f64).collect();
    let mut amplitudes = Vec::with_capacity(knots.len() - 1);
    let mut shells = Vec::with_capacity(active);
    let (mut g, mut dg) = (0.0f64, 0.0f64);
    for nu in 1..=knots.len() - 1 {
        let level = c + (nu + 1) as f64;
        let integral: f64 = values.iter().filter(|v| v.0 < level).map(|v| v.1).sum();
        let a = if nu <= active && integral > 0.0 {
            let target = nu as f64 + integral.ln();
            let need = target + 1e-6 * target.abs().max(1.0);
            ((need - g - dg) * 4.0).max(0.0)
        } else {
            0.0
        };
        g += dg + a / 4.0;
        dg += a / 2.0;
        amplitudes.push(a);
        if nu <= active {
            shells.push((nu, integral, g));
        }
    }
    let gamma = C2Spline::new(knots, amplitudes, 0.0, 0.0)?;
    let weight = phi.then(ScalarMap::PlusSpline(gamma.clone()));
    Ok(IntegrabilityResult { weight, gamma, shells })
}

/// Euclidean gradient norm helper used by samplers.
pub fn grad_norm(j: &Jet2) -> f64 {
    j.grad.norm()
}

/// Points on a uniform lattice of `per_axis^n` nodes over the box (cell centres).
pub fn lattice(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let n = lo.len();
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            (0..n)
                .map(|d| {
                    let i = rem % per_axis;
                    rem /= per_axis;
                    lo[d] + (hi[d] - lo[d]) * (i as f64 + 0.5) / per_axis as f64
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_values() {
        let c5 = chi_family(5).unwrap();
        assert_eq!(c5.eval3(-2.0), [0.0, 0.0, 0.0]);
        assert_eq!(chi_family(2).unwrap().eval3(1.0)[0], 2.0);
        let vals: Vec<f64> = (1..6).map(|nu| chi_family(nu).unwrap().eval3(1.0)[0]).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        let c3 = chi_family(3).unwrap();
        assert_eq!(c3.eval3(0.5)[2], 6.0 * 3.0 * 0.5);
        assert!(c3.eval3(1e-9)[2] < 1e-7);
        assert!(chi_family(0).is_err());
    }

    #[test]
    fn spline_knot_values() {
        let s = C2Spline::new(vec![0.0, 2.0, 3.0], vec![1.0, 4.0], 1.0, 0.5).unwrap();
        // slope gains a·L/2, value gains s·L + a·L²/4
        assert_eq!(s.knot_slopes(), &[0.5, 1.5, 3.5]);
        assert_eq!(s.knot_values(), &[1.0, 3.0, 5.5]);
        for (i, &t) in s.knots().iter().enumerate() {
            let [v, d1, d2] = s.eval3(t);
            assert!((v - s.knot_values()[i]).abs() < 1e-14);
            assert!((d1 - s.knot_slopes()[i]).abs() < 1e-14);
            assert!(d2.abs() < 1e-14);
        }
        let [_, _, d2] = s.eval3(1.0);
        assert!((d2 - 1.0).abs() < 1e-14);
        assert_eq!(s.eval3(-1.0), [0.5, 0.5, 0.0]);
    }

    #[test]
    fn diameter_weight_closed_form() {
        let psi = diameter_weight(2, 2.0, &[0.5, -0.5, 0.0]).unwrap();
        let j = psi.eval_jet2(&[1.0, 1.0, 1.0]).unwrap();
        assert!((j.value - 2.0 * (0.25 + 2.25 + 1.0) / 8.0).abs() < 1e-14);
        for i in 0..3 {
            assert!((j.hess[(i, i)] - 0.5).abs() < 1e-14);
        }
        assert!(diameter_weight(1, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn df_precondition() {
        let r = ScalarFieldExpr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        let phi = ScalarFieldExpr::parse("x1", 2).unwrap();
        let e = df_search(&r, &phi, &[vec![0.1, 0.1]], 1, &[1.0], &[0.5]);
        assert!(matches!(e, Err(WeightError::Precondition(_))));
    }

    #[test]
    fn integrability_zero_eta() {
        let phi = PiecewiseWeight::new(Arc::new(ScalarFieldExpr::parse("x1^2", 1).unwrap()));
        let nodes: Vec<QuadNode> = (0..50)
            .map(|i| QuadNode { point: vec![-5.0 + 0.2 * i as f64], weight: 0.2, eta: 0.0 })
            .collect();
        let res = integrability_modifier(&phi, 0.0, &nodes).unwrap();
        assert!(res.gamma.amplitudes().iter().all(|&a| a == 0.0));
        let above = integrability_modifier(&phi, 100.0, &nodes).unwrap();
        assert!(above.shells.is_empty());
        assert!(above.gamma.amplitudes().iter().all(|&a| a == 0.0));
    }
}
