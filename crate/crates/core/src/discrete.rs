//! Cubical cochain complexes over gridded domains.
//!
//! A p-cell is an anchor vertex plus a set of p axes. Cells are addressed by
//! doubled coordinates `2·anchor + e_S`, so a coordinate is odd exactly on the
//! cell's axes and the barycenter is `lo + c·h/2`.

use std::sync::Arc;

use nalgebra_sparse::{CooMatrix, CsrMatrix};
use thiserror::Error;

use crate::exterior::{apply_f, binomial, multi_indices, rank_of, ExteriorError, PointForm, QuadraticForm};
use crate::fieldexpr::{ExprError, Field};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscreteError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no cells satisfy r < 0")]
    EmptyDomain,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error("degree {0} is out of range")]
    InvalidDegree(usize),
    #[error("cochain length {got} does not match {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error("form is nonzero ({value:.3e}) at node {node:?} within 2h of the boundary")]
    Support { node: Vec<f64>, value: f64 },
    #[error("coboundary composition d_{p1}·d_{p} is not zero")]
    CoboundaryDefect { p: usize, p1: usize },
}

/// Relative size below which a node value counts as zero for the support check.
pub const SUPPORT_TOL: f64 = 1e-12;

/// Box `∏[lo_d, hi_d]` with spacing `h`, optionally cut by `{r < 0}`.
#[derive(Clone)]
pub struct GridDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub h: f64,
    pub r: Option<Arc<dyn Field>>,
}

impl std::fmt::Debug for GridDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridDomain")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("h", &self.h)
            .field("cut", &self.r.is_some())
            .finish()
    }
}

impl GridDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, h: f64, r: Option<Arc<dyn Field>>) -> Result<Self, DiscreteError> {
        let d = GridDomain { lo, hi, h, r };
        d.counts()?;
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Cells per axis.
    pub fn counts(&self) -> Result<Vec<usize>, DiscreteError> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(DiscreteError::InvalidGrid("box bounds must have equal non-zero length".into()));
        }
        if let Some(r) = &self.r {
            if r.dim() != self.lo.len() {
                return Err(DiscreteError::InvalidGrid("defining function has the wrong dimension".into()));
            }
        }
        if !(self.h > 0.0) {
            return Err(DiscreteError::InvalidGrid(format!("spacing must be positive, got {}", self.h)));
        }
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let len = (b - a) / self.h;
                let count = len.round();
                if count < 2.0 || (len - count).abs() > 1e-9 * count.max(1.0) {
                    Err(DiscreteError::InvalidGrid(format!(
                        "axis [{a}, {b}] is not an integer multiple (>= 2) of h = {}",
                        self.h
                    )))
                } else {
                    Ok(count as usize)
                }
            })
            .collect()
    }

    fn inside(&self, x: &[f64]) -> Result<bool, ExprError> {
        match &self.r {
            None => Ok(true),
            Some(r) => Ok(r.value(x)? < 0.0),
        }
    }
}

/// Cubical complex with per-degree cell lists in increasing key order.
#[derive(Debug, Clone)]
pub struct CubicalComplex {
    n: usize,
    h: f64,
    lo: Vec<f64>,
    /// Doubled-grid extent per axis, `2N_d + 1`.
    extent: Vec<usize>,
    /// Cell index per doubled-grid key, `u32::MAX` when absent.
    index: Vec<u32>,
    /// Flattened doubled coordinates, `n` entries per cell.
    coords: Vec<Vec<u32>>,
    coboundaries: Vec<CsrMatrix<f64>>,
}

const ABSENT: u32 = u32::MAX;

fn cell_degree(c: &[u32]) -> usize {
    c.iter().filter(|&&v| v % 2 == 1).count()
}

impl CubicalComplex {
    pub fn build(dom: &GridDomain) -> Result<Self, DiscreteError> {
        let counts = dom.counts()?;
        let n = counts.len();
        let extent: Vec<usize> = counts.iter().map(|c| 2 * c + 1).collect();
        let total: usize = extent.iter().product();
        let mut index = vec![ABSENT; total];
        let mut coords: Vec<Vec<u32>> = vec![Vec::new(); n + 1];
        let mut by_degree: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for key in 0..total {
            let c = decode(key, &extent);
            by_degree[cell_degree(&c)].push(key);
        }
        let mut x = vec![0.0; n];
        let mut c = vec![0u32; n];
        for p in 0..=n {
            for &key in &by_degree[p] {
                decode_into(key, &extent, &mut c);
                let facets_present = (0..n).filter(|&d| c[d] % 2 == 1).all(|d| {
                    let mut f = c.clone();
                    f[d] -= 1;
                    let lower = index[encode(&f, &extent)] != ABSENT;
                    f[d] += 2;
                    lower && index[encode(&f, &extent)] != ABSENT
                });
                if !facets_present {
                    continue;
                }
                for d in 0..n {
                    x[d] = dom.lo[d] + c[d] as f64 * dom.h / 2.0;
                }
                if !dom.inside(&x)? {
                    continue;
                }
                index[key] = (coords[p].len() / n) as u32;
                coords[p].extend_from_slice(&c);
            }
        }
        if coords[0].is_empty() {
            return Err(DiscreteError::EmptyDomain);
        }
        let mut cx = CubicalComplex { n, h: dom.h, lo: dom.lo.clone(), extent, index, coords, coboundaries: Vec::new() };
        cx.coboundaries = (0..n).map(|p| cx.assemble_coboundary(p)).collect();
        cx.verify_d_squared()?;
        Ok(cx)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_cells(&self, p: usize) -> usize {
        if p > self.n {
            0
        } else {
            self.coords[p].len() / self.n
        }
    }

    pub fn total_cells(&self) -> usize {
        (0..=self.n).map(|p| self.num_cells(p)).sum()
    }

    pub fn euler_characteristic(&self) -> i64 {
        (0..=self.n).map(|p| if p % 2 == 0 { 1 } else { -1 } * self.num_cells(p) as i64).sum()
    }

    /// Doubled coordinates of cell `i` of degree `p`.
    pub fn cell_coords(&self, p: usize, i: usize) -> &[u32] {
        &self.coords[p][i * self.n..(i + 1) * self.n]
    }

    /// Axes spanned by the cell, increasing.
    pub fn cell_axes(&self, p: usize, i: usize) -> Vec<usize> {
        self.cell_coords(p, i).iter().enumerate().filter(|(_, &v)| v % 2 == 1).map(|(d, _)| d).collect()
    }

    pub fn barycenter(&self, p: usize, i: usize) -> Vec<f64> {
        self.cell_coords(p, i).iter().zip(&self.lo).map(|(&c, lo)| lo + c as f64 * self.h / 2.0).collect()
    }

    /// Anchor vertex position (lowest corner).
    pub fn anchor(&self, p: usize, i: usize) -> Vec<f64> {
        self.cell_coords(p, i).iter().zip(&self.lo).map(|(&c, lo)| lo + (c / 2) as f64 * self.h).collect()
    }

    /// Index of the cell with the given doubled coordinates.
    pub fn lookup(&self, c: &[u32]) -> Option<usize> {
        if c.len() != self.n || c.iter().zip(&self.extent).any(|(&v, &e)| v as usize >= e) {
            return None;
        }
        match self.index[encode(c, &self.extent)] {
            ABSENT => None,
            i => Some(i as usize),
        }
    }

    /// Index of the degree-`p` cell whose barycenter is at `x`.
    pub fn locate(&self, p: usize, x: &[f64]) -> Option<usize> {
        let mut c = Vec::with_capacity(self.n);
        for (d, &v) in x.iter().enumerate() {
            let t = (v - self.lo[d]) * 2.0 / self.h;
            let r = t.round();
            if (t - r).abs() > 1e-6 || r < 0.0 {
                return None;
            }
            c.push(r as u32);
        }
        if cell_degree(&c) != p {
            return None;
        }
        self.lookup(&c)
    }

    /// `d_p : C^p → C^{p+1}`, entries ±1.
    pub fn coboundary(&self, p: usize) -> &CsrMatrix<f64> {
        &self.coboundaries[p]
    }

    fn assemble_coboundary(&self, p: usize) -> CsrMatrix<f64> {
        let rows = self.num_cells(p + 1);
        let cols = self.num_cells(p);
        let mut coo = CooMatrix::new(rows, cols);
        let mut f = vec![0u32; self.n];
        for row in 0..rows {
            let c = self.cell_coords(p + 1, row);
            let mut k = 0usize;
            for d in 0..self.n {
                if c[d] % 2 == 0 {
                    continue;
                }
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                k += 1;
                f.copy_from_slice(c);
                f[d] = c[d] + 1;
                let upper = self.lookup(&f).expect("closure guarantees facets");
                f[d] = c[d] - 1;
                let lower = self.lookup(&f).expect("closure guarantees facets");
                coo.push(row, upper, sign);
                coo.push(row, lower, -sign);
            }
        }
        CsrMatrix::from(&coo)
    }

    fn verify_d_squared(&self) -> Result<(), DiscreteError> {
        for p in 0..self.n.saturating_sub(1) {
            let prod = &self.coboundaries[p + 1] * &self.coboundaries[p];
            if prod.values().iter().any(|&v| v != 0.0) {
                return Err(DiscreteError::CoboundaryDefect { p, p1: p + 1 });
            }
        }
        Ok(())
    }

    /// Indices of the top-dimensional cells.
    pub fn top_cells(&self) -> std::ops::Range<usize> {
        0..self.num_cells(self.n)
    }

    /// Pointwise p-form at the centre of top cell `t`, averaging the `2^{n−p}`
    /// parallel faces for each multi-index and dividing by `h^p`.
    pub fn reconstruct(&self, cochain: &Cochain, t: usize) -> Result<PointForm, DiscreteError> {
        let p = cochain.p;
        let n = self.n;
        let c = self.cell_coords(n, t).to_vec();
        let mut coeffs = vec![0.0; binomial(n, p)];
        let scale = self.h.powi(p as i32);
        let mut face = vec![0u32; n];
        for (r, axes) in multi_indices(n, p).iter().enumerate() {
            let others: Vec<usize> = (0..n).filter(|d| !axes.contains(d)).collect();
            let combos = 1usize << others.len();
            let mut acc = 0.0;
            for mask in 0..combos {
                face.copy_from_slice(&c);
                for (b, &d) in others.iter().enumerate() {
                    face[d] = if mask & (1 << b) != 0 { c[d] + 1 } else { c[d] - 1 };
                }
                let i = self.lookup(&face).expect("top cell faces are present");
                acc += cochain.values[i];
            }
            coeffs[r] = acc / combos as f64 / scale;
        }
        Ok(PointForm::from_coeffs(n, p, coeffs)?)
    }
}

fn decode(key: usize, extent: &[usize]) -> Vec<u32> {
    let mut c = vec![0u32; extent.len()];
    decode_into(key, extent, &mut c);
    c
}

fn decode_into(mut key: usize, extent: &[usize], out: &mut [u32]) {
    for (d, &e) in extent.iter().enumerate() {
        out[d] = (key % e) as u32;
        key /= e;
    }
}

fn encode(c: &[u32], extent: &[usize]) -> usize {
    let mut key = 0usize;
    for d in (0..extent.len()).rev() {
        key = key * extent[d] + c[d] as usize;
    }
    key
}

/// Values on the p-cells of a complex.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain {
    pub p: usize,
    pub values: Vec<f64>,
}

impl Cochain {
    pub fn zeros(cx: &CubicalComplex, p: usize) -> Self {
        Cochain { p, values: vec![0.0; cx.num_cells(p)] }
    }

    pub fn new(cx: &CubicalComplex, p: usize, values: Vec<f64>) -> Result<Self, DiscreteError> {
        if values.len() != cx.num_cells(p) {
            return Err(DiscreteError::LengthMismatch { expected: cx.num_cells(p), got: values.len() });
        }
        Ok(Cochain { p, values })
    }

    /// CSV with header `cell,anchor_1,…,anchor_n,value`.
    pub fn to_csv(&self, cx: &CubicalComplex) -> String {
        let mut out = String::from("cell");
        for d in 0..cx.dim() {
            out.push_str(&format!(",anchor_{}", d + 1));
        }
        out.push_str(",value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&i.to_string());
            for a in cx.anchor(self.p, i) {
                out.push_str(&format!(",{a}"));
            }
            out.push_str(&format!(",{v}\n"));
        }
        out
    }
}

/// `y = A x`.
pub fn spmv(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (row, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in offsets[row]..offsets[row + 1] {
            acc += vals[k] * x[cols[k]];
        }
        *out = acc;
    }
}

/// `y = Aᵀ x`.
pub fn spmv_t(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for row in 0..a.nrows() {
        let xr = x[row];
        if xr == 0.0 {
            continue;
        }
        for k in offsets[row]..offsets[row + 1] {
            y[cols[k]] += vals[k] * xr;
        }
    }
}

/// `d_p` applied to a cochain.
pub fn apply_d(cx: &CubicalComplex, c: &Cochain) -> Cochain {
    if c.p >= cx.dim() {
        return Cochain { p: c.p + 1, values: Vec::new() };
    }
    let mut out = vec![0.0; cx.num_cells(c.p + 1)];
    spmv(cx.coboundary(c.p), &c.values, &mut out);
    Cochain { p: c.p + 1, values: out }
}

/// Diagonal mass `e^{−φ(c_σ)} h^{n−2p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMass {
    pub p: usize,
    pub diag: Vec<f64>,
}

impl WeightedMass {
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.diag.iter().zip(a).zip(b).map(|((m, x), y)| m * x * y).sum()
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }
}

pub fn mass(cx: &CubicalComplex, phi: &dyn Field, p: usize) -> Result<WeightedMass, DiscreteError> {
    if p > cx.dim() {
        return Err(DiscreteError::InvalidDegree(p));
    }
    let scale = cx.h().powi(cx.dim() as i32 - 2 * p as i32);
    let diag = (0..cx.num_cells(p))
        .map(|i| Ok((-phi.value(&cx.barycenter(p, i))?).exp() * scale))
        .collect::<Result<Vec<f64>, ExprError>>()?;
    Ok(WeightedMass { p, diag })
}

/// `δ_φ = M_{p−1}⁻¹ d_{p−1}ᵀ M_p : C^p → C^{p−1}`.
pub fn weighted_adjoint(cx: &CubicalComplex, phi: &dyn Field, p: usize) -> Result<CsrMatrix<f64>, DiscreteError> {
    if p == 0 || p > cx.dim() {
        return Err(DiscreteError::InvalidDegree(p));
    }
    let lower = mass(cx, phi, p - 1)?;
    let upper = mass(cx, phi, p)?;
    let d = cx.coboundary(p - 1);
    let mut coo = CooMatrix::new(d.ncols(), d.nrows());
    for (row, col, &v) in d.triplet_iter() {
        coo.push(col, row, v * upper.diag[row] / lower.diag[col]);
    }
    Ok(CsrMatrix::from(&coo))
}

/// Midpoint sampling: coefficient at the barycenter times `h^p`.
/// `coeffs` holds one field per increasing multi-index, in rank order.
pub fn sample_cochain(cx: &CubicalComplex, p: usize, coeffs: &[&dyn Field]) -> Result<Cochain, DiscreteError> {
    let n = cx.dim();
    if p > n {
        return Err(DiscreteError::InvalidDegree(p));
    }
    if coeffs.len() != binomial(n, p) {
        return Err(DiscreteError::LengthMismatch { expected: binomial(n, p), got: coeffs.len() });
    }
    let scale = cx.h().powi(p as i32);
    let mut values = Vec::with_capacity(cx.num_cells(p));
    for i in 0..cx.num_cells(p) {
        let axes = cx.cell_axes(p, i);
        let field = coeffs[rank_of(&axes, n)];
        values.push(field.value(&cx.barycenter(p, i))? * scale);
    }
    Ok(Cochain { p, values })
}

/// Both sides of the weighted energy identity for a compactly supported form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmhRecord {
    /// `‖dg‖²_φ + ‖δ_φ g‖²_φ`.
    pub lhs: f64,
    /// `∫ |∂_j g_I|² e^{−φ}`.
    pub rhs_gradient_term: f64,
    /// `∫ ⟨F_φ g, g⟩ e^{−φ}`.
    pub rhs_f_term: f64,
    /// `|lhs − rhs| / (|lhs| + |rhs|)`, zero when both vanish.
    pub residual: f64,
    pub h: f64,
}

/// Node-lattice evaluation of the energy identity.
///
/// Derivatives are centred differences of node samples of `g`, `φ` enters
/// through exact jets, integrals use the node rule (trapezoid, with vanishing
/// boundary values). `g` must vanish on nodes within `2h` of `∂Ω`.
pub fn kmh_residual(
    g: &[&dyn Field],
    p: usize,
    phi: &dyn Field,
    dom: &GridDomain,
) -> Result<KmhRecord, DiscreteError> {
    let counts = dom.counts()?;
    let n = counts.len();
    if p == 0 || p > n {
        return Err(DiscreteError::InvalidDegree(p));
    }
    let len = binomial(n, p);
    if g.len() != len {
        return Err(DiscreteError::LengthMismatch { expected: len, got: g.len() });
    }
    let h = dom.h;
    let nodes: Vec<usize> = counts.iter().map(|c| c + 1).collect();
    let total: usize = nodes.iter().product();
    let strides: Vec<usize> = (0..n).map(|d| nodes[..d].iter().product()).collect();
    let position = |flat: usize| -> Vec<f64> {
        let mut rem = flat;
        (0..n)
            .map(|d| {
                let i = rem % nodes[d];
                rem /= nodes[d];
                dom.lo[d] + i as f64 * h
            })
            .collect()
    };
    let multi = |flat: usize| -> Vec<usize> {
        let mut rem = flat;
        (0..n)
            .map(|d| {
                let i = rem % nodes[d];
                rem /= nodes[d];
                i
            })
            .collect()
    };

    let mut inside = vec![false; total];
    let mut samples = vec![0.0; total * len];
    let mut peak = 0.0f64;
    for flat in 0..total {
        let x = position(flat);
        inside[flat] = dom.inside(&x)?;
        for (k, f) in g.iter().enumerate() {
            let v = f.value(&x)?;
            samples[flat * len + k] = v;
            peak = peak.max(v.abs());
        }
    }
    if peak == 0.0 {
        return Ok(KmhRecord { lhs: 0.0, rhs_gradient_term: 0.0, rhs_f_term: 0.0, residual: 0.0, h });
    }

    // Support: nodes within two lattice steps of the outside or the box edge.
    let offsets: Vec<Vec<i64>> = (0..5usize.pow(n as u32))
        .map(|m| {
            let mut rem = m;
            (0..n)
                .map(|_| {
                    let o = (rem % 5) as i64 - 2;
                    rem /= 5;
                    o
                })
                .collect()
        })
        .collect();
    for flat in 0..total {
        let size = (0..len).map(|k| samples[flat * len + k].abs()).fold(0.0, f64::max);
        if size <= SUPPORT_TOL * peak {
            continue;
        }
        let idx = multi(flat);
        let near_edge = offsets.iter().any(|o| {
            let mut nb = 0usize;
            for d in 0..n {
                let v = idx[d] as i64 + o[d];
                if v <= 0 || v >= nodes[d] as i64 - 1 {
                    return true;
                }
                nb += v as usize * strides[d];
            }
            !inside[nb]
        });
        if near_edge || !inside[flat] {
            return Err(DiscreteError::Support { node: position(flat), value: size });
        }
    }

    let pm1 = multi_indices(n, p - 1);
    let pp1 = if p < n { multi_indices(n, p + 1) } else { Vec::new() };
    let cell_volume = h.powi(n as i32);
    let (mut lhs, mut grad_term, mut f_term) = (0.0, 0.0, 0.0);
    let mut partial = vec![0.0; n * len];
    let mut seq = Vec::with_capacity(p + 1);
    for flat in 0..total {
        let idx = multi(flat);
        if (0..n).any(|d| idx[d] == 0 || idx[d] == nodes[d] - 1) {
            continue;
        }
        let mut any = false;
        for d in 0..n {
            for k in 0..len {
                let fwd = samples[(flat + strides[d]) * len + k];
                let bwd = samples[(flat - strides[d]) * len + k];
                let v = (fwd - bwd) / (2.0 * h);
                partial[d * len + k] = v;
                any |= v != 0.0;
            }
        }
        let gv = &samples[flat * len..(flat + 1) * len];
        if !any && gv.iter().all(|&v| v == 0.0) {
            continue;
        }
        let x = position(flat);
        let jet = phi.jet(&x)?;
        let w = (-jet.value).exp() * cell_volume;

        grad_term += w * partial.iter().map(|v| v * v).sum::<f64>();

        let form = PointForm::from_coeffs(n, p, gv.to_vec())?;
        let theta = QuadraticForm::new(jet.hess.clone())?;
        f_term += w * apply_f(&theta, &form)?.dot(&form)?;

        // (dg)_K = Σ_a (−1)^a ∂_{k_a} g_{K∖k_a}
        let mut dg_sq = 0.0;
        for kk in &pp1 {
            let mut acc = 0.0;
            for a in 0..kk.len() {
                let rest: Vec<usize> = kk.iter().enumerate().filter(|(b, _)| *b != a).map(|(_, &v)| v).collect();
                let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * partial[kk[a] * len + rank_of(&rest, n)];
            }
            dg_sq += acc * acc;
        }

        // (δ_φ g)_K = −Σ_j (∂_j − φ_j) g_{jK}
        let mut delta_sq = 0.0;
        for kk in &pm1 {
            let mut acc = 0.0;
            for j in 0..n {
                if kk.contains(&j) {
                    continue;
                }
                seq.clear();
                seq.push(j);
                seq.extend_from_slice(kk);
                let mut sorted = seq.clone();
                sorted.sort_unstable();
                let pos = sorted.iter().position(|&v| v == j).expect("j in sorted");
                let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
                let r = rank_of(&sorted, n);
                acc += sign * (partial[j * len + r] - jet.grad[j] * gv[r]);
            }
            delta_sq += acc * acc;
        }
        lhs += w * (dg_sq + delta_sq);
    }
    let rhs = grad_term + f_term;
    let denom = lhs.abs() + rhs.abs();
    let residual = if denom == 0.0 { 0.0 } else { (lhs - rhs).abs() / denom };
    Ok(KmhRecord { lhs, rhs_gradient_term: grad_term, rhs_f_term: f_term, residual, h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldexpr::{ConstantField, ScalarFieldExpr};

    fn unit_square(h: f64) -> GridDomain {
        GridDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], h, None).unwrap()
    }

    #[test]
    fn box_counts() {
        let cx = CubicalComplex::build(&unit_square(0.25)).unwrap();
        assert_eq!((cx.num_cells(0), cx.num_cells(1), cx.num_cells(2)), (25, 40, 16));
        assert_eq!(cx.euler_characteristic(), 1);
    }

    #[test]
    fn empty_domain() {
        let r: Arc<dyn Field> = Arc::new(ScalarFieldExpr::parse("x1^2 + x2^2 + 1", 2).unwrap());
        let dom = GridDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], 0.25, Some(r)).unwrap();
        assert!(matches!(CubicalComplex::build(&dom), Err(DiscreteError::EmptyDomain)));
    }

    #[test]
    fn interval_difference_matrix() {
        let dom = GridDomain::new(vec![0.0], vec![1.0], 0.25, None).unwrap();
        let cx = CubicalComplex::build(&dom).unwrap();
        let d = cx.coboundary(0);
        assert_eq!(d.nrows(), 4);
        for row in 0..4 {
            let r = d.row(row);
            assert_eq!(r.values().iter().sum::<f64>(), 0.0);
            assert_eq!(r.nnz(), 2);
        }
        let v = Cochain { p: 0, values: vec![0.0, 1.0, 3.0, 6.0, 10.0] };
        assert_eq!(apply_d(&cx, &v).values, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mass_constant_weight_1d() {
        let dom = GridDomain::new(vec![0.0], vec![1.0], 0.125, None).unwrap();
        let cx = CubicalComplex::build(&dom).unwrap();
        let m = mass(&cx, &ConstantField { n: 1, value: 0.0 }, 0).unwrap();
        assert!(m.diag.iter().all(|&v| v == 0.125));
    }

    #[test]
    fn weighted_length_of_dx() {
        let h = 1.0 / 256.0;
        let cx = CubicalComplex::build(&GridDomain::new(vec![0.0], vec![1.0], h, None).unwrap()).unwrap();
        let phi = ScalarFieldExpr::parse("x1^2", 1).unwrap();
        let m = mass(&cx, &phi, 1).unwrap();
        let dx = vec![h; cx.num_cells(1)];
        assert!((m.norm_sq(&dx) - 0.746_824_132_812_427).abs() < 1e-3);
    }

    #[test]
    fn grid_validation() {
        assert!(GridDomain::new(vec![0.0], vec![1.0], 0.3, None).is_err());
        assert!(GridDomain::new(vec![0.0], vec![1.0], 0.75, None).is_err());
        assert!(GridDomain::new(vec![0.0], vec![1.0], -0.5, None).is_err());
    }

    #[test]
    fn locate_round_trip() {
        let cx = CubicalComplex::build(&unit_square(0.25)).unwrap();
        for p in 0..=2 {
            for i in 0..cx.num_cells(p) {
                assert_eq!(cx.locate(p, &cx.barycenter(p, i)), Some(i));
            }
        }
    }

    #[test]
    fn csv_export() {
        let dom = GridDomain::new(vec![0.0], vec![1.0], 0.5, None).unwrap();
        let cx = CubicalComplex::build(&dom).unwrap();
        let c = Cochain { p: 1, values: vec![1.5, -2.0] };
        assert_eq!(c.to_csv(&cx), "cell,anchor_1,value\n0,0,1.5\n1,0.5,-2\n");
    }

    #[test]
    fn kmh_zero_form() {
        let zero = ConstantField { n: 2, value: 0.0 };
        let rec = kmh_residual(&[&zero, &zero], 1, &zero, &unit_square(1.0 / 16.0)).unwrap();
        assert_eq!(rec.residual, 0.0);
    }

    #[test]
    fn kmh_support_violation() {
        let one = ConstantField { n: 2, value: 1.0 };
        let zero = ConstantField { n: 2, value: 0.0 };
        let e = kmh_residual(&[&one, &zero], 1, &zero, &unit_square(0.125));
        assert!(matches!(e, Err(DiscreteError::Support { .. })));
    }
}
