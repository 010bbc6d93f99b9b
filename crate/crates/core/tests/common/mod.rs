//! Reference computations that do not go through the library's operators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pconvex::discrete::{mass, Cochain, CubicalComplex};
use pconvex::exterior::{binomial, MultiIndex, PointForm, QuadraticForm};
use pconvex::fieldexpr::Field;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Increasing p-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, p, &mut Vec::new(), &mut out);
    out
}

/// `g_{jK}` for increasing `K`: the coefficient of `j` prepended to `K`,
/// sorted, with the sign of the sorting permutation. Zero when `j ∈ K`.
pub fn antisym_coeff(g: &PointForm, j: usize, k: &[usize]) -> f64 {
    if k.contains(&j) {
        return 0.0;
    }
    let before = k.iter().filter(|&&i| i < j).count();
    let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
    let mut idx: Vec<usize> = k.to_vec();
    idx.push(j);
    idx.sort_unstable();
    let n = g.dim();
    let mi = MultiIndex::new(idx, n).expect("valid index");
    sign * g.coeff(&mi)
}

/// `θ_{jk} g_{jK} h_{kK}` summed over `j, k` and increasing `K`.
pub fn expanded_pairing(theta: &QuadraticForm, g: &PointForm, h: &PointForm) -> f64 {
    let n = g.dim();
    let p = g.degree();
    let mut acc = 0.0;
    for k_idx in subsets(n, p - 1) {
        for j in 0..n {
            let gj = antisym_coeff(g, j, &k_idx);
            if gj == 0.0 {
                continue;
            }
            for k in 0..n {
                acc += theta.get(j, k) * gj * antisym_coeff(h, k, &k_idx);
            }
        }
    }
    acc
}

/// Eigenvalues of `F_θ` on p-forms as sums of p eigenvalues of `θ`.
pub fn pair_sum_spectrum(theta: &QuadraticForm, p: usize) -> Vec<f64> {
    let n = theta.dim();
    let eig = nalgebra::SymmetricEigen::new(theta.matrix().clone());
    let mut out: Vec<f64> = subsets(n, p).iter().map(|s| s.iter().map(|&i| eig.eigenvalues[i]).sum()).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Matrix of `F_θ` on p-forms assembled entry by entry from the index expansion.
pub fn dense_f(theta: &QuadraticForm, p: usize) -> DMatrix<f64> {
    let n = theta.dim();
    let m = binomial(n, p);
    let unit = |i: usize| {
        let mut c = vec![0.0; m];
        c[i] = 1.0;
        PointForm::from_coeffs(n, p, c).unwrap()
    };
    DMatrix::from_fn(m, m, |i, j| expanded_pairing(theta, &unit(i), &unit(j)))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> QuadraticForm {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    QuadraticForm::new((&m + m.transpose()) * 0.5).unwrap()
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> QuadraticForm {
    let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    QuadraticForm::new(&c * c.transpose() + DMatrix::identity(n, n) * shift).unwrap()
}

pub fn random_form(rng: &mut ChaCha8Rng, n: usize, p: usize) -> PointForm {
    PointForm::from_coeffs(n, p, (0..binomial(n, p)).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dense(m: &nalgebra_sparse::CsrMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.triplet_iter() {
        out[(i, j)] += *v;
    }
    out
}

/// Weighted minimum-norm solution of `du = f` by SVD of `d M^{-1/2}`.
pub fn dense_minimal(cx: &CubicalComplex, f: &Cochain, phi: &dyn Field) -> DVector<f64> {
    let p = f.p;
    let d = dense(cx.coboundary(p - 1));
    let m = mass(cx, phi, p - 1).unwrap();
    let scale = DVector::from_iterator(m.diag.len(), m.diag.iter().map(|w| 1.0 / w.sqrt()));
    let a = &d * DMatrix::from_diagonal(&scale);
    let svd = a.svd(true, true);
    let cutoff = 1e-10 * svd.singular_values.max();
    let v = svd.pseudo_inverse(cutoff).unwrap() * DVector::from_column_slice(&f.values);
    v.component_mul(&scale)
}

/// Eigenvalues of the Schur complement `A_xx − A_xy A_yy⁻¹ A_yx`.
pub fn schur_complement(a: &DMatrix<f64>, x_dim: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let k = n - x_dim;
    let axx = a.view((0, 0), (x_dim, x_dim)).into_owned();
    let axy = a.view((0, x_dim), (x_dim, k)).into_owned();
    let ayy = a.view((x_dim, x_dim), (k, k)).into_owned();
    axx - &axy * ayy.try_inverse().unwrap() * axy.transpose()
}
