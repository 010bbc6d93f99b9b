mod common;

use common::*;
use nalgebra::DMatrix;
use pconvex::cli::config::ExperimentConfig;
use pconvex::convexity::{min_p_trace, Tolerances, Verdict};
use pconvex::discrete::{apply_d, mass, weighted_adjoint, Cochain, CubicalComplex, GridDomain};
use pconvex::exterior::{apply_f, eigen_f, f_matrix, interior_product, pinv_f, wedge, PointForm, QuadraticForm};
use pconvex::fieldexpr::{Field, ScalarFieldExpr};
use pconvex::solver::{minimal_solution, BoundReport, SolveOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=5).prop_flat_map(|n| (Just(n), 1..=n))
}

fn matrix(n: usize) -> impl Strategy<Value = QuadraticForm> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        QuadraticForm::new((&m + m.transpose()) * 0.5).unwrap()
    })
}

fn form(n: usize, p: usize) -> impl Strategy<Value = PointForm> {
    prop::collection::vec(-1.0f64..1.0, pconvex::exterior::binomial(n, p))
        .prop_map(move |c| PointForm::from_coeffs(n, p, c).unwrap())
}

fn case() -> impl Strategy<Value = (QuadraticForm, PointForm, PointForm)> {
    dims().prop_flat_map(|(n, p)| (matrix(n), form(n, p), form(n, p)))
}

proptest! {
    #[test]
    fn pairing_matches_index_expansion((theta, g, _h) in case()) {
        let lhs = apply_f(&theta, &g).unwrap().dot(&g).unwrap();
        let rhs = expanded_pairing(&theta, &g, &g);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn f_is_self_adjoint((theta, g, h) in case()) {
        let a = apply_f(&theta, &g).unwrap().dot(&h).unwrap();
        let b = g.dot(&apply_f(&theta, &h).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn spectrum_is_sums_of_eigenvalues((theta, g, _h) in case()) {
        let p = g.degree();
        let expect = pair_sum_spectrum(&theta, p);
        let got = eigen_f(&theta, p).unwrap().values;
        let mut dense: Vec<f64> = nalgebra::SymmetricEigen::new(f_matrix(&theta, p).unwrap()).eigenvalues.iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        for ((a, b), c) in expect.iter().zip(&got).zip(&dense) {
            prop_assert!((a - b).abs() < 1e-10 && (a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn interior_product_is_adjoint_of_wedge(
        (tau, a, b) in (2usize..=5).prop_flat_map(|n| (1..n).prop_flat_map(move |p| (
            prop::collection::vec(-1.0f64..1.0, n), form(n, p - 1), form(n, p))))
    ) {
        let lhs = wedge(&PointForm::covector(&tau), &a).unwrap().dot(&b).unwrap();
        let rhs = a.dot(&interior_product(&tau, &b).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn wedge_of_covectors_anticommutes(
        (u, v) in (2usize..=5).prop_flat_map(|n| (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n)))
    ) {
        let a = wedge(&PointForm::covector(&u), &PointForm::covector(&v)).unwrap();
        let b = wedge(&PointForm::covector(&v), &PointForm::covector(&u)).unwrap();
        prop_assert!(a.add(&b).unwrap().norm() < 1e-14);
    }

    #[test]
    fn pinv_inverts_on_the_image((theta, g, _h) in case()) {
        let f = apply_f(&theta, &g).unwrap();
        if f.norm() > 1e-6 {
            let back = apply_f(&theta, &pinv_f(&theta, &f, 1e-9).unwrap()).unwrap();
            prop_assert!(back.sub(&f).unwrap().norm() <= 1e-8 * (1.0 + f.norm()));
        }
    }

    #[test]
    fn average_p_trace_is_monotone((theta, g, _h) in case()) {
        let n = theta.dim();
        let p = g.degree();
        if p < n {
            let a = min_p_trace(&theta, p).unwrap() / p as f64;
            let b = min_p_trace(&theta, p + 1).unwrap() / (p + 1) as f64;
            prop_assert!(a <= b + 1e-12);
        }
    }

    #[test]
    fn verdict_bands_are_ordered(t in -1.0f64..1.0) {
        let tol = Tolerances::default();
        let v = Verdict::classify(t, &tol);
        prop_assert_eq!(v == Verdict::Strict, t > tol.strict);
        prop_assert_eq!(v == Verdict::Fail, t < -tol.semi);
    }

    #[test]
    fn bound_report_pass_rule(lhs in 0.0f64..10.0, rhs in 1e-3f64..10.0, c in 0.1f64..5.0, slack in 0.0f64..0.2) {
        let r = BoundReport::new("t", lhs, rhs, c, 0.1, slack);
        prop_assert_eq!(r.pass, lhs / rhs <= c * (1.0 + slack));
        prop_assert!(!r.vacuous);
    }

    #[test]
    fn expression_hessian_matches_differences(a in -1.0f64..1.0, b in -1.0f64..1.0, x in -0.5f64..0.5, y in -0.5f64..0.5) {
        let src = format!("exp({a}*x1 + {b}*x2^2) + x1^2*x2");
        let f = ScalarFieldExpr::parse(&src, 2).unwrap();
        let j = f.eval_jet2(&[x, y]).unwrap();
        prop_assert_eq!(j.hess[(0, 1)], j.hess[(1, 0)]);
        let s = 1e-4;
        let v = |u: f64, w: f64| f.eval(&[u, w]).unwrap();
        let fxx = (v(x + s, y) - 2.0 * v(x, y) + v(x - s, y)) / (s * s);
        let fxy = (v(x + s, y + s) - v(x + s, y - s) - v(x - s, y + s) + v(x - s, y - s)) / (4.0 * s * s);
        prop_assert!((fxx - j.hess[(0, 0)]).abs() < 1e-5);
        prop_assert!((fxy - j.hess[(0, 1)]).abs() < 1e-5);
    }

    #[test]
    fn config_accepts_decreasing_ladders(steps in prop::collection::vec(1u32..5, 1..4)) {
        let mut denoms = Vec::new();
        let mut d = 2u32;
        for s in steps {
            d *= 1 + s;
            denoms.push(d);
        }
        let ladder: Vec<String> = denoms.iter().map(|d| format!("1/{d}")).collect();
        let text = format!("[experiment]\ntask = solve\np = 1\n[domain]\nlo = 0, 0\nhi = 1, 1\nh = {}\n[weights]\nphi = x1^2\n", ladder.join(", "));
        let cfg = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(cfg.domain.unwrap().ladder.len(), denoms.len());
        let reversed = text.replace(&ladder.join(", "), &ladder.iter().rev().cloned().collect::<Vec<_>>().join(", "));
        if denoms.len() > 1 {
            prop_assert!(ExperimentConfig::parse(&reversed).is_err());
        }
    }
}

fn random_cochain(cx: &CubicalComplex, p: usize, seed: u64) -> Cochain {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Cochain { p, values: (0..cx.num_cells(p)).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

fn cut_complex(n: usize, cells: u32, cut: bool) -> CubicalComplex {
    let h = 1.0 / cells as f64;
    let r: Option<std::sync::Arc<dyn Field>> = if cut {
        let src = (1..=n).map(|i| format!("(x{i} - 0.5)^2")).collect::<Vec<_>>().join(" + ") + " - 0.2";
        Some(std::sync::Arc::new(ScalarFieldExpr::parse(&src, n).unwrap()))
    } else {
        None
    };
    CubicalComplex::build(&GridDomain::new(vec![0.0; n], vec![1.0; n], h, r).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coboundary_squares_to_zero(n in 1usize..=3, cells in 2u32..6, cut: bool, seed: u64) {
        let cx = cut_complex(n, cells, cut && n > 1);
        for p in 0..n.saturating_sub(1) {
            let c = random_cochain(&cx, p, seed);
            let dd = apply_d(&cx, &apply_d(&cx, &c));
            prop_assert!(dd.values.iter().all(|v| v.abs() <= 1e-14));
        }
    }

    #[test]
    fn box_has_euler_characteristic_one(n in 1usize..=3, cells in 2u32..6) {
        prop_assert_eq!(cut_complex(n, cells, false).euler_characteristic(), 1);
    }

    #[test]
    fn weighted_adjoint_pairs_with_d(n in 2usize..=3, cells in 2u32..5, seed: u64) {
        let cx = cut_complex(n, cells, false);
        let phi = ScalarFieldExpr::parse("x1^2 + 0.5*x2", n).unwrap();
        for p in 1..=n {
            let u = random_cochain(&cx, p - 1, seed);
            let v = random_cochain(&cx, p, seed.wrapping_add(1));
            let du = apply_d(&cx, &u);
            let lhs = mass(&cx, &phi, p).unwrap().inner(&du.values, &v.values);
            let delta = weighted_adjoint(&cx, &phi, p).unwrap();
            let mut dv = vec![0.0; cx.num_cells(p - 1)];
            pconvex::discrete::spmv(&delta, &v.values, &mut dv);
            let rhs = mass(&cx, &phi, p - 1).unwrap().inner(&u.values, &dv);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn minimal_solution_is_orthogonal_to_closed_forms(cells in 3u32..7, seed: u64) {
        let cx = cut_complex(2, cells, false);
        let phi = ScalarFieldExpr::parse("x1^2 + x2^2", 2).unwrap();
        let s = random_cochain(&cx, 0, seed);
        let f = apply_d(&cx, &s);
        let sol = minimal_solution(&cx, &f, &phi, &SolveOptions::default()).unwrap();
        let du = apply_d(&cx, &sol.u);
        let scale = f.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(du.values.iter().zip(&f.values).all(|(a, b)| (a - b).abs() <= 1e-8 * scale));
        let ones = vec![1.0; cx.num_cells(0)];
        let m = mass(&cx, &phi, 0).unwrap();
        let dot = m.inner(&sol.u.values, &ones);
        prop_assert!(dot.abs() <= 1e-8 * m.norm_sq(&sol.u.values).sqrt() * m.norm_sq(&ones).sqrt());
        let oracle = dense_minimal(&cx, &f, &phi);
        let diff: f64 = oracle.iter().zip(&sol.u.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-8 * oracle.norm());
    }
}

#[test]
fn two_forms_in_three_dimensions_match_the_oracle() {
    let cx = cut_complex(3, 4, false);
    let phi = ScalarFieldExpr::parse("x1^2 + x2^2 + x3^2", 3).unwrap();
    let f = apply_d(&cx, &random_cochain(&cx, 1, 5));
    let sol = minimal_solution(&cx, &f, &phi, &SolveOptions::default()).unwrap();
    let oracle = dense_minimal(&cx, &f, &phi);
    let diff: f64 = oracle.iter().zip(&sol.u.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(diff <= 1e-8 * oracle.norm(), "{diff} vs {}", oracle.norm());
}
