//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use pconvex::cli::config::ExperimentConfig;
use pconvex::convexity::{curvature_bounds_check, signature_count, CurvatureOperator};
use pconvex::discrete::{apply_d, CubicalComplex, GridDomain};
use pconvex::exterior::{
    apply_f, binomial, eigen_f, interior_product, inverse_bound_check, wedge, wedge_inverse_check, PointForm,
    QuadraticForm,
};
use pconvex::fieldexpr::{ConstantField, Field, ScalarFieldExpr};
use pconvex::solver::{minimal_solution, SolveOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<(bool, String), Box<dyn Error>>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Runs a shipped config in-process and returns the exit code and records.
fn run_config(name: &str) -> Result<(u8, Vec<Value>), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let outcome = pconvex::cli::run_path(&configs_dir().join(format!("{name}.ini")), dir.path(), None);
    let text = std::fs::read_to_string(dir.path().join("report.jsonl"))?;
    let records = text.lines().skip(1).map(serde_json::from_str).collect::<Result<Vec<Value>, _>>()?;
    Ok((outcome.exit_code, records))
}

fn with_check<'a>(records: &'a [Value], check: &str) -> Vec<&'a Value> {
    records.iter().filter(|r| r["check"] == check).collect()
}

fn num(r: &Value, key: &str) -> f64 {
    r[key].as_f64().unwrap_or(f64::NAN)
}

fn all_pass(records: &[Value]) -> bool {
    records.iter().all(|r| r.get("pass").and_then(Value::as_bool) != Some(false))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

fn algebra_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut pairing, mut adjoint, mut spectrum) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..=5);
        let p = rng.random_range(1..=n);
        let theta = random_symmetric(&mut rng, n);
        let g = random_form(&mut rng, n, p);
        let h = random_form(&mut rng, n, p);
        let fg = apply_f(&theta, &g)?;
        pairing = pairing.max((fg.dot(&h)? - expanded_pairing(&theta, &g, &h)).abs());
        adjoint = adjoint.max((fg.dot(&h)? - g.dot(&apply_f(&theta, &h)?)?).abs());
        let mut dense: Vec<f64> = dense_f(&theta, p).symmetric_eigenvalues().iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        let sums = pair_sum_spectrum(&theta, p);
        let got = eigen_f(&theta, p)?.values;
        for ((a, b), c) in got.iter().zip(&dense).zip(&sums) {
            spectrum = spectrum.max((a - b).abs()).max((a - c).abs());
        }
    }
    let pass = pairing <= 1e-10 && adjoint <= 1e-10 && spectrum <= 1e-10;
    Ok((pass, format!("max errors: pairing {pairing:.2e}, adjoint {adjoint:.2e}, spectrum {spectrum:.2e}")))
}

fn wedge_inverse_battery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let slack = 1e-10;
    let (mut failures, mut oracle, mut equality) = (0usize, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..=5);
        let p = rng.random_range(1..=n);
        let tau: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = rng.random_range(0.1..1.0);
        let theta = QuadraticForm::outer(&tau).add(&random_psd(&mut rng, n, 0.0).scaled(scale));
        let xi = random_form(&mut rng, n, p - 1);
        let f = apply_f(&theta, &random_form(&mut rng, n, p))?;
        let rec = wedge_inverse_check(&theta, &tau, &xi, &f, slack)?;
        if !(rec.membership_ok && rec.cross_ineq_ok && rec.self_ineq_ok) {
            failures += 1;
        }
        let tx = wedge(&PointForm::covector(&tau), &xi)?.to_vector();
        let pinv = dense_f(&theta, p).pseudo_inverse(1e-12)?;
        oracle = oracle.max(rel(rec.self_lhs, tx.dot(&(&pinv * &tx))));

        // θ = τ⊗τ with τ⌟ξ = 0 attains the self inequality.
        let rank_one = QuadraticForm::outer(&tau);
        let norm_sq: f64 = tau.iter().map(|t| t * t).sum();
        let free = interior_product(&tau, &wedge(&PointForm::covector(&tau), &xi)?)?.scaled(1.0 / norm_sq);
        let f1 = apply_f(&rank_one, &random_form(&mut rng, n, p))?;
        let rec = wedge_inverse_check(&rank_one, &tau, &free, &f1, slack)?;
        if !(rec.membership_ok && rec.cross_ineq_ok && rec.self_ineq_ok) {
            failures += 1;
        }
        equality = equality.max(rel(rec.self_lhs, rec.xi_norm_sq));
    }
    let pass = failures == 0 && oracle <= 1e-8 && equality <= 1e-10;
    Ok((pass, format!("violations {failures}, self term vs dense oracle {oracle:.2e}, equality gap {equality:.2e}")))
}

fn inverse_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut oracle, mut equality) = (0usize, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let n = rng.random_range(2..=5);
        let p = rng.random_range(1..=n);
        let theta = random_psd(&mut rng, n, 0.2);
        let g = random_form(&mut rng, n, p);
        let b = inverse_bound_check(&theta, &g)?;
        let gv = g.to_vector();
        let lhs = gv.dot(&dense_f(&theta, p).lu().solve(&gv).ok_or("singular F")?);
        let inv = QuadraticForm::new(theta.matrix().clone().try_inverse().ok_or("singular θ")?)?;
        let rhs = expanded_pairing(&inv, &g, &g) / (p * p) as f64;
        if !b.holds(1e-12) || lhs > rhs + 1e-12 {
            violations += 1;
        }
        oracle = oracle.max(rel(b.lhs, lhs)).max(rel(b.rhs, rhs));

        let c = rng.random_range(0.5..2.0);
        let e = inverse_bound_check(&QuadraticForm::identity(n).scaled(c), &g)?;
        equality = equality.max((e.lhs - e.rhs).abs());
    }
    let pass = violations == 0 && oracle <= 1e-10 && equality <= 1e-12;
    Ok((pass, format!("violations {violations}, oracle gap {oracle:.2e}, equality gap {equality:.2e}")))
}

fn curvature() -> Outcome {
    let mut wrong = Vec::new();
    for n in 1..=7 {
        for p in 1..=n {
            let got = signature_count(n, p);
            if got != p * (n - p) {
                wrong.push(format!("({n},{p})->{got}"));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut violations, mut equality) = (0usize, 0.0f64);
    for _ in 0..500 {
        let n = rng.random_range(2..=5);
        let p = rng.random_range(1..=n);
        let m = binomial(n, 2);
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let curv = CurvatureOperator::new(n, (&a + a.transpose()) * 0.5)?;
        let g = random_form(&mut rng, n, p);
        if !curvature_bounds_check(&curv, &g)?.holds(1e-10) {
            violations += 1;
        }
        let c = rng.random_range(-2.0..2.0);
        let b = curvature_bounds_check(&CurvatureOperator::scaled_identity(n, c), &g)?;
        equality = equality.max((b.term - b.lower).abs()).max((b.term - b.upper).abs());
    }
    let pass = wrong.is_empty() && violations == 0 && equality <= 1e-10;
    Ok((pass, format!("signature mismatches {wrong:?}, bound violations {violations}, equality gap {equality:.2e}")))
}

fn df_exponent() -> Outcome {
    let (_, disk) = run_config("df_disk")?;
    let found = with_check(&disk, "df_search");
    let disk_ok = found.len() == 1 && {
        let r = found[0];
        r["pass"] == true && num(r, "samples") >= 500.0 && num(r, "min_p_trace") > 0.0 && num(r, "eta") < 1.0
    };
    let (_, trend) = run_config("df_ellipse_trend")?;
    let per_shape = with_check(&trend, "df_search_ellipse");
    let t = with_check(&trend, "df_trend");
    let trend_ok = per_shape.iter().all(|r| r["pass"] == true) && t.len() == 1 && t[0]["pass"] == true;
    let detail = format!(
        "disk: K={} eta={} min trace {:.3} over {} samples; ellipse trend eccentricity {} K {} eta {}",
        found.first().map_or(Value::Null, |r| r["k"].clone()),
        found.first().map_or(Value::Null, |r| r["eta"].clone()),
        found.first().map_or(f64::NAN, |r| num(r, "min_p_trace")),
        found.first().map_or(Value::Null, |r| r["samples"].clone()),
        t.first().map_or(Value::Null, |r| r["eccentricity"].clone()),
        t.first().map_or(Value::Null, |r| r["k"].clone()),
        t.first().map_or(Value::Null, |r| r["eta"].clone()),
    );
    Ok((disk_ok && trend_ok, detail))
}

fn kmh() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["kmh_2d", "kmh_3d"] {
        let (_, records) = run_config(name)?;
        let rungs = with_check(&records, "kmh_rung");
        let res: Vec<f64> = rungs.iter().map(|r| num(r, "residual")).collect();
        let factors: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
        pass &= res.len() == 3 && factors.iter().all(|f| *f >= 1.5);
        if name == "kmh_2d" {
            let last = rungs.last().ok_or("no rungs")?;
            pass &= num(last, "h") == 1.0 / 64.0 && num(last, "residual") <= 2e-2;
        }
        parts.push(format!("{name} residuals {:?} factors {factors:.2?}", res.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>()));
    }
    Ok((pass, parts.join("; ")))
}

fn bound_records(records: &[Value], estimate: &str) -> Vec<Value> {
    with_check(records, "bound").into_iter().filter(|r| r["estimate"] == estimate).cloned().collect()
}

/// Ratio recomputed from the record's sides against an independently supplied constant.
fn within(r: &Value, constant: f64, slack: f64) -> bool {
    (num(r, "constant") - constant).abs() <= 1e-12 * constant && num(r, "lhs") / num(r, "rhs") <= constant * (1.0 + slack)
}

fn hormander() -> Outcome {
    let (_, records) = run_config("hormander")?;
    let b = bound_records(&records, "hormander");
    let ratios: Vec<f64> = b.iter().map(|r| num(r, "lhs") / num(r, "rhs")).collect();
    let finest = b.last().ok_or("no bound records")?;
    let pass = num(finest, "h") == 1.0 / 64.0
        && ratios.last().is_some_and(|r| *r <= 1.05)
        && ratios.windows(2).all(|w| w[1] <= w[0])
        && all_pass(&records);
    Ok((pass, format!("ratios {ratios:.4?} at h = 1/16, 1/32, 1/64")))
}

fn berndtsson_diameter() -> Outcome {
    let (_, records) = run_config("berndtsson_diameter")?;
    let mut pass = all_pass(&records);
    let mut alphas = Vec::new();
    for r in bound_records(&records, "berndtsson") {
        let a = num(&r, "alpha");
        alphas.push(a);
        pass &= within(&r, 4.0 / ((1.0 - a) * (1.0 - a)), 0.05);
    }
    for a in [0.0, 0.3, 0.6] {
        pass &= alphas.contains(&a);
    }
    let diameter = bound_records(&records, "diameter");
    pass &= !diameter.is_empty() && diameter.iter().all(|r| within(r, 2.0 * 2f64.sqrt(), 0.05));
    let apriori = with_check(&records, "apriori_sampled");
    pass &= !apriori.is_empty();
    Ok((
        pass,
        format!(
            "{} Berndtsson ratios at alpha {alphas:?}, {} diameter ratios, {} sampled a priori checks",
            alphas.len(),
            diameter.len(),
            apriori.len()
        ),
    ))
}

fn twisted_estimates() -> Outcome {
    let mut pass = true;
    let mut count = 0;
    let constants: [(&str, &str, fn(f64) -> f64); 4] = [
        ("minimal_twisted", "minimal", |a| (1.0 + a) / (1.0 - a)),
        ("minimal_scaled", "minimal_scaled", |a| 1.0 / (a * (1.0 - a.sqrt()).powi(2))),
        ("nonpsh", "nonpsh", |a| (2.0 + a) / (2.0 - a)),
        ("nonpsh", "nonpsh_constant", |a| 4.0 / ((2.0 - a) * (2.0 - a))),
    ];
    for (config, estimate, constant) in constants {
        let (_, records) = run_config(config)?;
        let b = bound_records(&records, estimate);
        pass &= !b.is_empty() && all_pass(&records);
        for r in &b {
            pass &= within(r, constant(num(r, "alpha")), 0.05);
            count += 1;
        }
    }
    let (_, plain) = run_config("hormander")?;
    let (_, degenerate) = run_config("nonpsh_degenerate")?;
    let reference = bound_records(&plain, "hormander");
    let collapsed = bound_records(&degenerate, "nonpsh");
    let identical = reference.len() == collapsed.len()
        && reference.iter().zip(&collapsed).all(|(a, b)| {
            ["h", "lhs", "rhs"].iter().all(|k| num(a, k).to_bits() == num(b, k).to_bits())
        });
    Ok((
        pass && identical,
        format!("{count} ratios within constant*(1.05); degenerate twist bit-identical to Hormander: {identical}"),
    ))
}

fn cohomology() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, expected) in [
        ("cohomology_box", vec![1u64, 0, 0]),
        ("cohomology_annulus", vec![1, 1, 0]),
        ("cohomology_torus", vec![1, 1, 0, 0]),
    ] {
        let (_, records) = run_config(name)?;
        let ranks = with_check(&records, "cohomology_rank");
        let weights: std::collections::BTreeSet<String> = ranks.iter().map(|r| r["weight"].to_string()).collect();
        let spacings: std::collections::BTreeSet<u64> = ranks.iter().map(|r| num(r, "h").to_bits()).collect();
        let exact = ranks.iter().all(|r| {
            let q = r["degree"].as_u64().unwrap_or(u64::MAX) as usize;
            expected.get(q) == r["rank"].as_u64().as_ref()
        });
        let vanishing = with_check(&records, "rank_vanishing");
        pass &= exact && weights.len() >= 4 && spacings.len() >= 2 && vanishing.iter().all(|r| r["pass"] == true);
        pass &= all_pass(&records) && !vanishing.is_empty();
        parts.push(format!("{name} ranks {expected:?} over {} weights and {} spacings", weights.len(), spacings.len()));
    }
    Ok((pass, parts.join("; ")))
}

fn prekopa() -> Outcome {
    let (_, records) = run_config("prekopa")?;
    let r = with_check(&records, "prekopa");
    let second: Vec<f64> = r
        .first()
        .and_then(|r| r["samples"].as_array())
        .map(|s| s.iter().flat_map(|x| x["second_differences"].as_array().cloned().unwrap_or_default()).filter_map(|v| v.as_f64()).collect())
        .unwrap_or_default();
    let radial = !second.is_empty() && second.iter().all(|s| (s - 2.0).abs() <= 1e-3);

    let (_, records) = run_config("prekopa_quadratics")?;
    let quads = with_check(&records, "prekopa_quadratic");
    let (mut worst, mut lowest) = (0.0f64, f64::INFINITY);
    for q in &quads {
        let src = q["phi"].as_str().ok_or("missing phi")?;
        let phi = ScalarFieldExpr::parse(src, 2)?;
        let hess = phi.eval_jet2(&[0.0, 0.0])?.hess;
        let schur = schur_complement(&hess, 1)[(0, 0)];
        worst = worst.max((num(q, "min_second_difference") - schur).abs());
        lowest = lowest.min(num(q, "min_second_difference"));
    }
    let pass = radial && quads.len() == 20 && worst <= 1e-4 && lowest >= -1e-6;
    Ok((
        pass,
        format!(
            "radial second differences within {:.2e} of 2; {} quadratics, max gap to Schur complement {worst:.2e}, min {lowest:.3}",
            second.iter().map(|s| (s - 2.0).abs()).fold(0.0, f64::max),
            quads.len()
        ),
    ))
}

fn solver_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut cases, mut worst) = (0usize, 0.0f64);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(configs_dir())?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    paths.sort();
    for path in paths {
        let cfg = ExperimentConfig::parse(&std::fs::read_to_string(&path)?)?;
        let Some(dom) = &cfg.domain else { continue };
        let phi: Box<dyn Field> = match cfg.weight("phi").or(cfg.weight("base")) {
            Some(w) => Box::new(w.clone()),
            None => Box::new(ConstantField { n: dom.dim(), value: 0.0 }),
        };
        let r = dom.r.clone().map(|r| Arc::new(r) as Arc<dyn Field>);
        for &h in &dom.ladder {
            let cx = CubicalComplex::build(&GridDomain::new(dom.lo.clone(), dom.hi.clone(), h, r.clone())?)?;
            if cx.total_cells() > 2000 {
                continue;
            }
            for p in 1..=cx.dim() {
                let v: Vec<f64> = (0..cx.num_cells(p - 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
                let f = apply_d(&cx, &pconvex::discrete::Cochain { p: p - 1, values: v });
                if f.values.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let got = minimal_solution(&cx, &f, phi.as_ref(), &SolveOptions::default())?;
                let want = dense_minimal(&cx, &f, phi.as_ref());
                let diff = (DVector::from_column_slice(&got.u.values) - &want).norm() / want.norm();
                worst = worst.max(diff);
                cases += 1;
            }
        }
    }
    Ok((cases > 0 && worst <= 1e-8, format!("{cases} complexes and degrees, max relative gap {worst:.2e}")))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_pconvex");
    let mut pass = true;
    let names = ["algebra_battery", "cohomology_box", "berndtsson_diameter", "prekopa_quadratics"];
    for name in names {
        let mut bodies = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir()?;
            let status = Command::new(bin)
                .arg("run")
                .arg(configs_dir().join(format!("{name}.ini")))
                .arg("--out")
                .arg(dir.path())
                .status()?;
            let text = std::fs::read_to_string(dir.path().join("report.jsonl"))?;
            bodies.push((status.code(), text.lines().skip(1).collect::<Vec<_>>().join("\n")));
        }
        pass &= bodies[0] == bodies[1] && !bodies[0].1.is_empty();
    }
    Ok((pass, format!("two runs each of {names:?}")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("algebra identities", algebra_identities),
        ("wedge inverse battery", wedge_inverse_battery),
        ("inverse bound", inverse_bound),
        ("curvature term", curvature),
        ("Diederich-Fornaess search", df_exponent),
        ("KMH residual", kmh),
        ("Hormander ratio", hormander),
        ("Berndtsson and diameter", berndtsson_diameter),
        ("twisted estimates", twisted_estimates),
        ("cohomology ranks", cohomology),
        ("Prekopa marginals", prekopa),
        ("solver vs dense oracle", solver_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let status = if pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2}: {status} {name}: {detail} ({:.1}s)", k + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
