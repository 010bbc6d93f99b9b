//! Task bodies. Each task appends records to a [`Run`] and may attach a
//! convergence series and extra files.

use std::sync::Arc;

use log::info;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, Task};
use crate::convexity::{
    boundary_p_convexity, curvature_bounds_check, field_p_psh_report, signature_count, ConvexityError,
    CurvatureOperator, FieldRegionReport, Mode, Tolerances, Verdict,
};
use crate::discrete::{apply_d, kmh_residual, mass, sample_cochain, Cochain, CubicalComplex, DiscreteError, GridDomain};
use crate::exterior::{
    apply_f, binomial, eigen_f, f_matrix, interior_product, inverse_bound_check, wedge, wedge_inverse_check,
    ExteriorError, PointForm, QuadraticForm,
};
use crate::fieldexpr::{ConstantField, ExprError, Field, ScalarFieldExpr, SmoothBump};
use crate::solver::{
    berndtsson_report, cohomology_rank, diameter_report, hormander_report, minimal_estimate_report,
    minimal_estimate_scaled_report, minimal_solution, nonpsh_constant_report, nonpsh_report, prekopa_check,
    BoundReport, MarginalSetup, ReportOptions, SolveOptions, SolverError,
};
use crate::weights::{df_samples, df_search, lattice, WeightError};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Failed(String),
}

macro_rules! failed_from {
    ($($t:ty),*) => {$(
        impl From<$t> for TaskError {
            fn from(e: $t) -> Self {
                TaskError::Failed(e.to_string())
            }
        }
    )*};
}
failed_from!(SolverError, ConvexityError, WeightError, DiscreteError, ExteriorError, ExprError);

/// One line of `report.jsonl`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub check: String,
    /// `None` for informational records.
    pub pass: Option<bool>,
    pub fields: Map<String, Value>,
}

impl Record {
    pub fn info(check: &str, fields: Value) -> Self {
        Record { check: check.into(), pass: None, fields: object(fields) }
    }

    pub fn check(check: &str, pass: bool, fields: Value) -> Self {
        Record { check: check.into(), pass: Some(pass), fields: object(fields) }
    }

    pub fn to_json(&self) -> Value {
        let mut m = self.fields.clone();
        m.insert("check".into(), Value::String(self.check.clone()));
        if let Some(p) = self.pass {
            m.insert("pass".into(), Value::Bool(p));
        }
        Value::Object(m)
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    }
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("plain data serializes")
}

/// Columns of `series.csv`; the first column is the abscissa of the plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `(title, y label)` for a log-log plot of every column against the first.
    pub plot: Option<(String, String)>,
}

impl Series {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Mutable state of one task execution.
pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub rng: ChaCha8Rng,
    pub records: Vec<Record>,
    pub series: Option<Series>,
    /// Extra output files, `(name, contents)`.
    pub files: Vec<(String, String)>,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a ExperimentConfig, rng: ChaCha8Rng) -> Self {
        Run { cfg, rng, records: Vec::new(), series: None, files: Vec::new() }
    }

    fn push(&mut self, r: Record) {
        self.records.push(r);
    }
}

pub fn execute(run: &mut Run<'_>) -> Result<(), TaskError> {
    match run.cfg.task {
        Task::CheckPsh => check_psh(run),
        Task::BoundaryConvexity => boundary_convexity(run),
        Task::DfSearch => df_search_task(run),
        Task::Kmh => kmh(run),
        Task::Solve => solve(run),
        Task::Bounds => bounds(run),
        Task::Cohomology => cohomology(run),
        Task::Prekopa => prekopa(run),
        Task::AlgebraBattery => algebra_battery(run),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn primary_weight(cfg: &ExperimentConfig) -> Result<&ScalarFieldExpr, ConfigError> {
    cfg.weight("phi").or_else(|| cfg.weight("base")).map(Ok).unwrap_or_else(|| cfg.require_weight("phi"))
}

fn domain_at(cfg: &ExperimentConfig, h: f64) -> Result<GridDomain, ConfigError> {
    let d = cfg.require_domain();
    let r = d.r.clone().map(|r| Arc::new(r) as Arc<dyn Field>);
    GridDomain::new(d.lo.clone(), d.hi.clone(), h, r).map_err(|e| ConfigError {
        line: None,
        field: "domain.h".into(),
        message: e.to_string(),
    })
}

/// Grid domains for every rung, validated before any work starts.
fn ladder_domains(cfg: &ExperimentConfig) -> Result<Vec<GridDomain>, ConfigError> {
    cfg.require_ladder()?.iter().map(|&h| domain_at(cfg, h)).collect()
}

fn sample_points(cfg: &ExperimentConfig, per_axis: usize) -> Result<Vec<Vec<f64>>, TaskError> {
    let d = cfg.require_domain();
    let mut out = Vec::new();
    for x in lattice(&d.lo, &d.hi, per_axis) {
        match &d.r {
            Some(r) if r.eval(&x)? >= 0.0 => {}
            _ => out.push(x),
        }
    }
    if out.is_empty() {
        return Err(TaskError::Failed("no sample points inside the domain".into()));
    }
    Ok(out)
}

/// Newton projection onto `{r = 0}`.
fn project_to_boundary(r: &dyn Field, start: &[f64]) -> Result<Option<Vec<f64>>, ExprError> {
    let mut x = start.to_vec();
    for _ in 0..60 {
        let j = r.jet(&x)?;
        let g2 = j.grad.norm_squared();
        if g2 < 1e-20 {
            return Ok(None);
        }
        if j.value.abs() <= 1e-13 * g2.sqrt() {
            return Ok(Some(x));
        }
        for (xi, gi) in x.iter_mut().zip(j.grad.iter()) {
            *xi -= j.value * gi / g2;
        }
    }
    Ok(None)
}

fn boundary_points(cfg: &ExperimentConfig, r: &ScalarFieldExpr, per_axis: usize) -> Result<Vec<Vec<f64>>, TaskError> {
    let d = cfg.require_domain();
    let mut out = Vec::new();
    for x in lattice(&d.lo, &d.hi, per_axis) {
        if let Some(y) = project_to_boundary(r, &x)? {
            let inside = y.iter().zip(d.lo.iter().zip(&d.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b);
            if inside {
                out.push(y);
            }
        }
    }
    if out.is_empty() {
        return Err(TaskError::Failed("Newton projection found no boundary points".into()));
    }
    Ok(out)
}

fn mode(cfg: &ExperimentConfig) -> Result<Mode, ConfigError> {
    match cfg.text("mode").unwrap_or("semi") {
        "semi" => Ok(Mode::Semi),
        "strict" => Ok(Mode::Strict),
        other => Err(cfg.task_error("mode", format!("expected strict or semi, got `{other}`"))),
    }
}

fn expected_verdict(cfg: &ExperimentConfig) -> Result<Option<Verdict>, ConfigError> {
    match cfg.text("expected") {
        None => Ok(None),
        Some("fail") => Ok(Some(Verdict::Fail)),
        Some("semi") => Ok(Some(Verdict::Semi)),
        Some("strict") => Ok(Some(Verdict::Strict)),
        Some(other) => Err(cfg.task_error("expected", format!("expected fail, semi or strict, got `{other}`"))),
    }
}

fn region_record(name: &str, rep: &FieldRegionReport, pass: bool) -> Record {
    let worst = &rep.reports[rep.worst];
    Record::check(
        name,
        pass,
        json!({
            "p": worst.p,
            "samples": rep.samples.len(),
            "verdict": rep.verdict,
            "min_p_trace": worst.min_p_trace,
            "worst_sample": rep.samples[rep.worst],
            "violations": rep.reports.iter().filter(|r| r.verdict == Verdict::Fail).count(),
        }),
    )
}

fn region_pass(cfg: &ExperimentConfig, rep: &FieldRegionReport) -> Result<bool, ConfigError> {
    Ok(match expected_verdict(cfg)? {
        Some(v) => rep.verdict == v,
        None => rep.reports.iter().all(|r| r.satisfies(mode(cfg).unwrap_or(Mode::Semi))),
    })
}

/// `f = d s` with `s` a bump on one coefficient of a (p−1)-form.
fn exact_source(cfg: &ExperimentConfig, cx: &CubicalComplex, p: usize) -> Result<Cochain, TaskError> {
    let s = bump_form(cfg, p - 1)?;
    let coeffs: Vec<&dyn Field> = s.iter().map(|f| f.as_ref()).collect();
    Ok(apply_d(cx, &sample_cochain(cx, p - 1, &coeffs)?))
}

/// Coefficient fields of a p-form with one bump component, the rest zero.
fn bump_form(cfg: &ExperimentConfig, p: usize) -> Result<Vec<Box<dyn Field>>, TaskError> {
    let d = cfg.require_domain();
    let n = d.dim();
    let center = match cfg.list("center")? {
        Some(c) if c.len() == n => c,
        Some(_) => return Err(cfg.task_error("center", format!("expected {n} coordinates")).into()),
        None => d.center(),
    };
    let side = d.lo.iter().zip(&d.hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    let radius = cfg.number_or("radius", 0.25 * side)?;
    let amplitude = cfg.number_or("amplitude", 1.0)?;
    let len = binomial(n, p);
    let component = cfg.count_or("component", 0)?;
    if component >= len {
        return Err(cfg.task_error("component", format!("a {p}-form has {len} components")).into());
    }
    let bump = SmoothBump::new(center, radius, amplitude).map_err(|e| cfg.task_error("radius", e.to_string()))?;
    let mut out: Vec<Box<dyn Field>> = Vec::with_capacity(len);
    let mut bump = Some(bump);
    for k in 0..len {
        if k == component {
            out.push(Box::new(bump.take().expect("single bump")));
        } else {
            out.push(Box::new(ConstantField { n, value: 0.0 }));
        }
    }
    Ok(out)
}

fn require_degree(cfg: &ExperimentConfig, lo: usize) -> Result<usize, ConfigError> {
    let p = cfg.require_p()?;
    if p < lo {
        return Err(ConfigError { line: None, field: "experiment.p".into(), message: format!("task {} needs p >= {lo}", cfg.task) });
    }
    Ok(p)
}

fn solve_options(cfg: &ExperimentConfig) -> Result<SolveOptions, ConfigError> {
    let d = SolveOptions::default();
    Ok(SolveOptions { tol: cfg.number_or("cg_tol", d.tol)?, closed_tol: cfg.number_or("closed_tol", d.closed_tol)?, max_iter: None })
}

fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

fn check_psh(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let p = require_degree(cfg, 1)?;
    let phi = primary_weight(cfg)?;
    mode(cfg)?;
    let samples = sample_points(cfg, cfg.count_or("samples", 8)?)?;
    let rep = field_p_psh_report(phi, &samples, p, &Tolerances::default())?;
    let pass = region_pass(cfg, &rep)?;
    run.push(region_record("p_psh", &rep, pass));
    Ok(())
}

fn boundary_convexity(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let p = require_degree(cfg, 1)?;
    if p >= cfg.n {
        return Err(ConfigError { line: None, field: "experiment.p".into(), message: format!("boundary convexity needs p < n = {}", cfg.n) }.into());
    }
    let r = cfg.require_r()?;
    mode(cfg)?;
    let pts = boundary_points(cfg, r, cfg.count_or("samples", 16)?)?;
    let rep = boundary_p_convexity(r, &pts, p, &Tolerances::default())?;
    let pass = region_pass(cfg, &rep)?;
    run.push(region_record("boundary_p_convexity", &rep, pass));
    Ok(())
}

const DEFAULT_K_GRID: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 2.0, 5.0];
const DEFAULT_ETA_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 0.99];

fn df_search_task(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let p = require_degree(cfg, 1)?;
    let phi = primary_weight(cfg)?;
    let d = cfg.require_domain();
    let k_grid = cfg.list("k_grid")?.unwrap_or(DEFAULT_K_GRID.to_vec());
    let eta_grid = cfg.list("eta_grid")?.unwrap_or(DEFAULT_ETA_GRID.to_vec());
    let per_axis = cfg.count_or("samples", 24)?;
    let delta = cfg.number("delta")?;
    let min_samples = cfg.count_or("min_samples", 1)?;

    let search = |r: &ScalarFieldExpr| -> Result<(usize, crate::weights::DfResult), TaskError> {
        let samples = df_samples(r, &d.lo, &d.hi, per_axis, delta)?;
        let res = df_search(r, phi, &samples, p, &k_grid, &eta_grid)?;
        Ok((samples.len(), res))
    };

    if let Some(r) = &d.r {
        let (count, res) = search(r)?;
        let pass = res.feasible && count >= min_samples;
        run.push(Record::check(
            "df_search",
            pass,
            json!({"k": res.k, "eta": res.eta, "min_p_trace": res.min_p_trace_over_grid, "samples": count,
                   "feasible_pairs": res.feasible_pairs().count(), "grid_pairs": res.table.len()}),
        ));
        run.series = Some(Series {
            columns: vec!["k".into(), "eta".into(), "min_p_trace".into()],
            rows: res.table.iter().map(|t| vec![t.0, t.1, t.2]).collect(),
            plot: None,
        });
    }

    if let Some(minor) = cfg.list("ellipse_b")? {
        if cfg.n != 2 {
            return Err(cfg.task_error("ellipse_b", "the ellipse family is two-dimensional").into());
        }
        let mut found = Vec::with_capacity(minor.len());
        for &b in &minor {
            if !(b > 0.0 && b <= 1.0) {
                return Err(cfg.task_error("ellipse_b", "semi-minor axes must lie in (0, 1]").into());
            }
            let r = ScalarFieldExpr::parse(&format!("x1^2 + x2^2/{} - 1", b * b), 2)?;
            let (count, res) = search(&r)?;
            let eccentricity = (1.0 - b * b).sqrt();
            run.push(Record::check(
                "df_search_ellipse",
                res.feasible && count >= min_samples,
                json!({"b": b, "eccentricity": eccentricity, "k": res.k, "eta": res.eta,
                       "min_p_trace": res.min_p_trace_over_grid, "samples": count}),
            ));
            found.push((eccentricity, res.k, res.eta));
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        let etas: Vec<f64> = found.iter().map(|f| f.2).collect();
        let ks: Vec<f64> = found.iter().map(|f| -f.1).collect();
        let strict = found.len() >= 2 && etas[etas.len() - 1] < etas[0] && found[found.len() - 1].1 > found[0].1;
        let trend = non_increasing(&etas) && non_increasing(&ks) && strict;
        run.push(Record::check(
            "df_trend",
            trend,
            json!({"eccentricity": found.iter().map(|f| f.0).collect::<Vec<_>>(),
                   "k": found.iter().map(|f| f.1).collect::<Vec<_>>(), "eta": etas}),
        ));
    }
    if d.r.is_none() && cfg.list("ellipse_b")?.is_none() {
        return Err(ConfigError { line: None, field: "domain.r".into(), message: "df-search needs [domain] r or [task] ellipse_b".into() }.into());
    }
    Ok(())
}

fn kmh(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let p = require_degree(cfg, 1)?;
    let phi = primary_weight(cfg)?;
    let doms = ladder_domains(cfg)?;
    let g = bump_form(cfg, p)?;
    let coeffs: Vec<&dyn Field> = g.iter().map(|f| f.as_ref()).collect();
    let min_factor = cfg.number_or("min_factor", 1.5)?;
    let max_final = cfg.number("max_final")?;
    let mut residuals = Vec::with_capacity(doms.len());
    for dom in &doms {
        let rec = kmh_residual(&coeffs, p, phi, dom)?;
        info!("kmh h = {}: residual {:.3e}", dom.h, rec.residual);
        run.push(Record::info(
            "kmh_rung",
            json!({"h": rec.h, "lhs": rec.lhs, "rhs_gradient_term": rec.rhs_gradient_term,
                   "rhs_f_term": rec.rhs_f_term, "residual": rec.residual}),
        ));
        residuals.push((dom.h, rec.residual));
    }
    for w in residuals.windows(2) {
        let factor = w[0].1 / w[1].1;
        run.push(Record::check(
            "kmh_reduction",
            factor >= min_factor,
            json!({"h_coarse": w[0].0, "h_fine": w[1].0, "factor": factor, "min_factor": min_factor}),
        ));
    }
    if let Some(bound) = max_final {
        let (h, last) = *residuals.last().expect("non-empty ladder");
        run.push(Record::check("kmh_final", last <= bound, json!({"h": h, "residual": last, "bound": bound})));
    }
    run.series = Some(Series {
        columns: vec!["h".into(), "residual".into()],
        rows: residuals.iter().map(|&(h, r)| vec![h, r]).collect(),
        plot: Some(("energy identity residual".into(), "relative residual".into())),
    });
    Ok(())
}

fn solve(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let p = require_degree(cfg, 1)?;
    let phi = primary_weight(cfg)?;
    let doms = ladder_domains(cfg)?;
    let opts = solve_options(cfg)?;
    let residual_tol = cfg.number_or("residual_tol", 1e-8)?;
    let mut rows = Vec::with_capacity(doms.len());
    for dom in &doms {
        let cx = CubicalComplex::build(dom)?;
        let f = exact_source(cfg, &cx, p)?;
        let sol = minimal_solution(&cx, &f, phi, &opts)?;
        let norm_sq = mass(&cx, phi, p - 1)?.norm_sq(&sol.u.values);
        info!("solve h = {}: {} iterations, residual {:.3e}", dom.h, sol.iterations, sol.residual);
        run.push(Record::check(
            "minimal_solution",
            sol.residual <= residual_tol,
            json!({"h": dom.h, "cells": cx.total_cells(), "iterations": sol.iterations, "residual": sol.residual,
                   "harmonic_obstruction": sol.harmonic_obstruction, "norm_sq_u": norm_sq}),
        ));
        rows.push(vec![dom.h, norm_sq]);
        if std::ptr::eq(dom, doms.last().expect("non-empty ladder")) {
            run.files.push(("u.csv".into(), sol.u.to_csv(&cx)));
        }
    }
    run.series = Some(Series {
        columns: vec!["h".into(), "norm_sq_u".into()],
        rows,
        plot: Some(("minimal solution norm".into(), "weighted norm squared".into())),
    });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Estimate {
    Hormander,
    Berndtsson,
    Diameter,
    Minimal,
    MinimalScaled,
    Nonpsh,
    NonpshConstant,
}

impl Estimate {
    const ALL: [(&'static str, Estimate); 7] = [
        ("hormander", Estimate::Hormander),
        ("berndtsson", Estimate::Berndtsson),
        ("diameter", Estimate::Diameter),
        ("minimal", Estimate::Minimal),
        ("minimal_scaled", Estimate::MinimalScaled),
        ("nonpsh", Estimate::Nonpsh),
        ("nonpsh_constant", Estimate::NonpshConstant),
    ];

    fn parse(s: &str) -> Option<Estimate> {
        Estimate::ALL.iter().find(|(n, _)| *n == s).map(|(_, e)| *e)
    }

    fn name(self) -> &'static str {
        Estimate::ALL.iter().find(|(_, e)| *e == self).expect("listed").0
    }

    fn uses_alpha(self) -> bool {
        !matches!(self, Estimate::Hormander | Estimate::Diameter)
    }
}

fn bounds(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let p = require_degree(cfg, 1)?;
    let phi = primary_weight(cfg)?;
    let doms = ladder_domains(cfg)?;
    let names = cfg.text("estimate").unwrap_or("hormander");
    let estimates: Vec<Estimate> = names
        .split(',')
        .map(|s| {
            Estimate::parse(s.trim()).ok_or_else(|| {
                let all: Vec<&str> = Estimate::ALL.iter().map(|e| e.0).collect();
                cfg.task_error("estimate", format!("unknown estimate `{}`; expected one of {}", s.trim(), all.join(", ")))
            })
        })
        .collect::<Result<_, _>>()?;
    let alphas = cfg.list("alpha")?.unwrap_or_else(|| vec![0.0]);
    let d = cfg.require_domain();
    let box_diameter = d.lo.iter().zip(&d.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    let diameter = cfg.number_or("diameter", box_diameter)?;
    let zero = ConstantField { n: cfg.n, value: 0.0 };
    let psi: &dyn Field = match cfg.weight("psi") {
        Some(w) => w,
        None if estimates.iter().any(|e| !matches!(e, Estimate::Hormander | Estimate::Diameter)) => {
            return Err(cfg.require_weight("psi").unwrap_err().into())
        }
        None => &zero,
    };
    let omega: &dyn Field = match cfg.weight("omega") {
        Some(w) => w,
        None if estimates.iter().any(|e| matches!(e, Estimate::Minimal | Estimate::Nonpsh)) => {
            return Err(cfg.require_weight("omega").unwrap_err().into())
        }
        None => &zero,
    };
    let opts = ReportOptions {
        solve: solve_options(cfg)?,
        slack: cfg.number_or("slack", 0.05)?,
        seed: run.rng.next_u64(),
        apriori_samples: cfg.count_or("apriori_samples", 4)?,
        ..ReportOptions::default()
    };
    let monotone = cfg.flag_or("monotone", false)?;
    let identical = match cfg.text("identical") {
        None => None,
        Some(text) => {
            let pair: Vec<Estimate> = text.split(',').filter_map(|s| Estimate::parse(s.trim())).collect();
            if pair.len() != 2 || !pair.iter().all(|e| estimates.contains(e)) {
                return Err(cfg.task_error("identical", "expected two estimates from the `estimate` list").into());
            }
            Some((pair[0], pair[1]))
        }
    };

    let mut columns: Vec<(Estimate, f64)> = Vec::new();
    for &e in &estimates {
        if e.uses_alpha() {
            columns.extend(alphas.iter().map(|&a| (e, a)));
        } else {
            columns.push((e, 0.0));
        }
    }
    let mut rows = Vec::with_capacity(doms.len());
    for dom in &doms {
        let cx = CubicalComplex::build(dom)?;
        let f = exact_source(cfg, &cx, p)?;
        let mut row = vec![dom.h];
        let mut ratios = Vec::with_capacity(columns.len());
        for &(e, alpha) in &columns {
            let report: BoundReport = match e {
                Estimate::Hormander => hormander_report(&cx, &f, phi, &opts)?,
                Estimate::Berndtsson => {
                    let b = berndtsson_report(&cx, &f, phi, psi, alpha, &opts)?;
                    let mut v = to_value(&b.apriori);
                    v["alpha"] = json!(alpha);
                    run.push(Record::check("apriori_sampled", b.apriori.pass, v));
                    b.bound
                }
                Estimate::Diameter => diameter_report(&cx, &f, phi, diameter, &opts)?,
                Estimate::Minimal => minimal_estimate_report(&cx, &f, phi, psi, omega, alpha, &opts)?,
                Estimate::MinimalScaled => minimal_estimate_scaled_report(&cx, &f, phi, psi, alpha, &opts)?,
                Estimate::Nonpsh => nonpsh_report(&cx, &f, phi, psi, omega, alpha, &opts)?,
                Estimate::NonpshConstant => nonpsh_constant_report(&cx, &f, phi, psi, alpha, &opts)?,
            };
            info!("{} h = {} alpha = {alpha}: ratio {:.4e} / {:.4e}", e.name(), dom.h, report.ratio, report.constant);
            let mut v = to_value(&report);
            v["estimate"] = json!(e.name());
            if e.uses_alpha() {
                v["alpha"] = json!(alpha);
            }
            run.push(Record::check("bound", report.pass, v));
            row.push(report.ratio);
            ratios.push(report.ratio);
        }
        if let Some((a, b)) = identical {
            let ia = columns.iter().position(|c| c.0 == a).expect("listed");
            let ib = columns.iter().position(|c| c.0 == b).expect("listed");
            run.push(Record::check(
                "identical_ratio",
                ratios[ia].to_bits() == ratios[ib].to_bits(),
                json!({"h": dom.h, "first": a.name(), "second": b.name(), "ratio_first": ratios[ia], "ratio_second": ratios[ib]}),
            ));
        }
        rows.push(row);
    }
    if monotone {
        for (k, &(e, alpha)) in columns.iter().enumerate() {
            let series: Vec<f64> = rows.iter().map(|r| r[k + 1]).collect();
            run.push(Record::check(
                "refinement_monotone",
                non_increasing(&series),
                json!({"estimate": e.name(), "alpha": alpha, "ratios": series}),
            ));
        }
    }
    let mut names = vec!["h".to_string()];
    names.extend(columns.iter().map(|(e, a)| if e.uses_alpha() { format!("{}_alpha_{a}", e.name()) } else { e.name().to_string() }));
    run.series = Some(Series { columns: names, rows, plot: Some(("bound ratios".into(), "lhs / rhs".into())) });
    Ok(())
}

/// `Σ aᵢ(xᵢ − cᵢ)²` with `aᵢ ∈ [0, 1)`.
fn random_quadratic_weight(rng: &mut ChaCha8Rng, center: &[f64]) -> Result<ScalarFieldExpr, ExprError> {
    let terms: Vec<String> = center
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}*(x{} - {c})^2", rng.random_range(0.0..1.0), i + 1))
        .collect();
    ScalarFieldExpr::parse(&terms.join(" + "), center.len())
}

fn cohomology(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let n = cfg.n;
    let doms = ladder_domains(cfg)?;
    let degrees: Vec<usize> = match cfg.list("degrees")? {
        None => (0..=n).collect(),
        Some(v) => v
            .iter()
            .map(|&q| {
                if q.fract() == 0.0 && q >= 0.0 && (q as usize) <= n {
                    Ok(q as usize)
                } else {
                    Err(cfg.task_error("degrees", format!("degrees must be integers in [0, {n}]")))
                }
            })
            .collect::<Result<_, _>>()?,
    };
    let expected = cfg.list("expected")?;
    if let Some(e) = &expected {
        if e.len() != degrees.len() {
            return Err(cfg.task_error("expected", "one expected rank per degree").into());
        }
    }
    let opts = solve_options(cfg)?;
    let zero = ScalarFieldExpr::parse("0", n)?;
    let base = cfg.weight("phi").cloned().unwrap_or(zero);
    let center = cfg.require_domain().center();
    let mut weights = vec![base];
    for _ in 0..cfg.count_or("random_weights", 3)? {
        weights.push(random_quadratic_weight(&mut run.rng, &center)?);
    }
    let probe_seed = run.rng.next_u64();

    // Every weight on the coarsest rung, the base weight on the others.
    let mut ranks: Vec<Vec<usize>> = vec![Vec::new(); degrees.len()];
    for (rung, dom) in doms.iter().enumerate() {
        let cx = CubicalComplex::build(dom)?;
        let active = if rung == 0 { &weights[..] } else { &weights[..1] };
        for (w_index, w) in active.iter().enumerate() {
            for (k, &q) in degrees.iter().enumerate() {
                let space = cohomology_rank(&cx, q, w, probe_seed, &opts)?;
                info!("h = {} weight {w_index} degree {q}: rank {}", dom.h, space.rank);
                let head: Vec<f64> = space.spectrum.iter().take(space.rank + 2).copied().collect();
                run.push(Record::info(
                    "cohomology_rank",
                    json!({"h": dom.h, "weight": w.to_string(), "degree": q, "rank": space.rank, "spectrum_head": head,
                           "euler_characteristic": cx.euler_characteristic()}),
                ));
                ranks[k].push(space.rank);
            }
        }
    }
    for (k, &q) in degrees.iter().enumerate() {
        let first = ranks[k][0];
        run.push(Record::check(
            "rank_invariance",
            ranks[k].iter().all(|&r| r == first),
            json!({"degree": q, "ranks": ranks[k]}),
        ));
        if let Some(e) = &expected {
            run.push(Record::check("rank_expected", first as f64 == e[k], json!({"degree": q, "rank": first, "expected": e[k]})));
        }
    }
    if let Some(from) = cfg.number("vanish_from")? {
        let from = from as usize;
        let vanish = degrees.iter().zip(&ranks).filter(|(q, _)| **q >= from).all(|(_, r)| r.iter().all(|&v| v == 0));
        run.push(Record::check("rank_vanishing", vanish, json!({"from_degree": from})));
        if let (Some(r), true) = (&cfg.require_domain().r, from >= 1 && from < n) {
            let pts = boundary_points(cfg, r, cfg.count_or("samples", 16)?)?;
            let rep = boundary_p_convexity(r, &pts, from, &Tolerances::default())?;
            let pass = rep.verdict >= Verdict::Semi;
            run.push(region_record("boundary_p_convexity", &rep, pass));
        }
    }
    Ok(())
}

fn prekopa(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let x_dim = cfg.count_or("x_dim", 1)?;
    let y_lo = cfg.list("y_lo")?.ok_or_else(|| cfg.task_error("y_lo", "missing"))?;
    let y_hi = cfg.list("y_hi")?.ok_or_else(|| cfg.task_error("y_hi", "missing"))?;
    if y_hi.len() != y_lo.len() || y_lo.iter().zip(&y_hi).any(|(a, b)| a >= b) {
        return Err(cfg.task_error("y_hi", "y_lo and y_hi must pair up with y_lo < y_hi").into());
    }
    let mut setup = MarginalSetup::new(x_dim, y_lo, y_hi);
    setup.y_points = cfg.count_or("y_points", setup.y_points)?;
    setup.step = cfg.number_or("step", setup.step)?;
    setup.tol = cfg.number_or("tol", setup.tol)?;
    let x_lo = cfg.number_or("x_lo", -1.0)?;
    let x_hi = cfg.number_or("x_hi", 1.0)?;
    let count = cfg.count_or("x_samples", 5)?;
    let xs: Vec<Vec<f64>> =
        (0..count).map(|_| (0..x_dim).map(|_| run.rng.random_range(x_lo..x_hi)).collect()).collect();

    if let Some(phi) = cfg.weight("phi") {
        let rep = prekopa_check(phi, &xs, &setup)?;
        let mut pass = rep.pass;
        let mut v = to_value(&rep);
        if let Some(target) = cfg.number("expected_second")? {
            let tol = cfg.number_or("expected_tol", 1e-3)?;
            let dev = rep
                .samples
                .iter()
                .flat_map(|s| s.second_differences.iter())
                .map(|sd| (sd - target).abs())
                .fold(0.0, f64::max);
            pass &= !rep.skipped && dev <= tol;
            v["expected_second"] = json!(target);
            v["max_deviation"] = json!(dev);
        }
        run.push(Record::check("prekopa", pass, v));
    }

    let quadratics = cfg.count_or("random_quadratics", 0)?;
    if quadratics > 0 {
        let closed_tol = cfg.number_or("closed_form_tol", 1e-4)?;
        let n = x_dim + setup.y_lo.len();
        for index in 0..quadratics {
            let (text, schur) = random_convex_quadratic(&mut run.rng, x_dim, n);
            let phi = ScalarFieldExpr::parse(&text, n)?;
            let rep = prekopa_check(&phi, &xs, &setup)?;
            let dev = rep
                .samples
                .iter()
                .flat_map(|s| s.second_differences.iter().enumerate())
                .map(|(i, sd)| (sd - schur[(i, i)]).abs())
                .fold(0.0, f64::max);
            run.push(Record::check(
                "prekopa_quadratic",
                rep.pass && !rep.skipped && dev <= closed_tol,
                json!({"index": index, "phi": text, "min_second_difference": rep.min_second_difference,
                       "closed_form_diagonal": (0..x_dim).map(|i| schur[(i, i)]).collect::<Vec<_>>(),
                       "max_deviation": dev}),
            ));
        }
    }
    if cfg.weight("phi").is_none() && quadratics == 0 {
        return Err(cfg.require_weight("phi").unwrap_err().into());
    }
    Ok(())
}

/// `½zᵀAz + bᵀz` with `A = BBᵀ + ½I`, and the Schur complement of the y-block.
fn random_convex_quadratic(rng: &mut ChaCha8Rng, x_dim: usize, n: usize) -> (String, DMatrix<f64>) {
    let b = DMatrix::from_fn(n, n, |_, _| 0.8 * rng.random_range(-1.0..1.0));
    let a = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
    let lin: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            terms.push(format!("{}*x{}*x{}", 0.5 * a[(i, j)], i + 1, j + 1));
        }
        terms.push(format!("{}*x{}", lin[i], i + 1));
    }
    let k = n - x_dim;
    let axx = a.view((0, 0), (x_dim, x_dim));
    let axy = a.view((0, x_dim), (x_dim, k));
    let ayy = a.view((x_dim, x_dim), (k, k)).into_owned();
    let inv = ayy.try_inverse().expect("positive definite block");
    let schur = axx - axy * inv * axy.transpose();
    (terms.join(" + "), schur)
}

fn random_theta(rng: &mut ChaCha8Rng, n: usize) -> QuadraticForm {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    QuadraticForm::new((&m + m.transpose()) * 0.5).expect("symmetric")
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> QuadraticForm {
    let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    QuadraticForm::new(&c * c.transpose() + DMatrix::identity(n, n) * shift).expect("symmetric")
}

fn random_form(rng: &mut ChaCha8Rng, n: usize, p: usize) -> PointForm {
    let coeffs = (0..binomial(n, p)).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointForm::from_coeffs(n, p, coeffs).expect("length matches")
}

fn unit(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

const SUITES: [&str; 7] = ["identity", "adjoint", "spectrum", "wedge_inverse", "inverse_bound", "curvature", "signature"];

fn algebra_battery(run: &mut Run<'_>) -> Result<(), TaskError> {
    let cfg = run.cfg;
    let n = cfg.n;
    let p = require_degree(cfg, 1)?;
    let cases = cfg.count_or("cases", 1000)?;
    let tol = cfg.number_or("tol", 1e-10)?;
    let eq_tol = cfg.number_or("equality_tol", 1e-12)?;
    let suites: Vec<String> = match cfg.text("suites") {
        None => SUITES.iter().map(|s| s.to_string()).collect(),
        Some(t) => t.split(',').map(|s| s.trim().to_string()).collect(),
    };
    if let Some(bad) = suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(cfg.task_error("suites", format!("unknown suite `{bad}`; expected one of {}", SUITES.join(", "))).into());
    }
    let rng = &mut run.rng;
    let mut out = Vec::new();
    for suite in &suites {
        let record = match suite.as_str() {
            "identity" => {
                let mut worst = 0.0f64;
                for _ in 0..cases {
                    let theta = random_theta(rng, n);
                    let g = random_form(rng, n, p);
                    let lhs = apply_f(&theta, &g)?.dot(&g)?;
                    let contractions: Vec<PointForm> =
                        (0..n).map(|j| interior_product(&unit(n, j), &g)).collect::<Result<_, _>>()?;
                    let mut rhs = 0.0;
                    for j in 0..n {
                        for k in 0..n {
                            rhs += theta.get(j, k) * contractions[j].dot(&contractions[k])?;
                        }
                    }
                    worst = worst.max((lhs - rhs).abs());
                }
                Record::check("identity", worst <= tol, json!({"cases": cases, "max_error": worst, "tol": tol}))
            }
            "adjoint" => {
                let mut worst = 0.0f64;
                for _ in 0..cases {
                    let theta = random_theta(rng, n);
                    let g = random_form(rng, n, p);
                    let h = random_form(rng, n, p);
                    let a = apply_f(&theta, &g)?.dot(&h)?;
                    let b = g.dot(&apply_f(&theta, &h)?)?;
                    worst = worst.max((a - b).abs());
                }
                Record::check("adjoint", worst <= tol, json!({"cases": cases, "max_error": worst, "tol": tol}))
            }
            "spectrum" => {
                let mut worst = 0.0f64;
                for _ in 0..cases {
                    let theta = random_theta(rng, n);
                    let m = f_matrix(&theta, p)?;
                    let mut dense: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
                    dense.sort_by(f64::total_cmp);
                    let summary = eigen_f(&theta, p)?;
                    for (a, b) in dense.iter().zip(&summary.values) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Record::check("spectrum", worst <= tol, json!({"cases": cases, "max_error": worst, "tol": tol}))
            }
            "wedge_inverse" => {
                let mut failures = 0usize;
                let mut margin = f64::INFINITY;
                for _ in 0..cases {
                    let tau: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let theta = QuadraticForm::outer(&tau).add(&random_psd(rng, n, 0.0).scaled(0.5));
                    let xi = random_form(rng, n, p - 1);
                    let f = apply_f(&theta, &random_form(rng, n, p))?;
                    let rec = wedge_inverse_check(&theta, &tau, &xi, &f, tol)?;
                    if !(rec.membership_ok && rec.cross_ineq_ok && rec.self_ineq_ok) {
                        failures += 1;
                    }
                    margin = margin.min(rec.xi_norm_sq - rec.self_lhs).min(rec.cross_rhs - rec.cross_lhs);
                }
                let mut eq_err = 0.0f64;
                for _ in 0..cases.min(100) {
                    let tau: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let theta = QuadraticForm::outer(&tau);
                    let mut xi = random_form(rng, n, p - 1);
                    if p >= 2 {
                        // Drop the part of ξ along τ so that τ⌟ξ = 0.
                        let t2: f64 = tau.iter().map(|t| t * t).sum();
                        let along = wedge(&PointForm::covector(&tau), &interior_product(&tau, &xi)?)?;
                        xi = xi.sub(&along.scaled(1.0 / t2))?;
                    }
                    let f = apply_f(&theta, &random_form(rng, n, p))?;
                    let rec = wedge_inverse_check(&theta, &tau, &xi, &f, tol)?;
                    eq_err = eq_err.max((rec.self_lhs - rec.xi_norm_sq).abs());
                }
                Record::check(
                    "wedge_inverse",
                    failures == 0 && margin >= -tol && eq_err <= tol,
                    json!({"cases": cases, "failures": failures, "min_margin": margin, "equality_error": eq_err, "tol": tol}),
                )
            }
            "inverse_bound" => {
                let mut worst = f64::NEG_INFINITY;
                for _ in 0..cases {
                    let theta = random_psd(rng, n, 0.1);
                    let b = inverse_bound_check(&theta, &random_form(rng, n, p))?;
                    worst = worst.max(b.lhs - b.rhs);
                }
                let mut eq_err = 0.0f64;
                for _ in 0..cases.min(100) {
                    let c = rng.random_range(0.1..5.0);
                    let b = inverse_bound_check(&QuadraticForm::identity(n).scaled(c), &random_form(rng, n, p))?;
                    eq_err = eq_err.max((b.lhs - b.rhs).abs());
                }
                Record::check(
                    "inverse_bound",
                    worst <= eq_tol && eq_err <= eq_tol,
                    json!({"cases": cases, "max_excess": worst, "equality_error": eq_err, "tol": eq_tol}),
                )
            }
            "curvature" => {
                if n < 2 {
                    return Err(cfg.task_error("suites", "the curvature suite needs n >= 2").into());
                }
                let len = binomial(n, 2);
                let mut failures = 0usize;
                for _ in 0..cases {
                    let m = DMatrix::from_fn(len, len, |_, _| rng.random_range(-1.0..1.0));
                    let curv = CurvatureOperator::new(n, (&m + m.transpose()) * 0.5)?;
                    if !curvature_bounds_check(&curv, &random_form(rng, n, p))?.holds(tol) {
                        failures += 1;
                    }
                }
                let mut eq_err = 0.0f64;
                for _ in 0..cases.min(100) {
                    let curv = CurvatureOperator::scaled_identity(n, rng.random_range(-2.0..2.0));
                    let b = curvature_bounds_check(&curv, &random_form(rng, n, p))?;
                    eq_err = eq_err.max((b.term - b.lower).abs()).max((b.term - b.upper).abs());
                }
                Record::check(
                    "curvature",
                    failures == 0 && eq_err <= tol,
                    json!({"cases": cases, "failures": failures, "equality_error": eq_err, "tol": tol}),
                )
            }
            _ => {
                let mut mismatches = Vec::new();
                for nn in 1..=7usize {
                    for pp in 1..=nn {
                        let got = signature_count(nn, pp);
                        if got != pp * (nn - pp) {
                            mismatches.push(json!({"n": nn, "p": pp, "count": got}));
                        }
                    }
                }
                Record::check("signature", mismatches.is_empty(), json!({"max_n": 7, "mismatches": mismatches}))
            }
        };
        info!("{}: pass = {:?}", record.check, record.pass);
        out.push(record);
    }
    run.records.extend(out);
    Ok(())
}
