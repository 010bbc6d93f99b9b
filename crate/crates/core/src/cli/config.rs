//! INI-style experiment configs.
//!
//! ```text
//! # comment
//! [experiment]
//! task = kmh
//! p = 1
//! [domain]
//! lo = 0, 0
//! hi = 1, 1
//! h = 1/16, 1/32
//! ```
//!
//! Numbers accept `a/b` fractions. Lists are comma separated.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::fieldexpr::{compose_df, ScalarFieldExpr};
use crate::weights::diameter_weight;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{field}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn at(line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { line, field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed `[section]` → `key = value` map with line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IniDocument {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl IniDocument {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut doc = IniDocument::default();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(Some(line), "section", "missing `]`"))?
                    .trim()
                    .to_string();
                if name.is_empty() {
                    return Err(ConfigError::at(Some(line), "section", "empty section name"));
                }
                doc.sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(Some(line), "entry", "expected `key = value`"))?;
            let section = current
                .as_ref()
                .ok_or_else(|| ConfigError::at(Some(line), key.trim(), "entry outside any section"))?;
            let key = key.trim().to_string();
            let map = doc.sections.get_mut(section).expect("section exists");
            if map.contains_key(&key) {
                return Err(ConfigError::at(Some(line), format!("{section}.{key}"), "duplicate key"));
            }
            map.insert(key, Entry { value: value.trim().to_string(), line });
        }
        Ok(doc)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.sections.get(section)?.get(key).map(|e| (e.value.as_str(), e.line))
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn keys(&self, section: &str) -> Vec<(String, usize)> {
        self.sections
            .get(section)
            .map(|m| m.iter().map(|(k, e)| (k.clone(), e.line)).collect())
            .unwrap_or_default()
    }
}

pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    if let Some((a, b)) = t.split_once('/') {
        let a: f64 = a.trim().parse().ok()?;
        let b: f64 = b.trim().parse().ok()?;
        return (b != 0.0).then_some(a / b);
    }
    t.parse().ok().filter(|v: &f64| v.is_finite())
}

fn parse_list(text: &str) -> Option<Vec<f64>> {
    text.split(',').map(parse_number).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    CheckPsh,
    BoundaryConvexity,
    DfSearch,
    Kmh,
    Solve,
    Bounds,
    Cohomology,
    Prekopa,
    AlgebraBattery,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::CheckPsh,
        Task::BoundaryConvexity,
        Task::DfSearch,
        Task::Kmh,
        Task::Solve,
        Task::Bounds,
        Task::Cohomology,
        Task::Prekopa,
        Task::AlgebraBattery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::CheckPsh => "check-psh",
            Task::BoundaryConvexity => "boundary-convexity",
            Task::DfSearch => "df-search",
            Task::Kmh => "kmh",
            Task::Solve => "solve",
            Task::Bounds => "bounds",
            Task::Cohomology => "cohomology",
            Task::Prekopa => "prekopa",
            Task::AlgebraBattery => "algebra-battery",
        }
    }

    fn from_name(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Whether the task reads a `[domain]` section.
    fn needs_domain(self) -> bool {
        !matches!(self, Task::Prekopa | Task::AlgebraBattery)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Strictly decreasing spacings; empty when `h` is absent.
    pub ladder: Vec<f64>,
    pub r: Option<ScalarFieldExpr>,
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// Validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub p: Option<usize>,
    pub n: usize,
    pub domain: Option<DomainSpec>,
    pub weights: BTreeMap<String, ScalarFieldExpr>,
    doc: IniDocument,
}

const WEIGHT_KEYS: [&str; 4] = ["base", "phi", "psi", "omega"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc = IniDocument::parse(text)?;
        let (task_text, task_line) =
            doc.get("experiment", "task").ok_or_else(|| ConfigError::at(None, "experiment.task", "missing"))?;
        let task = Task::from_name(task_text).ok_or_else(|| {
            let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
            ConfigError::at(Some(task_line), "experiment.task", format!("unknown task `{task_text}`; expected one of {}", names.join(", ")))
        })?;
        let seed = match doc.get("experiment", "seed") {
            None => 0,
            Some((v, line)) => v
                .parse::<u64>()
                .map_err(|_| ConfigError::at(Some(line), "experiment.seed", "expected an unsigned integer"))?,
        };
        let domain = if task.needs_domain() { Some(parse_domain(&doc)?) } else { None };
        let n = match (&domain, task) {
            (Some(d), _) => d.dim(),
            (None, Task::Prekopa) => {
                let x = usize_field(&doc, "task", "x_dim")?.unwrap_or(1);
                let y = list_field(&doc, "task", "y_lo")?
                    .ok_or_else(|| ConfigError::at(None, "task.y_lo", "missing"))?
                    .len();
                x + y
            }
            (None, _) => usize_field(&doc, "task", "n")?.ok_or_else(|| ConfigError::at(None, "task.n", "missing"))?,
        };
        let p = usize_field(&doc, "experiment", "p")?;
        if let Some(p) = p {
            let line = doc.get("experiment", "p").map(|(_, l)| l);
            let min = if task == Task::Cohomology { 0 } else { 1 };
            if p < min || p > n {
                return Err(ConfigError::at(line, "experiment.p", format!("degree {p} is outside [{min}, {n}]")));
            }
        }
        let mut cfg = ExperimentConfig { task, seed, p, n, domain, weights: BTreeMap::new(), doc };
        for (key, line) in cfg.doc.keys("weights") {
            if !WEIGHT_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::at(Some(line), format!("weights.{key}"), format!("unknown weight; expected one of {}", WEIGHT_KEYS.join(", "))));
            }
        }
        // `base` first so `df(...)` can refer to it.
        for key in WEIGHT_KEYS {
            if let Some((text, line)) = cfg.doc.get("weights", key) {
                let expr = cfg.weight_expr(text).map_err(|m| ConfigError::at(Some(line), format!("weights.{key}"), m))?;
                cfg.weights.insert(key.to_string(), expr);
            }
        }
        Ok(cfg)
    }

    fn weight_expr(&self, text: &str) -> Result<ScalarFieldExpr, String> {
        let n = self.n;
        if let Some(args) = builtin_args(text, "diameter")? {
            let [p, d] = fixed::<2>(&args, "diameter(p, D)")?;
            let center = self.domain.as_ref().map(DomainSpec::center).unwrap_or_else(|| vec![0.0; n]);
            return diameter_weight(p as usize, d, &center).map_err(|e| e.to_string());
        }
        if let Some(args) = builtin_args(text, "df")? {
            let [k, eta] = fixed::<2>(&args, "df(K, eta)")?;
            let r = self
                .domain
                .as_ref()
                .and_then(|d| d.r.clone())
                .ok_or("df(K, eta) needs a defining function in [domain] r")?;
            let base = self.weights.get("base").ok_or("df(K, eta) needs [weights] base")?;
            return compose_df(&r, base, k, eta).map_err(|e| e.to_string());
        }
        ScalarFieldExpr::parse(text, n).map_err(|e| e.to_string())
    }

    pub fn weight(&self, key: &str) -> Option<&ScalarFieldExpr> {
        self.weights.get(key)
    }

    pub fn require_weight(&self, key: &str) -> Result<&ScalarFieldExpr, ConfigError> {
        self.weight(key).ok_or_else(|| ConfigError::at(None, format!("weights.{key}"), "missing"))
    }

    pub fn require_p(&self) -> Result<usize, ConfigError> {
        self.p.ok_or_else(|| ConfigError::at(None, "experiment.p", "missing"))
    }

    pub fn require_ladder(&self) -> Result<&[f64], ConfigError> {
        let d = self.require_domain();
        if d.ladder.is_empty() {
            return Err(ConfigError::at(None, "domain.h", format!("task {} needs a grid spacing", self.task)));
        }
        Ok(&d.ladder)
    }

    pub fn require_r(&self) -> Result<&ScalarFieldExpr, ConfigError> {
        self.require_domain()
            .r
            .as_ref()
            .ok_or_else(|| ConfigError::at(None, "domain.r", format!("task {} needs a defining function", self.task)))
    }

    pub fn require_domain(&self) -> &DomainSpec {
        self.domain.as_ref().expect("task reads a domain")
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.doc.get("task", key) {
            None => Ok(None),
            Some((v, line)) => parse_number(v)
                .map(Some)
                .ok_or_else(|| ConfigError::at(Some(line), format!("task.{key}"), format!("expected a number, got `{v}`"))),
        }
    }

    pub fn number_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.number(key)?.unwrap_or(default))
    }

    pub fn count_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(usize_field(&self.doc, "task", key)?.unwrap_or(default))
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        list_field(&self.doc, "task", key)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.doc.get("task", key).map(|(v, _)| v)
    }

    pub fn flag_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.doc.get("task", key) {
            None => Ok(default),
            Some(("true", _)) => Ok(true),
            Some(("false", _)) => Ok(false),
            Some((v, line)) => Err(ConfigError::at(Some(line), format!("task.{key}"), format!("expected true or false, got `{v}`"))),
        }
    }

    /// Error tied to a `[task]` key.
    pub fn task_error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::at(self.doc.get("task", key).map(|(_, l)| l), format!("task.{key}"), message)
    }
}

fn usize_field(doc: &IniDocument, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
    match doc.get(section, key) {
        None => Ok(None),
        Some((v, line)) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| ConfigError::at(Some(line), format!("{section}.{key}"), format!("expected a non-negative integer, got `{v}`"))),
    }
}

fn list_field(doc: &IniDocument, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
    match doc.get(section, key) {
        None => Ok(None),
        Some((v, line)) => parse_list(v)
            .map(Some)
            .ok_or_else(|| ConfigError::at(Some(line), format!("{section}.{key}"), format!("expected a list of numbers, got `{v}`"))),
    }
}

/// Arguments of `name(a, b, …)`, or `None` when `text` is not that call.
fn builtin_args(text: &str, name: &str) -> Result<Option<Vec<f64>>, String> {
    let Some(rest) = text.trim().strip_prefix(name) else { return Ok(None) };
    let Some(inner) = rest.trim_start().strip_prefix('(').and_then(|s| s.trim_end().strip_suffix(')')) else {
        return Ok(None);
    };
    if inner.trim().is_empty() {
        return Ok(Some(Vec::new()));
    }
    parse_list(inner).map(Some).ok_or_else(|| format!("non-numeric argument in `{text}`"))
}

fn fixed<const K: usize>(args: &[f64], usage: &str) -> Result<[f64; K], String> {
    args.try_into().map_err(|_| format!("expected {usage}"))
}

fn parse_domain(doc: &IniDocument) -> Result<DomainSpec, ConfigError> {
    let lo = list_field(doc, "domain", "lo")?.ok_or_else(|| ConfigError::at(None, "domain.lo", "missing"))?;
    let hi = list_field(doc, "domain", "hi")?.ok_or_else(|| ConfigError::at(None, "domain.hi", "missing"))?;
    let hi_line = doc.get("domain", "hi").map(|(_, l)| l);
    if lo.is_empty() || lo.len() != hi.len() {
        return Err(ConfigError::at(hi_line, "domain.hi", "lo and hi must have the same non-zero length"));
    }
    if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
        return Err(ConfigError::at(hi_line, "domain.hi", "each hi must exceed lo"));
    }
    let ladder = list_field(doc, "domain", "h")?.unwrap_or_default();
    let h_line = doc.get("domain", "h").map(|(_, l)| l);
    if ladder.iter().any(|&h| h <= 0.0) {
        return Err(ConfigError::at(h_line, "domain.h", "spacings must be positive"));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ConfigError::at(h_line, "domain.h", "refinement ladder must be strictly decreasing"));
    }
    let n = lo.len();
    let r = match doc.get("domain", "r") {
        None => None,
        Some((text, line)) => Some(domain_expr(text, n).map_err(|m| ConfigError::at(Some(line), "domain.r", m))?),
    };
    Ok(DomainSpec { lo, hi, ladder, r })
}

fn domain_expr(text: &str, n: usize) -> Result<ScalarFieldExpr, String> {
    let sq = |n: usize| (1..=n).map(|i| format!("x{i}^2")).collect::<Vec<_>>().join(" + ");
    let src = if let Some(args) = builtin_args(text, "ball")? {
        let [radius] = fixed::<1>(&args, "ball(radius)")?;
        format!("{} - {}", sq(n), radius * radius)
    } else if let Some(args) = builtin_args(text, "annulus")? {
        let [a, b] = fixed::<2>(&args, "annulus(r_in, r_out)")?;
        format!("({s} - {})*({s} - {})", a * a, b * b, s = sq(n))
    } else if let Some(args) = builtin_args(text, "ellipse")? {
        let [a, b] = fixed::<2>(&args, "ellipse(a, b)")?;
        if n != 2 {
            return Err("ellipse(a, b) is two-dimensional".into());
        }
        format!("x1^2/{} + x2^2/{} - 1", a * a, b * b)
    } else if let Some(args) = builtin_args(text, "solid_torus")? {
        let [big, small] = fixed::<2>(&args, "solid_torus(R, a)")?;
        if n != 3 {
            return Err("solid_torus(R, a) is three-dimensional".into());
        }
        format!("(sqrt(x1^2 + x2^2) - {big})^2 + x3^2 - {}", small * small)
    } else {
        text.to_string()
    };
    ScalarFieldExpr::parse(&src, n).map_err(|e| e.to_string())
}

/// Built-in constructors with parameter docs, in a fixed order.
pub fn builtin_listing() -> String {
    let rows: [(&str, &str, &str); 7] = [
        ("domain", "annulus(r_in, r_out)", "(|x|^2 - r_in^2)(|x|^2 - r_out^2) < 0"),
        ("domain", "ball(radius)", "|x|^2 - radius^2 < 0"),
        ("domain", "ellipse(a, b)", "x1^2/a^2 + x2^2/b^2 - 1 < 0 (n = 2)"),
        ("domain", "solid_torus(R, a)", "(sqrt(x1^2 + x2^2) - R)^2 + x3^2 - a^2 < 0 (n = 3)"),
        ("weight", "df(K, eta)", "-(-r exp(-K base))^eta with r from [domain] and base from [weights]"),
        ("weight", "diameter(p, D)", "p|x - c|^2/(2 D^2), c the centre of the domain box"),
        ("weight", "<expression>", "any expression in x1..xn with + - * / ^, exp, log, sqrt"),
    ];
    let mut out = String::new();
    for (kind, name, doc) in rows {
        out.push_str(&format!("{kind:<7} {name:<22} {doc}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const KMH: &str = "\
[experiment]
task = kmh
p = 1
[domain]
lo = 0, 0
hi = 1, 1
h = 1/16, 1/32
[weights]
phi = x1^2 + x2^2
";

    #[test]
    fn parses_sections_and_fractions() {
        let cfg = ExperimentConfig::parse(KMH).unwrap();
        assert_eq!(cfg.task, Task::Kmh);
        assert_eq!(cfg.require_domain().ladder, vec![1.0 / 16.0, 1.0 / 32.0]);
        assert_eq!(cfg.p, Some(1));
        assert!(cfg.weight("phi").is_some());
    }

    #[test]
    fn degree_out_of_range_names_line() {
        let text = KMH.replace("p = 1", "p = 5");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.field, "experiment.p");
    }

    #[test]
    fn ladder_must_decrease() {
        let err = ExperimentConfig::parse(&KMH.replace("1/16, 1/32", "1/32, 1/16")).unwrap_err();
        assert_eq!(err.field, "domain.h");
    }

    #[test]
    fn bad_expression_is_reported() {
        let err = ExperimentConfig::parse(&KMH.replace("x1^2 + x2^2", "x1^2 + y")).unwrap_err();
        assert_eq!(err.field, "weights.phi");
        assert_eq!(err.line, Some(9));
    }

    #[test]
    fn builtins_expand() {
        let text = "[experiment]\ntask = df-search\np = 1\n[domain]\nlo = -1, -1\nhi = 1, 1\nh = 1/8\nr = ball(1)\n[weights]\nbase = x1^2 + x2^2\nphi = df(1, 0.5)\npsi = diameter(1, 2)\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let r = cfg.require_domain().r.as_ref().unwrap();
        assert!((r.eval(&[0.5, 0.0]).unwrap() + 0.75).abs() < 1e-15);
        assert!((cfg.weight("psi").unwrap().eval(&[1.0, 0.0]).unwrap() - 0.125).abs() < 1e-15);
        assert!(cfg.weight("phi").unwrap().eval(&[0.0, 0.0]).unwrap() < 0.0);
    }

    #[test]
    fn listing_is_stable() {
        assert_eq!(builtin_listing(), builtin_listing());
        assert!(builtin_listing().contains("df(K, eta)"));
        assert!(builtin_listing().contains("diameter(p, D)"));
    }

    #[test]
    fn malformed_lines() {
        assert_eq!(IniDocument::parse("[a]\nnonsense\n").unwrap_err().line, Some(2));
        assert_eq!(IniDocument::parse("k = v\n").unwrap_err().line, Some(1));
        assert_eq!(IniDocument::parse("[a]\nk = 1\nk = 2\n").unwrap_err().line, Some(3));
    }
}
