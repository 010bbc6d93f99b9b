//! Scalar field expressions with exact second-order jets.
//!
//! Text grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | base ('^' factor)?
//! base   := number | var | '(' expr ')' | func '(' expr ')'
//! func   := exp | log | sqrt
//! var    := x[1-9][0-9]*
//! ```
//!
//! Unary minus is stored as `0 - e`, so printing and re-parsing is the identity
//! on trees.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset} (dimension {n})")]
    UnknownVariable { offset: usize, name: String, n: usize },
    #[error("function `{func}` at byte {offset} takes one argument, got {got}")]
    Arity { offset: usize, func: String, got: usize },
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
    #[error("point has dimension {got}, field expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        match s {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// Expression tree. Variables are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Literal that prints and re-parses to itself: negative values become `0 - |v|`.
    pub fn num(v: f64) -> Expr {
        if v < 0.0 {
            Expr::Sub(Box::new(Expr::Num(0.0)), Box::new(Expr::Num(-v)))
        } else {
            Expr::Num(v)
        }
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::Pow(Box::new(a), Box::new(b))
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::sub(Expr::Num(0.0), a)
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }

    /// Largest variable index used plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.arity().max(b.arity())
            }
            Expr::Call(_, a) => a.arity(),
        }
    }

    fn constant_value(&self) -> Option<f64> {
        if self.arity() == 0 {
            eval_value(self, &[]).ok()
        } else {
            None
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a}^{b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Value, gradient and symmetric Hessian at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet2 {
    pub fn constant(n: usize, v: f64) -> Jet2 {
        Jet2 { value: v, grad: DVector::zeros(n), hess: DMatrix::zeros(n, n) }
    }

    pub fn variable(n: usize, i: usize, v: f64) -> Jet2 {
        let mut j = Jet2::constant(n, v);
        j.grad[i] = 1.0;
        j
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn add(&self, o: &Jet2) -> Jet2 {
        Jet2 { value: self.value + o.value, grad: &self.grad + &o.grad, hess: &self.hess + &o.hess }
    }

    pub fn sub(&self, o: &Jet2) -> Jet2 {
        Jet2 { value: self.value - o.value, grad: &self.grad - &o.grad, hess: &self.hess - &o.hess }
    }

    pub fn mul(&self, o: &Jet2) -> Jet2 {
        let cross = &self.grad * o.grad.transpose();
        let hess = &o.hess * self.value + &self.hess * o.value + &cross + cross.transpose();
        Jet2 {
            value: self.value * o.value,
            grad: &o.grad * self.value + &self.grad * o.value,
            hess,
        }
    }

    pub fn scale(&self, s: f64) -> Jet2 {
        Jet2 { value: self.value * s, grad: &self.grad * s, hess: &self.hess * s }
    }

    /// `f∘u` given `f(u)`, `f'(u)`, `f''(u)`.
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Jet2 {
        let outer = &self.grad * self.grad.transpose();
        Jet2 { value: f0, grad: &self.grad * f1, hess: &self.hess * f1 + outer * f2 }
    }
}

/// A scalar field on `ℝⁿ` with value and second-order jet evaluation.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError>;
    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(self.jet(x)?.value)
    }
}

/// Parsed expression tagged with its ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldExpr {
    ast: Expr,
    n: usize,
}

impl ScalarFieldExpr {
    pub fn parse(src: &str, n: usize) -> Result<Self, ExprError> {
        let ast = Parser::new(src, n).parse_all()?;
        Ok(ScalarFieldExpr { ast, n })
    }

    pub fn from_ast(ast: Expr, n: usize) -> Result<Self, ExprError> {
        if ast.arity() > n {
            return Err(ExprError::UnknownVariable { offset: 0, name: format!("x{}", ast.arity()), n });
        }
        Ok(ScalarFieldExpr { ast, n })
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.check_dim(x)?;
        eval_value(&self.ast, x)
    }

    pub fn eval_jet2(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        self.check_dim(x)?;
        eval_jet(&self.ast, x)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.n {
            return Err(ExprError::DimensionMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }
}

impl fmt::Display for ScalarFieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

impl Field for ScalarFieldExpr {
    fn dim(&self) -> usize {
        self.n
    }
    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        self.eval_jet2(x)
    }
    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.eval(x)
    }
}

fn domain(e: &Expr, reason: impl Into<String>) -> ExprError {
    ExprError::Domain { expr: e.to_string(), reason: reason.into() }
}

/// Small integer exponents are expanded by repeated multiplication.
const MAX_INTEGER_EXPONENT: f64 = 64.0;

fn integer_exponent(c: f64) -> Option<i32> {
    if c.fract() == 0.0 && c.abs() <= MAX_INTEGER_EXPONENT {
        Some(c as i32)
    } else {
        None
    }
}

/// Value-only evaluation; independent of the jet path.
pub fn eval_value(e: &Expr, x: &[f64]) -> Result<f64, ExprError> {
    Ok(match e {
        Expr::Num(v) => *v,
        Expr::Var(i) => x[*i],
        Expr::Add(a, b) => eval_value(a, x)? + eval_value(b, x)?,
        Expr::Sub(a, b) => eval_value(a, x)? - eval_value(b, x)?,
        Expr::Mul(a, b) => eval_value(a, x)? * eval_value(b, x)?,
        Expr::Div(a, b) => {
            let d = eval_value(b, x)?;
            if d == 0.0 {
                return Err(domain(e, "division by zero"));
            }
            eval_value(a, x)? / d
        }
        Expr::Pow(a, b) => {
            let base = eval_value(a, x)?;
            match b.constant_value().and_then(integer_exponent) {
                Some(k) => {
                    if k < 0 && base == 0.0 {
                        return Err(domain(e, "zero raised to a negative power"));
                    }
                    base.powi(k)
                }
                None => {
                    if base <= 0.0 {
                        return Err(domain(e, "non-positive base with non-integer exponent"));
                    }
                    base.powf(eval_value(b, x)?)
                }
            }
        }
        Expr::Call(f, a) => {
            let u = eval_value(a, x)?;
            match f {
                Func::Exp => u.exp(),
                Func::Log => {
                    if u <= 0.0 {
                        return Err(domain(e, "log of non-positive value"));
                    }
                    u.ln()
                }
                Func::Sqrt => {
                    if u < 0.0 {
                        return Err(domain(e, "sqrt of negative value"));
                    }
                    u.sqrt()
                }
            }
        }
    })
}

fn jet_powi(base: &Jet2, k: i32) -> Jet2 {
    let n = base.dim();
    let mut acc = Jet2::constant(n, 1.0);
    for _ in 0..k.unsigned_abs() {
        acc = acc.mul(base);
    }
    if k < 0 {
        let v = acc.value;
        acc = acc.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v));
    }
    acc
}

/// Forward-mode second-order evaluation.
pub fn eval_jet(e: &Expr, x: &[f64]) -> Result<Jet2, ExprError> {
    let n = x.len();
    Ok(match e {
        Expr::Num(v) => Jet2::constant(n, *v),
        Expr::Var(i) => Jet2::variable(n, *i, x[*i]),
        Expr::Add(a, b) => eval_jet(a, x)?.add(&eval_jet(b, x)?),
        Expr::Sub(a, b) => eval_jet(a, x)?.sub(&eval_jet(b, x)?),
        Expr::Mul(a, b) => eval_jet(a, x)?.mul(&eval_jet(b, x)?),
        Expr::Div(a, b) => {
            let d = eval_jet(b, x)?;
            let v = d.value;
            if v == 0.0 {
                return Err(domain(e, "division by zero"));
            }
            let inv = d.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v));
            eval_jet(a, x)?.mul(&inv)
        }
        Expr::Pow(a, b) => {
            let base = eval_jet(a, x)?;
            match b.constant_value() {
                Some(c) => match integer_exponent(c) {
                    Some(k) => {
                        if k < 0 && base.value == 0.0 {
                            return Err(domain(e, "zero raised to a negative power"));
                        }
                        jet_powi(&base, k)
                    }
                    None => {
                        let u = base.value;
                        if u <= 0.0 {
                            return Err(domain(e, "non-positive base with non-integer exponent"));
                        }
                        base.chain(u.powf(c), c * u.powf(c - 1.0), c * (c - 1.0) * u.powf(c - 2.0))
                    }
                },
                None => {
                    let u = base.value;
                    if u <= 0.0 {
                        return Err(domain(e, "non-positive base with variable exponent"));
                    }
                    let log_base = base.chain(u.ln(), 1.0 / u, -1.0 / (u * u));
                    let t = eval_jet(b, x)?.mul(&log_base);
                    let v = t.value.exp();
                    t.chain(v, v, v)
                }
            }
        }
        Expr::Call(f, a) => {
            let u = eval_jet(a, x)?;
            let v = u.value;
            match f {
                Func::Exp => {
                    let ev = v.exp();
                    u.chain(ev, ev, ev)
                }
                Func::Log => {
                    if v <= 0.0 {
                        return Err(domain(e, "log of non-positive value"));
                    }
                    u.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
                }
                Func::Sqrt => {
                    if v <= 0.0 {
                        return Err(domain(e, "sqrt is not differentiable at non-positive values"));
                    }
                    let s = v.sqrt();
                    u.chain(s, 0.5 / s, -0.25 / (s * v))
                }
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, n: usize) -> Self {
        Parser { src: src.as_bytes(), pos: 0, n, tok: Tok::End, tok_start: 0 }
    }

    fn syntax(&self, offset: usize, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { offset, message: message.into() }
    }

    fn advance(&mut self) -> Result<(), ExprError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= self.src.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = self.src[self.pos];
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            self.tok = t;
            return Ok(());
        }
        if c.is_ascii_digit() || c == b'.' {
            self.tok = Tok::Num(self.lex_number()?);
            return Ok(());
        }
        if c.is_ascii_alphabetic() {
            let start = self.pos;
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
            self.tok = Tok::Ident(s.to_string());
            return Ok(());
        }
        Err(self.syntax(self.pos, format!("unexpected character `{}`", c as char)))
    }

    fn lex_number(&mut self) -> Result<f64, ExprError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            let b = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p > b
        };
        let mut p = self.pos;
        let int_part = digits(&mut p);
        let mut frac_part = false;
        if p < s.len() && s[p] == b'.' {
            p += 1;
            frac_part = digits(&mut p);
        }
        if !int_part && !frac_part {
            return Err(self.syntax(start, "malformed number"));
        }
        if p < s.len() && (s[p] == b'e' || s[p] == b'E') {
            let mut q = p + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) {
                p = q;
            }
        }
        self.pos = p;
        let text = std::str::from_utf8(&s[start..p]).expect("ascii number");
        text.parse::<f64>().map_err(|_| self.syntax(start, format!("malformed number `{text}`")))
    }

    fn parse_all(mut self) -> Result<Expr, ExprError> {
        self.advance()?;
        if self.tok == Tok::End {
            return Err(self.syntax(0, "empty expression"));
        }
        let e = self.expr()?;
        if self.tok != Tok::End {
            return Err(self.syntax(self.tok_start, "unexpected trailing input"));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Plus => {
                    self.advance()?;
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.advance()?;
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.tok {
                Tok::Star => {
                    self.advance()?;
                    lhs = Expr::mul(lhs, self.factor()?);
                }
                Tok::Slash => {
                    self.advance()?;
                    lhs = Expr::div(lhs, self.factor()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if self.tok == Tok::Minus {
            self.advance()?;
            return Ok(Expr::neg(self.factor()?));
        }
        let base = self.base()?;
        if self.tok == Tok::Caret {
            self.advance()?;
            return Ok(Expr::pow(base, self.factor()?));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        let start = self.tok_start;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.advance()?;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.advance()?;
                if let Some(func) = Func::from_name(&name) {
                    return self.call(func, &name, start);
                }
                self.variable(&name, start)
            }
            Tok::End => Err(self.syntax(start, "unexpected end of input")),
            t => Err(self.syntax(start, format!("unexpected token {t:?}"))),
        }
    }

    fn call(&mut self, func: Func, name: &str, start: usize) -> Result<Expr, ExprError> {
        if self.tok != Tok::LParen {
            return Err(self.syntax(self.tok_start, format!("expected `(` after `{name}`")));
        }
        self.advance()?;
        if self.tok == Tok::RParen {
            return Err(ExprError::Arity { offset: start, func: name.into(), got: 0 });
        }
        let arg = self.expr()?;
        let mut got = 1;
        while self.tok == Tok::Comma {
            self.advance()?;
            self.expr()?;
            got += 1;
        }
        if got != 1 {
            return Err(ExprError::Arity { offset: start, func: name.into(), got });
        }
        self.expect_rparen()?;
        Ok(Expr::call(func, arg))
    }

    fn variable(&self, name: &str, start: usize) -> Result<Expr, ExprError> {
        let unknown = || ExprError::UnknownVariable { offset: start, name: name.into(), n: self.n };
        let digits = name.strip_prefix('x').ok_or_else(unknown)?;
        let valid = !digits.is_empty()
            && digits.bytes().all(|b| b.is_ascii_digit())
            && !digits.starts_with('0');
        if !valid {
            return Err(unknown());
        }
        let index: usize = digits.parse().map_err(|_| unknown())?;
        if index > self.n {
            return Err(unknown());
        }
        Ok(Expr::Var(index - 1))
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        if self.tok != Tok::RParen {
            return Err(self.syntax(self.tok_start, "expected `)`"));
        }
        self.advance()
    }
}

/// `ρ = −(−r·e^{−Kφ})^η`.
///
/// Accepts `η = 1` with a warning (then `ρ = r·e^{−Kφ}`).
pub fn compose_df(
    r: &ScalarFieldExpr,
    phi: &ScalarFieldExpr,
    k: f64,
    eta: f64,
) -> Result<ScalarFieldExpr, ExprError> {
    if r.dim() != phi.dim() {
        return Err(ExprError::DimensionMismatch { expected: r.dim(), got: phi.dim() });
    }
    if !(k > 0.0) {
        return Err(ExprError::InvalidParameter(format!("K must be positive, got {k}")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(ExprError::InvalidParameter(format!("eta must lie in (0, 1), got {eta}")));
    }
    if eta == 1.0 {
        log::warn!("compose_df with eta = 1 is degenerate: rho = r exp(-K phi)");
    }
    let damp = Expr::call(Func::Exp, Expr::neg(Expr::mul(Expr::num(k), phi.ast().clone())));
    let inner = Expr::mul(Expr::neg(r.ast().clone()), damp);
    let ast = Expr::neg(Expr::pow(inner, Expr::num(eta)));
    ScalarFieldExpr::from_ast(ast, r.dim())
}

/// `exp(−1/(1−s²))` with `s = |x−c|/R`, extended by zero outside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

impl SmoothBump {
    pub fn new(center: Vec<f64>, radius: f64, amplitude: f64) -> Result<Self, ExprError> {
        if !(radius > 0.0) {
            return Err(ExprError::InvalidParameter(format!("bump radius must be positive, got {radius}")));
        }
        Ok(SmoothBump { center, radius, amplitude })
    }
}

impl Field for SmoothBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        let r2 = self.radius * self.radius;
        let q: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / r2;
        if q >= 1.0 {
            return Ok(0.0);
        }
        Ok(self.amplitude * (-1.0 / (1.0 - q)).exp())
    }

    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        let n = self.dim();
        if x.len() != n {
            return Err(ExprError::DimensionMismatch { expected: n, got: x.len() });
        }
        let r2 = self.radius * self.radius;
        let dx = DVector::from_iterator(n, x.iter().zip(&self.center).map(|(a, c)| a - c));
        let q = dx.norm_squared() / r2;
        if q >= 1.0 {
            return Ok(Jet2::constant(n, 0.0));
        }
        let u = 1.0 / (1.0 - q);
        let b = self.amplitude * (-u).exp();
        let b1 = -u * u * b;
        let b2 = (u.powi(4) - 2.0 * u.powi(3)) * b;
        let gq = &dx * (2.0 / r2);
        let hess = DMatrix::identity(n, n) * (2.0 * b1 / r2) + &gq * gq.transpose() * b2;
        Ok(Jet2 { value: b, grad: gq * b1, hess })
    }
}

/// Constant field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub n: usize,
    pub value: f64,
}

impl Field for ConstantField {
    fn dim(&self) -> usize {
        self.n
    }
    fn jet(&self, _x: &[f64]) -> Result<Jet2, ExprError> {
        Ok(Jet2::constant(self.n, self.value))
    }
    fn value(&self, _x: &[f64]) -> Result<f64, ExprError> {
        Ok(self.value)
    }
}

/// Pointwise linear combination `Σ c_k f_k + c₀`.
pub struct SumField {
    n: usize,
    offset: f64,
    terms: Vec<(f64, Box<dyn Field>)>,
}

impl SumField {
    pub fn new(n: usize, offset: f64) -> Self {
        SumField { n, offset, terms: Vec::new() }
    }

    pub fn with(mut self, c: f64, f: Box<dyn Field>) -> Self {
        assert_eq!(f.dim(), self.n, "field dimension mismatch");
        self.terms.push((c, f));
        self
    }
}

impl Field for SumField {
    fn dim(&self) -> usize {
        self.n
    }
    fn jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        let mut acc = Jet2::constant(self.n, self.offset);
        for (c, f) in &self.terms {
            acc = acc.add(&f.jet(x)?.scale(*c));
        }
        Ok(acc)
    }
    fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        let mut acc = self.offset;
        for (c, f) in &self.terms {
            acc += c * f.value(x)?;
        }
        Ok(acc)
    }
}
