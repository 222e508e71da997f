//! Small arithmetic expression language for scenario-supplied scalar fields.
//!
//! Supports `+ - * / ^` (with `^` right-associative), unary minus, the
//! functions `exp`, `tanh`, `cos`, `sin`, numeric literals, the constant
//! `pi`, and a caller-declared set of variable names. Expressions are
//! parsed once into an AST, then evaluated many times; first partial
//! derivatives are produced symbolically so that metric derivatives,
//! magnetic 2-forms and potential gradients are exact rather than
//! finite-differenced.
//!
//! Evaluation never panics: IEEE special values propagate and are checked
//! by callers where finiteness matters.

use crate::{FpError, Result};
use std::fmt;

/// Maximum parenthesis/function nesting depth accepted by the parser.
const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Tanh,
    Cos,
    Sin,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Cos => "cos",
            Func::Sin => "sin",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Tanh => x.tanh(),
            Func::Cos => x.cos(),
            Func::Sin => x.sin(),
        }
    }
}

/// Expression AST over a fixed variable table.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Index into the variable table the expression was parsed against.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Evaluates at `x` indexed by the variable table. Out-of-range `Var`
    /// cannot occur for expressions produced by [`parse`].
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Neg(a) => -a.eval(x),
            Expr::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    /// Symbolic partial derivative with respect to variable `var`.
    ///
    /// `a ^ b` requires a constant exponent or a constant positive base;
    /// scenario expressions use numeric exponents, so this covers all
    /// accepted inputs.
    pub fn diff(&self, var: usize) -> Result<Expr> {
        use Expr::*;
        Ok(match self {
            Num(_) => Num(0.0),
            Var(i) => Num(if *i == var { 1.0 } else { 0.0 }),
            Add(a, b) => simp_add(a.diff(var)?, b.diff(var)?),
            Sub(a, b) => simp_sub(a.diff(var)?, b.diff(var)?),
            Mul(a, b) => simp_add(
                simp_mul(a.diff(var)?, (**b).clone()),
                simp_mul((**a).clone(), b.diff(var)?),
            ),
            Div(a, b) => {
                // (a/b)' = a'/b - a b' / b^2
                let da = a.diff(var)?;
                let db = b.diff(var)?;
                simp_sub(
                    simp_div(da, (**b).clone()),
                    simp_div(
                        simp_mul((**a).clone(), db),
                        simp_mul((**b).clone(), (**b).clone()),
                    ),
                )
            }
            Pow(a, b) => match (&**a, &**b) {
                (_, Num(c)) => {
                    // (a^c)' = c a^(c-1) a'
                    let da = a.diff(var)?;
                    simp_mul(
                        simp_mul(Num(*c), simp_pow((**a).clone(), Num(c - 1.0))),
                        da,
                    )
                }
                (Num(c), _) if *c > 0.0 => {
                    // (c^b)' = ln(c) c^b b'
                    let db = b.diff(var)?;
                    simp_mul(simp_mul(Num(c.ln()), self.clone()), db)
                }
                _ => {
                    return Err(FpError::Expr(
                        "cannot differentiate a^b with a non-constant exponent over a non-constant base".into(),
                    ))
                }
            },
            Neg(a) => simp_neg(a.diff(var)?),
            Call(f, a) => {
                let da = a.diff(var)?;
                let outer = match f {
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Cos => simp_neg(Call(Func::Sin, a.clone())),
                    Func::Sin => Call(Func::Cos, a.clone()),
                    // tanh' = 1 - tanh^2
                    Func::Tanh => simp_sub(
                        Num(1.0),
                        simp_mul(Call(Func::Tanh, a.clone()), Call(Func::Tanh, a.clone())),
                    ),
                };
                simp_mul(outer, da)
            }
        })
    }

    fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 1.0)
    }
}

fn simp_add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn simp_sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => simp_neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn simp_mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn simp_div(a: Expr, b: Expr) -> Expr {
    if a.is_zero() && !b.is_zero() {
        return Expr::Num(0.0);
    }
    if b.is_one() {
        return a;
    }
    Expr::Div(Box::new(a), Box::new(b))
}

fn simp_pow(a: Expr, b: Expr) -> Expr {
    match &b {
        Expr::Num(c) if *c == 0.0 => Expr::Num(1.0),
        Expr::Num(c) if *c == 1.0 => a,
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn simp_neg(a: Expr) -> Expr {
    match a {
        Expr::Num(c) => Expr::Num(-c),
        Expr::Neg(inner) => *inner,
        _ => Expr::Neg(Box::new(a)),
    }
}

impl fmt::Display for Expr {
    /// Emits a parseable form (fully parenthesized where precedence is
    /// ambiguous); `Var` indices print as `x{i}` placeholders unless
    /// rendered through [`ScalarField::to_string_named`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_named(f, None)
    }
}

impl Expr {
    fn fmt_named(&self, f: &mut fmt::Formatter<'_>, names: Option<&[String]>) -> fmt::Result {
        match self {
            Expr::Num(c) => {
                if *c < 0.0 || !c.is_finite() {
                    write!(f, "({})", c)
                } else {
                    write!(f, "{}", c)
                }
            }
            Expr::Var(i) => match names.and_then(|n| n.get(*i)) {
                Some(name) => write!(f, "{}", name),
                None => write!(f, "x{}", i),
            },
            Expr::Add(a, b) => {
                write!(f, "(")?;
                a.fmt_named(f, names)?;
                write!(f, " + ")?;
                b.fmt_named(f, names)?;
                write!(f, ")")
            }
            Expr::Sub(a, b) => {
                write!(f, "(")?;
                a.fmt_named(f, names)?;
                write!(f, " - ")?;
                b.fmt_named(f, names)?;
                write!(f, ")")
            }
            Expr::Mul(a, b) => {
                write!(f, "(")?;
                a.fmt_named(f, names)?;
                write!(f, " * ")?;
                b.fmt_named(f, names)?;
                write!(f, ")")
            }
            Expr::Div(a, b) => {
                write!(f, "(")?;
                a.fmt_named(f, names)?;
                write!(f, " / ")?;
                b.fmt_named(f, names)?;
                write!(f, ")")
            }
            Expr::Pow(a, b) => {
                write!(f, "(")?;
                a.fmt_named(f, names)?;
                write!(f, " ^ ")?;
                b.fmt_named(f, names)?;
                write!(f, ")")
            }
            Expr::Neg(a) => {
                write!(f, "(-")?;
                a.fmt_named(f, names)?;
                write!(f, ")")
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_named(f, names)?;
                write!(f, ")")
            }
        }
    }
}

/// Parses `src` against the variable table `vars`. Unknown identifiers
/// (other than `pi` and function names) are errors, as is trailing input.
pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens: &tokens,
        pos: 0,
        vars,
        depth: 0,
    };
    let e = p.expr()?;
    if p.pos != tokens.len() {
        return Err(FpError::Expr(format!(
            "unexpected trailing input at token {:?}",
            tokens[p.pos]
        )));
    }
    Ok(e)
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
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                toks.push(Tok::Star);
                i += 1;
            }
            '/' => {
                toks.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                toks.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| FpError::Expr(format!("bad number literal {:?}", text)))?;
                toks.push(Tok::Num(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push(Tok::Ident(src[start..i].to_string()));
            }
            _ => {
                return Err(FpError::Expr(format!(
                    "unexpected character {:?} at byte {}",
                    c, i
                )))
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    vars: &'a [&'a str],
    depth: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn enter(&mut self) -> Result<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(FpError::Expr("expression nesting too deep".into()));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(t) = self.peek() {
            match t {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while let Some(t) = self.peek() {
            match t {
                Tok::Star => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    /// `factor := '-' factor | power` and `power := atom ('^' factor)?`,
    /// so `^` is right-associative and binds tighter than unary minus:
    /// `-2^2` is `-(2^2)` while `2^-3` is `2^(-3)`.
    fn factor(&mut self) -> Result<Expr> {
        self.enter()?;
        let out = if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            Expr::Neg(Box::new(self.factor()?))
        } else {
            self.power()?
        };
        self.depth -= 1;
        Ok(out)
    }

    fn power(&mut self) -> Result<Expr> {
        self.enter()?;
        let base = self.atom()?;
        let out = if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            let exp = self.factor()?;
            Expr::Pow(Box::new(base), Box::new(exp))
        } else {
            base
        };
        self.depth -= 1;
        Ok(out)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "exp" => Some(Func::Exp),
                    "tanh" => Some(Func::Tanh),
                    "cos" => Some(Func::Cos),
                    "sin" => Some(Func::Sin),
                    _ => None,
                };
                if let Some(f) = func {
                    if !matches!(self.peek(), Some(Tok::LParen)) {
                        return Err(FpError::Expr(format!(
                            "function {:?} must be followed by '('",
                            name
                        )));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    match self.bump() {
                        Some(Tok::RParen) => Ok(Expr::Call(f, Box::new(arg))),
                        other => Err(FpError::Expr(format!(
                            "expected ')' after argument of {:?}, got {:?}",
                            name, other
                        ))),
                    }
                } else if name == "pi" {
                    Ok(Expr::Num(std::f64::consts::PI))
                } else if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    Ok(Expr::Var(idx))
                } else {
                    Err(FpError::Expr(format!(
                        "unknown identifier {:?} (variables here: {:?})",
                        name, self.vars
                    )))
                }
            }
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(e),
                    other => Err(FpError::Expr(format!(
                        "expected ')', got {:?}",
                        other
                    ))),
                }
            }
            other => Err(FpError::Expr(format!(
                "expected a number, identifier or '(', got {:?}",
                other
            ))),
        }
    }
}

/// A compiled scalar field: expression plus its symbolic gradient over a
/// named variable table. Cheap to clone; safe to share across threads.
#[derive(Debug, Clone)]
pub struct ScalarField {
    names: Vec<String>,
    expr: Expr,
    grad: Vec<Expr>,
}

impl ScalarField {
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let expr = parse(src, vars)?;
        let grad = (0..vars.len())
            .map(|i| expr.diff(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScalarField {
            names: vars.iter().map(|s| s.to_string()).collect(),
            expr,
            grad,
        })
    }

    /// Constant field, useful as a neutral default.
    pub fn constant(c: f64, vars: &[&str]) -> Self {
        ScalarField {
            names: vars.iter().map(|s| s.to_string()).collect(),
            expr: Expr::Num(c),
            grad: vec![Expr::Num(0.0); vars.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    /// Writes the gradient into `out` (length = variable count).
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval(x);
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grad.len()];
        self.grad_into(x, &mut out);
        out
    }

    /// Partial derivative field with respect to variable `i`.
    pub fn partial(&self, i: usize) -> ScalarField {
        ScalarField {
            names: self.names.clone(),
            expr: self.grad[i].clone(),
            grad: self
                .grad
                .iter()
                .enumerate()
                .map(|(j, _)| {
                    self.grad[i]
                        .diff(j)
                        .unwrap_or(Expr::Num(f64::NAN))
                })
                .collect(),
        }
    }

    pub fn to_string_named(&self) -> String {
        struct Named<'a>(&'a Expr, &'a [String]);
        impl fmt::Display for Named<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt_named(f, Some(self.1))
            }
        }
        format!("{}", Named(&self.expr, &self.names))
    }
}
