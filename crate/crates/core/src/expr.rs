//! Expression language for metric definitions.
//!
//! Grammar (left-associative, `^` binds tightest):
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := atom ('^' rational)?
//! atom     := number | variable | 'sqrt' '(' expr ')' | '(' expr ')'
//! rational := '-'? number | '(' '-'? number ('/' number)? ')'
//! variable := 'x' index | 'y' index        (1-based)
//! ```
//!
//! Exponents must be rationals with denominator at most 8.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::jet::{Jet, JetError};

/// Largest exponent denominator accepted by the parser.
pub const MAX_EXPONENT_DENOMINATOR: i64 = 8;

/// Byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn new(begin: usize, end: usize) -> Self {
        debug_assert!(begin <= end);
        Span { begin, end }
    }

    fn join(self, other: Span) -> Span {
        Span::new(self.begin.min(other.begin), self.end.max(other.end))
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.begin, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprErrorKind {
    #[error("unexpected character {0:?}")]
    UnknownChar(char),
    #[error("malformed number {0:?}")]
    MalformedNumber(String),
    #[error("unknown identifier {0:?}")]
    UnknownIdent(String),
    #[error("unexpected {found}, expected {expected}")]
    Unexpected { found: String, expected: String },
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("exponent {0} is not a rational with denominator <= 8")]
    NonRationalExponent(String),
    #[error("variable {name} out of range for dimension {dim}")]
    VariableOutOfRange { name: String, dim: usize },
    #[error("variable {0} not allowed here (only x variables)")]
    DirectionVariable(String),
    #[error("evaluation failed: {0}")]
    Eval(#[from] JetError),
    #[error("environment has {got} values, expected {expected}")]
    Environment { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at {span}")]
pub struct ExprError {
    pub kind: ExprErrorKind,
    pub span: Span,
}

impl ExprError {
    fn new(kind: ExprErrorKind, span: Span) -> Self {
        ExprError { kind, span }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(v) => write!(f, "number {v}"),
            TokenKind::Ident(s) => write!(f, "identifier {s}"),
            TokenKind::Plus => f.write_str("'+'"),
            TokenKind::Minus => f.write_str("'-'"),
            TokenKind::Star => f.write_str("'*'"),
            TokenKind::Slash => f.write_str("'/'"),
            TokenKind::Caret => f.write_str("'^'"),
            TokenKind::LParen => f.write_str("'('"),
            TokenKind::RParen => f.write_str("')'"),
            TokenKind::Comma => f.write_str("','"),
            TokenKind::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
    /// Source text of number tokens, kept for exact exponent parsing.
    pub text: String,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let mut tokens = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let single = match c {
            '+' => Some(TokenKind::Plus),
            '-' | '\u{2212}' => Some(TokenKind::Minus),
            '*' => Some(TokenKind::Star),
            '/' => Some(TokenKind::Slash),
            '^' => Some(TokenKind::Caret),
            '(' => Some(TokenKind::LParen),
            ')' => Some(TokenKind::RParen),
            ',' => Some(TokenKind::Comma),
            _ => None,
        };
        if let Some(kind) = single {
            chars.next();
            let span = Span::new(start, start + c.len_utf8());
            tokens.push(Token {
                kind,
                span,
                text: String::new(),
            });
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let mut end = start;
            let mut prev = ' ';
            while let Some(&(i, d)) = chars.peek() {
                let exp_sign = (d == '+' || d == '-') && (prev == 'e' || prev == 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    end = i + d.len_utf8();
                    prev = d;
                    chars.next();
                } else {
                    break;
                }
            }
            let text = &src[start..end];
            let span = Span::new(start, end);
            let value: f64 = text.parse().map_err(|_| {
                ExprError::new(ExprErrorKind::MalformedNumber(text.to_string()), span)
            })?;
            tokens.push(Token {
                kind: TokenKind::Number(value),
                span,
                text: text.to_string(),
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut end = start;
            while let Some(&(i, d)) = chars.peek() {
                if d.is_ascii_alphanumeric() || d == '_' {
                    end = i + 1;
                    chars.next();
                } else {
                    break;
                }
            }
            tokens.push(Token {
                kind: TokenKind::Ident(src[start..end].to_string()),
                span: Span::new(start, end),
                text: String::new(),
            });
            continue;
        }
        return Err(ExprError::new(
            ExprErrorKind::UnknownChar(c),
            Span::new(start, start + c.len_utf8()),
        ));
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        span: Span::new(src.len(), src.len()),
        text: String::new(),
    });
    Ok(tokens)
}

/// Coordinate variable, 1-based as written in the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X(usize),
    Y(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{i}"),
            Var::Y(i) => write!(f, "y{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Exponent `num / den` in lowest terms, `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num.abs(), den.abs()).max(1);
        let sign = if den < 0 { -1 } else { 1 };
        Some(Rational {
            num: sign * num / g,
            den: sign * den / g,
        })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 && self.num >= 0 {
            write!(f, "{}", self.num)
        } else if self.den == 1 {
            write!(f, "({})", self.num)
        } else {
            write!(f, "({}/{})", self.num, self.den)
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Rational),
    Sqrt(Box<Expr>),
    Group(Box<Expr>),
}

/// Parsed expression node with its source span.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    depth: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ExprError {
        let t = self.peek();
        let unbalanced = (t.kind == TokenKind::Eof && self.depth > 0)
            || (t.kind == TokenKind::RParen && self.depth == 0);
        let kind = if unbalanced {
            ExprErrorKind::Unbalanced
        } else {
            ExprErrorKind::Unexpected {
                found: t.kind.to_string(),
                expected: expected.to_string(),
            }
        };
        ExprError::new(kind, t.span)
    }

    fn expect(&mut self, kind: TokenKind, expected: &str) -> Result<Token, ExprError> {
        if self.peek().kind == kind {
            Ok(self.bump())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Plus => BinOp::Add,
                TokenKind::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            let span = lhs.span.join(rhs.span);
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Star => BinOp::Mul,
                TokenKind::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            let span = lhs.span.join(rhs.span);
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek().kind == TokenKind::Minus {
            let minus = self.bump();
            let inner = self.unary()?;
            let span = minus.span.join(inner.span);
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek().kind != TokenKind::Caret {
            return Ok(base);
        }
        self.bump();
        let (exp, exp_span) = self.rational()?;
        let span = base.span.join(exp_span);
        Ok(Expr {
            kind: ExprKind::Pow(Box::new(base), exp),
            span,
        })
    }

    fn number_literal(&mut self) -> Result<(Token, Rational), ExprError> {
        if !matches!(self.peek().kind, TokenKind::Number(_)) {
            return Err(self.unexpected("rational exponent"));
        }
        let tok = self.bump();
        let r = decimal_to_rational(&tok.text).ok_or_else(|| {
            ExprError::new(ExprErrorKind::NonRationalExponent(tok.text.clone()), tok.span)
        })?;
        Ok((tok, r))
    }

    fn rational(&mut self) -> Result<(Rational, Span), ExprError> {
        let start = self.peek().span;
        if self.peek().kind == TokenKind::LParen {
            self.bump();
            self.depth += 1;
            let negative = if self.peek().kind == TokenKind::Minus {
                self.bump();
                true
            } else {
                false
            };
            let (_, mut value) = self.number_literal()?;
            if self.peek().kind == TokenKind::Slash {
                self.bump();
                let (den_tok, den) = self.number_literal()?;
                if den.num == 0 {
                    return Err(ExprError::new(
                        ExprErrorKind::NonRationalExponent(den_tok.text),
                        den_tok.span,
                    ));
                }
                value = Rational::new(value.num * den.den, value.den * den.num)
                    .expect("nonzero denominator");
            }
            let close = self.expect(TokenKind::RParen, "')'")?;
            self.depth -= 1;
            if negative {
                value.num = -value.num;
            }
            let span = start.join(close.span);
            check_denominator(value, span)?;
            return Ok((value, span));
        }
        let negative = if self.peek().kind == TokenKind::Minus {
            self.bump();
            true
        } else {
            false
        };
        let (tok, mut value) = self.number_literal()?;
        if negative {
            value.num = -value.num;
        }
        let span = start.join(tok.span);
        check_denominator(value, span)?;
        Ok((value, span))
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = self.peek().clone();
        match &tok.kind {
            TokenKind::Number(v) => {
                self.bump();
                Ok(Expr {
                    kind: ExprKind::Num(*v),
                    span: tok.span,
                })
            }
            TokenKind::Ident(name) => {
                self.bump();
                if name == "sqrt" {
                    self.expect(TokenKind::LParen, "'(' after sqrt")?;
                    self.depth += 1;
                    let inner = self.expr()?;
                    let close = self.expect(TokenKind::RParen, "')'")?;
                    self.depth -= 1;
                    return Ok(Expr {
                        kind: ExprKind::Sqrt(Box::new(inner)),
                        span: tok.span.join(close.span),
                    });
                }
                let var = parse_variable(name).ok_or_else(|| {
                    ExprError::new(ExprErrorKind::UnknownIdent(name.clone()), tok.span)
                })?;
                Ok(Expr {
                    kind: ExprKind::Var(var),
                    span: tok.span,
                })
            }
            TokenKind::LParen => {
                self.bump();
                self.depth += 1;
                let inner = self.expr()?;
                let close = self.expect(TokenKind::RParen, "')'")?;
                self.depth -= 1;
                Ok(Expr {
                    kind: ExprKind::Group(Box::new(inner)),
                    span: tok.span.join(close.span),
                })
            }
            _ => Err(self.unexpected("number, variable, sqrt or '('")),
        }
    }
}

fn check_denominator(r: Rational, span: Span) -> Result<(), ExprError> {
    if r.den > MAX_EXPONENT_DENOMINATOR {
        return Err(ExprError::new(
            ExprErrorKind::NonRationalExponent(r.to_string()),
            span,
        ));
    }
    Ok(())
}

/// Exact rational value of a decimal literal such as `2`, `0.25` or `1.5e1`.
fn decimal_to_rational(text: &str) -> Option<Rational> {
    let lower = text.to_ascii_lowercase();
    let (mantissa, exp) = match lower.split_once('e') {
        Some((m, e)) => (m.to_string(), e.parse::<i32>().ok()?),
        None => (lower.clone(), 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i.to_string(), f.to_string()),
        None => (mantissa.clone(), String::new()),
    };
    let digits = format!("{int_part}{frac_part}");
    if digits.is_empty() || digits.len() > 15 {
        return None;
    }
    let mut num: i64 = digits.parse().ok()?;
    let mut den: i64 = 1;
    let shift = exp - frac_part.len() as i32;
    if shift >= 0 {
        num = num.checked_mul(10i64.checked_pow(shift as u32)?)?;
    } else {
        den = 10i64.checked_pow((-shift) as u32)?;
    }
    Rational::new(num, den)
}

fn parse_variable(name: &str) -> Option<Var> {
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let index: usize = digits.parse().ok()?;
    if index == 0 {
        return None;
    }
    match head {
        "x" => Some(Var::X(index)),
        "y" => Some(Var::Y(index)),
        _ => None,
    }
}

pub fn parse(tokens: &[Token]) -> Result<Expr, ExprError> {
    assert!(
        matches!(tokens.last(), Some(t) if t.kind == TokenKind::Eof),
        "token stream must end with Eof"
    );
    let mut p = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    let expr = p.expr()?;
    if p.peek().kind != TokenKind::Eof {
        return Err(p.unexpected("operator or end of input"));
    }
    Ok(expr)
}

/// Tokenize and parse in one step.
pub fn parse_str(src: &str) -> Result<Expr, ExprError> {
    parse(&tokenize(src)?)
}

impl Expr {
    /// Rejects variables with index above `dim`.
    pub fn validate(&self, dim: usize) -> Result<(), ExprError> {
        self.try_visit(&mut |e| match e.kind {
            ExprKind::Var(v @ (Var::X(i) | Var::Y(i))) if i > dim => Err(ExprError::new(
                ExprErrorKind::VariableOutOfRange {
                    name: v.to_string(),
                    dim,
                },
                e.span,
            )),
            _ => Ok(()),
        })
    }

    /// Rejects any `y` variable (for coefficient fields that live on the base).
    pub fn validate_position_only(&self, dim: usize) -> Result<(), ExprError> {
        self.validate(dim)?;
        self.try_visit(&mut |e| match e.kind {
            ExprKind::Var(v @ Var::Y(_)) => Err(ExprError::new(
                ExprErrorKind::DirectionVariable(v.to_string()),
                e.span,
            )),
            _ => Ok(()),
        })
    }

    fn try_visit(
        &self,
        f: &mut dyn FnMut(&Expr) -> Result<(), ExprError>,
    ) -> Result<(), ExprError> {
        f(self)?;
        match &self.kind {
            ExprKind::Num(_) | ExprKind::Var(_) => Ok(()),
            ExprKind::Neg(a) | ExprKind::Pow(a, _) | ExprKind::Sqrt(a) | ExprKind::Group(a) => {
                a.try_visit(f)
            }
            ExprKind::Binary(_, a, b) => {
                a.try_visit(f)?;
                b.try_visit(f)
            }
        }
    }

    /// Same tree with groups removed and spans cleared; used to compare
    /// expressions structurally.
    pub fn normalized(&self) -> Expr {
        let kind = match &self.kind {
            ExprKind::Group(a) => return a.normalized(),
            ExprKind::Num(v) => ExprKind::Num(*v),
            ExprKind::Var(v) => ExprKind::Var(*v),
            ExprKind::Neg(a) => ExprKind::Neg(Box::new(a.normalized())),
            ExprKind::Pow(a, r) => ExprKind::Pow(Box::new(a.normalized()), *r),
            ExprKind::Sqrt(a) => ExprKind::Sqrt(Box::new(a.normalized())),
            ExprKind::Binary(op, a, b) => {
                ExprKind::Binary(*op, Box::new(a.normalized()), Box::new(b.normalized()))
            }
        };
        Expr {
            kind,
            span: Span::default(),
        }
    }

    /// Evaluate over jets. `env` holds `x^1..x^n` followed by `y^1..y^n`.
    pub fn eval_jet(&self, env: &[Jet]) -> Result<Jet, ExprError> {
        if env.len() % 2 != 0 || env.is_empty() {
            return Err(ExprError::new(
                ExprErrorKind::Environment {
                    got: env.len(),
                    expected: 2,
                },
                self.span,
            ));
        }
        let n = env.len() / 2;
        let layout = env[0].layout().clone();
        let order = env[0].order();
        self.eval_jet_inner(env, n, &|v| Jet::constant(&layout, order, v))
    }

    fn eval_jet_inner(
        &self,
        env: &[Jet],
        n: usize,
        constant: &dyn Fn(f64) -> Jet,
    ) -> Result<Jet, ExprError> {
        let wrap = |e: JetError| ExprError::new(ExprErrorKind::Eval(e), self.span);
        Ok(match &self.kind {
            ExprKind::Num(v) => constant(*v),
            ExprKind::Var(v) => env[var_slot(*v, n, self.span)?].clone(),
            ExprKind::Neg(a) => -a.eval_jet_inner(env, n, constant)?,
            ExprKind::Group(a) => a.eval_jet_inner(env, n, constant)?,
            ExprKind::Sqrt(a) => a.eval_jet_inner(env, n, constant)?.sqrt().map_err(wrap)?,
            ExprKind::Pow(a, r) => a
                .eval_jet_inner(env, n, constant)?
                .pow_rational(r.num, r.den)
                .map_err(wrap)?,
            ExprKind::Binary(op, a, b) => {
                // scalar literals skip the Cauchy product
                let lhs = a.eval_jet_inner(env, n, constant)?;
                if let (BinOp::Mul, ExprKind::Num(c)) = (op, &b.kind) {
                    return Ok(lhs.scale(*c));
                }
                if let (BinOp::Mul, ExprKind::Num(c)) = (op, &a.kind) {
                    return Ok(b.eval_jet_inner(env, n, constant)?.scale(*c));
                }
                let rhs = b.eval_jet_inner(env, n, constant)?;
                match op {
                    BinOp::Add => lhs.try_add(&rhs),
                    BinOp::Sub => lhs.try_sub(&rhs),
                    BinOp::Mul => lhs.try_mul(&rhs),
                    BinOp::Div => lhs.try_div(&rhs),
                }
                .map_err(wrap)?
            }
        })
    }

    /// Plain floating-point evaluation at `(x, y)`.
    pub fn eval_f64(&self, x: &[f64], y: &[f64]) -> Result<f64, ExprError> {
        let fail = |e: JetError| ExprError::new(ExprErrorKind::Eval(e), self.span);
        Ok(match &self.kind {
            ExprKind::Num(v) => *v,
            ExprKind::Var(v) => {
                let slot = var_slot(*v, x.len(), self.span)?;
                if slot < x.len() {
                    x[slot]
                } else {
                    y[slot - x.len()]
                }
            }
            ExprKind::Neg(a) => -a.eval_f64(x, y)?,
            ExprKind::Group(a) => a.eval_f64(x, y)?,
            ExprKind::Sqrt(a) => {
                let v = a.eval_f64(x, y)?;
                if !(v > 0.0) {
                    return Err(fail(JetError::SqrtDomain(v)));
                }
                v.sqrt()
            }
            ExprKind::Pow(a, r) => {
                let v = a.eval_f64(x, y)?;
                if r.den == 1 {
                    if r.num < 0 && v == 0.0 {
                        return Err(fail(JetError::DivisionByZero));
                    }
                    v.powi(r.num as i32)
                } else {
                    if !(v > 0.0) {
                        return Err(fail(JetError::PowDomain {
                            num: r.num,
                            den: r.den,
                            value: v,
                        }));
                    }
                    v.powf(r.as_f64())
                }
            }
            ExprKind::Binary(op, a, b) => {
                let (l, r) = (a.eval_f64(x, y)?, b.eval_f64(x, y)?);
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(fail(JetError::DivisionByZero));
                        }
                        l / r
                    }
                }
            }
        })
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary(op, _, _) => op.precedence(),
            ExprKind::Neg(_) => 3,
            ExprKind::Pow(_, _) => 4,
            _ => 5,
        }
    }
}

fn var_slot(v: Var, n: usize, span: Span) -> Result<usize, ExprError> {
    let (i, offset) = match v {
        Var::X(i) => (i, 0),
        Var::Y(i) => (i, n),
    };
    if i == 0 || i > n {
        return Err(ExprError::new(
            ExprErrorKind::VariableOutOfRange {
                name: v.to_string(),
                dim: n,
            },
            span,
        ));
    }
    Ok(offset + i - 1)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
            if parens && !matches!(e.kind, ExprKind::Group(_)) {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match &self.kind {
            ExprKind::Num(v) => write!(f, "{v}"),
            ExprKind::Var(v) => write!(f, "{v}"),
            ExprKind::Group(a) => write!(f, "({a})"),
            ExprKind::Sqrt(a) => write!(f, "sqrt({a})"),
            ExprKind::Neg(a) => {
                f.write_str("-")?;
                child(f, a, a.precedence() < 3)
            }
            ExprKind::Pow(a, r) => {
                child(f, a, a.precedence() < 5)?;
                write!(f, "^{r}")
            }
            ExprKind::Binary(op, a, b) => {
                let p = op.precedence();
                child(f, a, a.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                // right operand of a left-associative chain needs parens at equal precedence
                child(f, b, b.precedence() <= p)
            }
        }
    }
}

/// One failed sample of the homogeneity check.
#[derive(Debug, Clone, Serialize)]
pub struct HomogeneityFailure {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct HomogeneityReport {
    pub samples: usize,
    pub passed: bool,
    pub worst_residual: f64,
    pub failures: Vec<HomogeneityFailure>,
}

/// Checks `F(x, t y) = t F(x, y)` at random points.
///
/// `x` is drawn uniformly from `bounds` (one `(min, max)` pair per axis), `y`
/// from a standard normal and `t` log-uniformly from `(0.1, 10)`.
pub fn validate_homogeneity(
    ast: &Expr,
    bounds: &[(f64, f64)],
    samples: usize,
    seed: u64,
) -> HomogeneityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = bounds.len();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = bounds.iter().map(|&(a, b)| rng.random_range(a..=b)).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let t = 10f64.powf(rng.random_range(-1.0..1.0));
        let ty: Vec<f64> = y.iter().map(|v| v * t).collect();
        match (ast.eval_f64(&x, &y), ast.eval_f64(&x, &ty)) {
            (Ok(f1), Ok(ft)) => {
                let residual = (ft - t * f1).abs() / (1.0 + f1.abs() * t);
                worst = worst.max(residual);
                if (ft - t * f1).abs() > 1e-9 * (1.0 + (t * f1).abs()) {
                    failures.push(HomogeneityFailure {
                        x,
                        y,
                        t,
                        detail: format!("F(x,ty) = {ft}, t F(x,y) = {}", t * f1),
                    });
                }
            }
            (Err(e), _) | (_, Err(e)) => failures.push(HomogeneityFailure {
                x,
                y,
                t,
                detail: format!("evaluation failed: {e}"),
            }),
        }
    }
    HomogeneityReport {
        samples,
        passed: failures.is_empty(),
        worst_residual: worst,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{seed_variables, MultiIndex};
    use approx::assert_relative_eq;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn tokenizes_sqrt_expression() {
        use TokenKind::*;
        assert_eq!(
            kinds("sqrt(y1^2 + y2^2)"),
            vec![
                Ident("sqrt".into()),
                LParen,
                Ident("y1".into()),
                Caret,
                Number(2.0),
                Plus,
                Ident("y2".into()),
                Caret,
                Number(2.0),
                RParen,
                Eof
            ]
        );
        assert_eq!(kinds("2.5e-1"), vec![Number(0.25), Eof]);
        assert_eq!(kinds("x3"), vec![Ident("x3".into()), Eof]);
    }

    #[test]
    fn lexical_errors_carry_spans() {
        let err = tokenize("y1 + $").unwrap_err();
        assert_eq!(err.kind, ExprErrorKind::UnknownChar('$'));
        assert_eq!(err.span, Span::new(5, 6));
        let err = tokenize("1.2.3").unwrap_err();
        assert!(matches!(err.kind, ExprErrorKind::MalformedNumber(_)));
    }

    #[test]
    fn precedence_and_grouping() {
        let e = parse_str("y1 + y2 * y3").unwrap().normalized();
        match e.kind {
            ExprKind::Binary(BinOp::Add, _, rhs) => {
                assert!(matches!(rhs.kind, ExprKind::Binary(BinOp::Mul, _, _)))
            }
            other => panic!("unexpected {other:?}"),
        }
        let p = parse_str("(y1^4 + y2^4)^(1/4)").unwrap();
        assert!(matches!(p.kind, ExprKind::Pow(_, Rational { num: 1, den: 4 })));
        let neg = parse_str("-y1^2").unwrap();
        assert!(matches!(neg.kind, ExprKind::Neg(ref a) if matches!(a.kind, ExprKind::Pow(..))));
    }

    #[test]
    fn parse_errors() {
        let err = parse_str("y1 +").unwrap_err();
        assert!(matches!(err.kind, ExprErrorKind::Unexpected { .. }));
        assert_eq!(err.span, Span::new(4, 4));
        assert_eq!(parse_str("(y1 + y2").unwrap_err().kind, ExprErrorKind::Unbalanced);
        assert_eq!(parse_str("y1 + y2)").unwrap_err().kind, ExprErrorKind::Unbalanced);
        assert!(matches!(
            parse_str("y1^0.3").unwrap_err().kind,
            ExprErrorKind::NonRationalExponent(_)
        ));
        assert!(matches!(
            parse_str("y1^(1/9)").unwrap_err().kind,
            ExprErrorKind::NonRationalExponent(_)
        ));
        assert!(matches!(
            parse_str("y1^y2").unwrap_err().kind,
            ExprErrorKind::Unexpected { .. }
        ));
        assert!(matches!(
            parse_str("z1").unwrap_err().kind,
            ExprErrorKind::UnknownIdent(_)
        ));
        assert!(matches!(
            parse_str("2 y1").unwrap_err().kind,
            ExprErrorKind::Unexpected { .. }
        ));
    }

    #[test]
    fn rational_exponent_forms() {
        for (src, num, den) in [
            ("y1^2", 2, 1),
            ("y1^-1", -1, 1),
            ("y1^0.25", 1, 4),
            ("y1^(-3/2)", -3, 2),
            ("y1^(2/4)", 1, 2),
        ] {
            match parse_str(src).unwrap().kind {
                ExprKind::Pow(_, r) => assert_eq!((r.num, r.den), (num, den), "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn variable_range_validation() {
        let e = parse_str("x3 + y1").unwrap();
        let err = e.validate(2).unwrap_err();
        assert_eq!(err.span, Span::new(0, 2));
        assert!(e.validate(3).is_ok());
        let err = parse_str("x1 * y2").unwrap().validate_position_only(2).unwrap_err();
        assert!(matches!(err.kind, ExprErrorKind::DirectionVariable(_)));
    }

    #[test]
    fn evaluates_over_jets() {
        let env = seed_variables(&[0.0, 0.0], &[3.0, 4.0], 2).unwrap();
        let f = parse_str("sqrt(y1^2+y2^2)").unwrap().eval_jet(&env).unwrap();
        assert_relative_eq!(f.value(), 5.0, epsilon = 1e-15);
        assert_relative_eq!(f.partial(&MultiIndex::from_vars(4, &[2])).unwrap(), 0.6);

        let env = seed_variables(&[0.0, 0.0], &[2.0, 1.0], 2).unwrap();
        let f = parse_str("y1").unwrap().eval_jet(&env).unwrap();
        assert_eq!(f.value(), 2.0);
        assert_eq!(f.partial_vars(&[2]).unwrap(), 1.0);

        let env = seed_variables(&[0.0, 0.0], &[1.0, 0.0], 2).unwrap();
        let f = parse_str("sqrt(y1^2+y2^2) + 0.3*y1").unwrap().eval_jet(&env).unwrap();
        assert_relative_eq!(f.value(), 1.3, epsilon = 1e-15);
    }

    #[test]
    fn eval_errors_point_at_node() {
        let src = "y1 + sqrt(y2 - 5)";
        let env = seed_variables(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap();
        let err = parse_str(src).unwrap().eval_jet(&env).unwrap_err();
        assert!(matches!(err.kind, ExprErrorKind::Eval(JetError::SqrtDomain(_))));
        assert_eq!(&src[err.span.begin..err.span.end], "sqrt(y2 - 5)");
    }

    #[test]
    fn homogeneity_check() {
        let b = [(-1.0, 1.0), (-1.0, 1.0)];
        assert!(validate_homogeneity(&parse_str("sqrt(y1^2+y2^2)").unwrap(), &b, 50, 3).passed);
        assert!(!validate_homogeneity(&parse_str("y1^2").unwrap(), &b, 50, 3).passed);
        assert!(
            validate_homogeneity(&parse_str("sqrt(y1^2+y2^2) + x1*y2").unwrap(), &b, 50, 3).passed
        );
        // evaluation failures are reported, not fatal
        let r = validate_homogeneity(&parse_str("sqrt(y1)").unwrap(), &b, 50, 3);
        assert!(!r.passed && r.failures.iter().any(|f| f.detail.contains("evaluation")));
    }

    #[test]
    fn printer_round_trip_examples() {
        for src in [
            "y1 - (y2 - y3)",
            "y1 / (y2 * y3)",
            "-(y1 + y2)^(1/4)",
            "(y1^4 + y2^4)^0.25 + 1e-3 * x1 * y2",
            "sqrt(y1^2 + (1 + x1^2) * y2^2) / (1 - x1^2 - x2^2)",
            "--y1",
        ] {
            let a = parse_str(src).unwrap();
            let printed = a.to_string();
            let b = parse_str(&printed).unwrap();
            assert_eq!(a.normalized(), b.normalized(), "{src} -> {printed}");
        }
    }
}
