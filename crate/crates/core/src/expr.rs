//! Coefficient expression language.
//!
//! Problem files describe σ, f, Γ, g and h as small arithmetic expressions
//! over the time `t`, the state `x1..xd`, the control `a1..ak` and named
//! parameters. The grammar is
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := "-"? atom
//! atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Operators are left-associative and whitespace is insignificant. A minus
//! sign directly in front of a number literal folds into the constant, so
//! `-3` is the constant −3 rather than the negation of 3; this keeps
//! [`Expr`]'s `Display` output a parse-exact inverse.
//!
//! Error offsets are 1-based byte positions; an error at end of input points
//! one past the last byte.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Time,
    /// Zero-based state component.
    State(usize),
    /// Zero-based control component.
    Control(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sqrt,
    Exp,
    Sign,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Param { name: String, value: f64 },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Evaluation point for an expression.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub a: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    SqrtOfNegative(f64),
    #[error("non-finite result")]
    NonFinite,
    #[error("variable {0:?} is not bound at this evaluation point")]
    Unbound(Var),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` at offset {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    File { line: usize, message: String },
}

impl ParseError {
    /// Byte offset (1-based) of expression-level errors.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::Arity { offset, .. } => Some(*offset),
            ParseError::File { .. } => None,
        }
    }
}

/// Names an expression may refer to.
#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    pub state_dim: usize,
    pub control_dim: usize,
    pub params: &'a BTreeMap<String, f64>,
}

const FUNCTIONS: &[(&str, usize)] = &[
    ("abs", 1),
    ("sqrt", 1),
    ("exp", 1),
    ("sign", 1),
    ("tanh", 1),
    ("pow", 2),
    ("min", 2),
    ("max", 2),
];

pub fn is_reserved(name: &str) -> bool {
    name == "t"
        || FUNCTIONS.iter().any(|(f, _)| *f == name)
        || indexed_name(name, 'x').is_some()
        || indexed_name(name, 'a').is_some()
}

fn indexed_name(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

impl UnaryOp {
    fn apply(self, v: f64) -> Result<f64, EvalError> {
        let out = match self {
            UnaryOp::Neg => -v,
            UnaryOp::Abs => v.abs(),
            UnaryOp::Sqrt => {
                if v < 0.0 {
                    return Err(EvalError::SqrtOfNegative(v));
                }
                v.sqrt()
            }
            UnaryOp::Exp => v.exp(),
            UnaryOp::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Tanh => v.tanh(),
        };
        finite(out)
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Exp => "exp",
            UnaryOp::Sign => "sign",
            UnaryOp::Tanh => "tanh",
        }
    }
}

impl BinaryOp {
    fn apply(self, l: f64, r: f64) -> Result<f64, EvalError> {
        let out = match self {
            BinaryOp::Add => l + r,
            BinaryOp::Sub => l - r,
            BinaryOp::Mul => l * r,
            BinaryOp::Div => {
                if r == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                l / r
            }
            BinaryOp::Pow => l.powf(r),
            BinaryOp::Min => l.min(r),
            BinaryOp::Max => l.max(r),
        };
        finite(out)
    }

    fn function_name(self) -> Option<&'static str> {
        match self {
            BinaryOp::Pow => Some("pow"),
            BinaryOp::Min => Some("min"),
            BinaryOp::Max => Some("max"),
            _ => None,
        }
    }
}

#[inline]
fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn state(i: usize) -> Expr {
        Expr::Var(Var::State(i))
    }

    pub fn control(i: usize) -> Expr {
        Expr::Var(Var::Control(i))
    }

    pub fn time() -> Expr {
        Expr::Var(Var::Time)
    }

    pub fn param(name: &str, value: f64) -> Expr {
        Expr::Param {
            name: name.to_string(),
            value,
        }
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn eval(&self, env: &Env<'_>) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(Var::Time) => finite(env.t),
            Expr::Var(v @ Var::State(i)) => env
                .x
                .get(*i)
                .copied()
                .ok_or(EvalError::Unbound(*v))
                .and_then(finite),
            Expr::Var(v @ Var::Control(i)) => env
                .a
                .get(*i)
                .copied()
                .ok_or(EvalError::Unbound(*v))
                .and_then(finite),
            Expr::Param { value, .. } => Ok(*value),
            Expr::Unary(op, e) => op.apply(e.eval(env)?),
            Expr::Binary(op, l, r) => op.apply(l.eval(env)?, r.eval(env)?),
        }
    }

    /// Largest state/control index referenced, as (state_dim, control_dim).
    pub fn required_dims(&self) -> (usize, usize) {
        match self {
            Expr::Var(Var::State(i)) => (i + 1, 0),
            Expr::Var(Var::Control(i)) => (0, i + 1),
            Expr::Const(_) | Expr::Var(Var::Time) | Expr::Param { .. } => (0, 0),
            Expr::Unary(_, e) => e.required_dims(),
            Expr::Binary(_, l, r) => {
                let (a, b) = l.required_dims();
                let (c, d) = r.required_dims();
                (a.max(c), b.max(d))
            }
        }
    }

    pub fn visit_params(&self, out: &mut BTreeMap<String, f64>) {
        match self {
            Expr::Param { name, value } => {
                out.insert(name.clone(), *value);
            }
            Expr::Unary(_, e) => e.visit_params(out),
            Expr::Binary(_, l, r) => {
                l.visit_params(out);
                r.visit_params(out);
            }
            _ => {}
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            _ => 4,
        }
    }

    fn write_with(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            f.write_str("(")?;
            self.write_with(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Var::Time) => f.write_str("t"),
            Expr::Var(Var::State(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::Control(i)) => write!(f, "a{}", i + 1),
            Expr::Param { name, .. } => f.write_str(name),
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                // The operand must read back as an atom: a bare literal would
                // fold into a negative constant.
                match **e {
                    Expr::Var(_) | Expr::Param { .. } => e.write_with(f, 4),
                    Expr::Unary(op, _) if op != UnaryOp::Neg => e.write_with(f, 4),
                    Expr::Binary(op, ..) if op.function_name().is_some() => e.write_with(f, 4),
                    _ => {
                        f.write_str("(")?;
                        e.write_with(f, 0)?;
                        f.write_str(")")
                    }
                }
            }
            Expr::Unary(op, e) => {
                write!(f, "{}(", op.name())?;
                e.write_with(f, 0)?;
                f.write_str(")")
            }
            Expr::Binary(op, l, r) => {
                if let Some(name) = op.function_name() {
                    write!(f, "{name}(")?;
                    l.write_with(f, 0)?;
                    f.write_str(", ")?;
                    r.write_with(f, 0)?;
                    return f.write_str(")");
                }
                let (prec, sym) = match op {
                    BinaryOp::Add => (1, " + "),
                    BinaryOp::Sub => (1, " - "),
                    BinaryOp::Mul => (2, " * "),
                    _ => (2, " / "),
                };
                l.write_with(f, prec)?;
                f.write_str(sym)?;
                r.write_with(f, prec + 1)
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_with(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'s> {
    src: &'s [u8],
    pos: usize,
}

impl<'s> Lexer<'s> {
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let offset = start + 1;
        let Some(&c) = self.src.get(start) else {
            return Ok((Tok::End, offset));
        };
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => return self.number(start),
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos])
                    .expect("ascii identifier")
                    .to_string();
                return Ok((Tok::Ident(name), offset));
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset,
                    message: format!("unexpected character {:?}", char_at(self.src, start)),
                })
            }
        };
        self.pos += 1;
        Ok((tok, offset))
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        let s = self.src;
        let digits = |p: &mut usize| {
            let b = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p - b
        };
        let mut p = start;
        let mut n = digits(&mut p);
        if p < s.len() && s[p] == b'.' {
            p += 1;
            n += digits(&mut p);
        }
        if n == 0 {
            return Err(ParseError::Syntax {
                offset: start + 1,
                message: "malformed number".into(),
            });
        }
        if p < s.len() && (s[p] == b'e' || s[p] == b'E') {
            let mut q = p + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) == 0 {
                return Err(ParseError::Syntax {
                    offset: p + 1,
                    message: "missing exponent digits".into(),
                });
            }
            p = q;
        }
        let text = std::str::from_utf8(&s[start..p]).expect("ascii number");
        let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start + 1,
            message: format!("malformed number `{text}`"),
        })?;
        self.pos = p;
        Ok((Tok::Num(v), start + 1))
    }
}

fn char_at(src: &[u8], i: usize) -> char {
    std::str::from_utf8(&src[i..])
        .ok()
        .and_then(|s| s.chars().next())
        .unwrap_or(src[i] as char)
}

struct Parser<'s, 'p> {
    lex: Lexer<'s>,
    tok: Tok,
    offset: usize,
    scope: Scope<'p>,
}

impl<'s, 'p> Parser<'s, 'p> {
    fn new(text: &'s str, scope: Scope<'p>) -> Result<Self, ParseError> {
        let mut lex = Lexer {
            src: text.as_bytes(),
            pos: 0,
        };
        let (tok, offset) = lex.next()?;
        Ok(Parser {
            lex,
            tok,
            offset,
            scope,
        })
    }

    fn bump(&mut self) -> Result<(), ParseError> {
        let (tok, offset) = self.lex.next()?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match &self.tok {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            t => format!("{t:?}"),
        };
        ParseError::Syntax {
            offset: self.offset,
            message: format!("expected {wanted}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Minus {
            self.bump()?;
            if let Tok::Num(v) = self.tok {
                self.bump()?;
                return Ok(Expr::Const(-v));
            }
            return Ok(Expr::unary(UnaryOp::Neg, self.atom()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.offset;
                self.bump()?;
                if self.tok == Tok::LParen {
                    self.call(name, at)
                } else {
                    self.variable(name, at)
                }
            }
            _ => Err(self.unexpected("a number, identifier or `(`")),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.tok == tok {
            self.bump()
        } else {
            Err(self.unexpected(what))
        }
    }

    fn call(&mut self, name: String, at: usize) -> Result<Expr, ParseError> {
        let Some(&(_, arity)) = FUNCTIONS.iter().find(|(f, _)| *f == name) else {
            return Err(ParseError::UnknownFunction { name, offset: at });
        };
        self.bump()?; // `(`
        let mut args = vec![self.expr()?];
        while self.tok == Tok::Comma {
            self.bump()?;
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        if args.len() != arity {
            return Err(ParseError::Arity {
                name,
                offset: at,
                expected: arity,
                found: args.len(),
            });
        }
        let mut it = args.into_iter();
        let a = it.next().expect("arity >= 1");
        Ok(match name.as_str() {
            "abs" => Expr::unary(UnaryOp::Abs, a),
            "sqrt" => Expr::unary(UnaryOp::Sqrt, a),
            "exp" => Expr::unary(UnaryOp::Exp, a),
            "sign" => Expr::unary(UnaryOp::Sign, a),
            "tanh" => Expr::unary(UnaryOp::Tanh, a),
            "pow" => Expr::binary(BinaryOp::Pow, a, it.next().expect("arity 2")),
            "min" => Expr::binary(BinaryOp::Min, a, it.next().expect("arity 2")),
            _ => Expr::binary(BinaryOp::Max, a, it.next().expect("arity 2")),
        })
    }

    fn variable(&self, name: String, at: usize) -> Result<Expr, ParseError> {
        if name == "t" {
            return Ok(Expr::time());
        }
        if let Some(i) = indexed_name(&name, 'x') {
            if i <= self.scope.state_dim {
                return Ok(Expr::state(i - 1));
            }
        } else if let Some(i) = indexed_name(&name, 'a') {
            if i <= self.scope.control_dim {
                return Ok(Expr::control(i - 1));
            }
        } else if let Some(&value) = self.scope.params.get(&name) {
            return Ok(Expr::Param { name, value });
        }
        Err(ParseError::UnknownIdentifier { name, offset: at })
    }
}

/// Parses a single expression.
pub fn parse_expression(text: &str, scope: &Scope<'_>) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text, *scope)?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

/// Parses a comma-separated list of expressions (matrix or vector entries).
pub fn parse_expression_list(text: &str, scope: &Scope<'_>) -> Result<Vec<Expr>, ParseError> {
    let mut p = Parser::new(text, *scope)?;
    let mut out = vec![p.expr()?];
    while p.tok == Tok::Comma {
        p.bump()?;
        out.push(p.expr()?);
    }
    if p.tok != Tok::End {
        return Err(p.unexpected("`,` or end of input"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scope(params: &BTreeMap<String, f64>) -> Scope<'_> {
        Scope {
            state_dim: 2,
            control_dim: 2,
            params,
        }
    }

    fn eval_str(text: &str, x: &[f64], a: &[f64]) -> Result<f64, EvalError> {
        let params = BTreeMap::from([("K".to_string(), 1.0)]);
        let e = parse_expression(text, &scope(&params)).unwrap();
        e.eval(&Env { t: 0.25, x, a })
    }

    #[test]
    fn control_variable_lookup() {
        let params = BTreeMap::new();
        let s = Scope {
            state_dim: 1,
            control_dim: 1,
            params: &params,
        };
        let e = parse_expression("a1", &s).unwrap();
        for a in [-1.0, 0.0, 1.0] {
            assert_eq!(e.eval(&Env { t: 0.0, x: &[0.3], a: &[a] }).unwrap(), a);
        }
    }

    #[test]
    fn put_payoff_arithmetic() {
        let v = eval_str("max(1 - x1, 0)", &[0.7, 0.0], &[]).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
        assert_eq!(eval_str("max(K - x1, 0)", &[1.7, 0.0], &[]).unwrap(), 0.0);
    }

    #[test]
    fn unbalanced_paren_reports_offset() {
        let params = BTreeMap::new();
        let err = parse_expression("abs(x1", &scope(&params)).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 7, .. }), "{err}");
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_str("1 - 2 - 3", &[0.0, 0.0], &[]).unwrap(), -4.0);
        assert_eq!(eval_str("8 / 4 / 2", &[0.0, 0.0], &[]).unwrap(), 1.0);
        assert_eq!(eval_str("1 + 2 * 3", &[0.0, 0.0], &[]).unwrap(), 7.0);
        assert_eq!(eval_str("-x1 * 2", &[3.0, 0.0], &[]).unwrap(), -6.0);
        assert_eq!(eval_str("2 - -x2", &[0.0, 5.0], &[]).unwrap(), 7.0);
        assert_eq!(eval_str("1.5e1 + .5", &[0.0, 0.0], &[]).unwrap(), 15.5);
        assert_eq!(eval_str("t", &[0.0, 0.0], &[]).unwrap(), 0.25);
    }

    #[test]
    fn negative_literal_folds() {
        let params = BTreeMap::new();
        assert_eq!(
            parse_expression("-3", &scope(&params)).unwrap(),
            Expr::Const(-3.0)
        );
        assert_eq!(
            parse_expression("-x1", &scope(&params)).unwrap(),
            Expr::unary(UnaryOp::Neg, Expr::state(0))
        );
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(eval_str("sign(x1)", &[0.0, 0.0], &[]).unwrap(), 0.0);
        assert_eq!(eval_str("sign(x1)", &[-2.0, 0.0], &[]).unwrap(), -1.0);
    }

    #[test]
    fn domain_errors() {
        assert_eq!(
            eval_str("1 / x1", &[0.0, 0.0], &[]),
            Err(EvalError::DivisionByZero)
        );
        assert!(matches!(
            eval_str("sqrt(x1)", &[-1.0, 0.0], &[]),
            Err(EvalError::SqrtOfNegative(_))
        ));
        assert_eq!(
            eval_str("exp(x1)", &[1000.0, 0.0], &[]),
            Err(EvalError::NonFinite)
        );
        assert_eq!(
            eval_str("pow(x1, 0.5)", &[-1.0, 0.0], &[]),
            Err(EvalError::NonFinite)
        );
    }

    #[test]
    fn resolution_errors() {
        let params = BTreeMap::new();
        let s = scope(&params);
        assert!(matches!(
            parse_expression("x3", &s),
            Err(ParseError::UnknownIdentifier { offset: 1, .. })
        ));
        assert!(matches!(
            parse_expression("1 + foo(x1)", &s),
            Err(ParseError::UnknownFunction { offset: 5, .. })
        ));
        assert!(matches!(
            parse_expression("max(x1)", &s),
            Err(ParseError::Arity { expected: 2, found: 1, .. })
        ));
        assert!(matches!(
            parse_expression("x1 x2", &s),
            Err(ParseError::Syntax { offset: 4, .. })
        ));
        assert!(matches!(
            parse_expression("1 + $", &s),
            Err(ParseError::Syntax { offset: 5, .. })
        ));
        assert!(matches!(
            parse_expression("--x1", &s),
            Err(ParseError::Syntax { offset: 2, .. })
        ));
    }

    #[test]
    fn list_splits_on_top_level_commas() {
        let params = BTreeMap::new();
        let v = parse_expression_list("max(x1, 0), 1, a2", &scope(&params)).unwrap();
        assert_eq!(v.len(), 3);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::Const),
            Just(Expr::time()),
            (0usize..2).prop_map(Expr::state),
            (0usize..2).prop_map(Expr::control),
            Just(Expr::param("K", 1.0)),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            let un = prop_oneof![
                Just(UnaryOp::Neg),
                Just(UnaryOp::Abs),
                Just(UnaryOp::Sqrt),
                Just(UnaryOp::Exp),
                Just(UnaryOp::Sign),
                Just(UnaryOp::Tanh),
            ];
            let bin = prop_oneof![
                Just(BinaryOp::Add),
                Just(BinaryOp::Sub),
                Just(BinaryOp::Mul),
                Just(BinaryOp::Div),
                Just(BinaryOp::Pow),
                Just(BinaryOp::Min),
                Just(BinaryOp::Max),
            ];
            prop_oneof![
                (un, inner.clone()).prop_map(|(op, e)| Expr::unary(op, e)),
                (bin, inner.clone(), inner).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parses_back_to_same_tree(e in arb_expr()) {
            let params = BTreeMap::from([("K".to_string(), 1.0)]);
            let text = e.to_string();
            let back = parse_expression(&text, &scope(&params)).unwrap();
            prop_assert_eq!(back, e, "text: {}", text);
        }
    }
}
