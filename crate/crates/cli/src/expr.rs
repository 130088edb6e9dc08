//! Observable expressions: polynomials in `x` and `v` built from numbers,
//! `+ - * /`, integer powers and parentheses, plus `pos(e)` (positive part)
//! and `L(p)`, the generator applied to a polynomial `p` in `x`.

use std::fmt;
use std::sync::Arc;

use ergolab_core::models::{Diffusion1D, Observable, Polynomial};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} (at column {column})")]
pub struct ExprError {
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    V,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, u32),
    Pos(Box<Expr>),
    Gen(Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c}"),
            Expr::X => write!(f, "x"),
            Expr::V => write!(f, "v"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "{a}/{b}"),
            Expr::Neg(a) => write!(f, "-{a}"),
            Expr::Pow(a, k) => write!(f, "{a}^{k}"),
            Expr::Pos(a) => write!(f, "pos({a})"),
            Expr::Gen(a) => write!(f, "L({a})"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            column: self.pos + 1,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return self.err("exponent must be a nonnegative integer");
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
            let k: u32 = match text.parse() {
                Ok(k) if k <= 64 => k,
                _ => return self.err("exponent too large"),
            };
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                match self.ident() {
                    "x" => Ok(Expr::X),
                    "v" => Ok(Expr::V),
                    name @ ("L" | "pos") => {
                        self.expect(b'(')?;
                        let inner = self.expr()?;
                        self.expect(b')')?;
                        Ok(if name == "L" {
                            Expr::Gen(Box::new(inner))
                        } else {
                            Expr::Pos(Box::new(inner))
                        })
                    }
                    other => {
                        let other = other.to_string();
                        self.pos = start;
                        self.err(format!("unknown name '{other}'; expected x, v, L(..) or pos(..)"))
                    }
                }
            }
            Some(c) => self.err(format!("unexpected '{}'", c as char)),
            None => self.err("unexpected end of expression"),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let bytes = self.src;
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&bytes[start..i]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(c) if c.is_finite() => {
                self.pos = i;
                Ok(Expr::Num(c))
            }
            _ => self.err(format!("bad number '{text}'")),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    Ok(e)
}

impl Expr {
    pub fn uses_v(&self) -> bool {
        match self {
            Expr::V => true,
            Expr::Num(_) | Expr::X => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.uses_v() || b.uses_v(),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Pos(a) | Expr::Gen(a) => a.uses_v(),
        }
    }

    pub fn uses_generator(&self) -> bool {
        match self {
            Expr::Gen(_) => true,
            Expr::Num(_) | Expr::X | Expr::V => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.uses_generator() || b.uses_generator()
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Pos(a) => a.uses_generator(),
        }
    }

    /// Expands the expression as a polynomial in `x`, if it is one.
    pub fn to_polynomial(&self) -> Option<Polynomial> {
        let p = match self {
            Expr::Num(c) => Polynomial::new(vec![*c]),
            Expr::X => Polynomial::monomial(1),
            Expr::V | Expr::Pos(_) | Expr::Gen(_) => return None,
            Expr::Add(a, b) => add(&a.to_polynomial()?, &b.to_polynomial()?, 1.0),
            Expr::Sub(a, b) => add(&a.to_polynomial()?, &b.to_polynomial()?, -1.0),
            Expr::Mul(a, b) => a.to_polynomial()?.mul(&b.to_polynomial()?),
            Expr::Div(a, b) => {
                let d = b.to_polynomial()?;
                if d.degree() != 0 || d.eval(0.0) == 0.0 {
                    return None;
                }
                scale(&a.to_polynomial()?, 1.0 / d.eval(0.0))
            }
            Expr::Neg(a) => scale(&a.to_polynomial()?, -1.0),
            Expr::Pow(a, k) => {
                let base = a.to_polynomial()?;
                (0..*k).fold(Polynomial::new(vec![1.0]), |acc, _| acc.mul(&base))
            }
        };
        Some(p)
    }
}

fn add(a: &Polynomial, b: &Polynomial, sign: f64) -> Polynomial {
    let n = a.coeffs.len().max(b.coeffs.len());
    let c = (0..n)
        .map(|i| a.coeffs.get(i).copied().unwrap_or(0.0) + sign * b.coeffs.get(i).copied().unwrap_or(0.0))
        .collect();
    Polynomial::new(c)
}

fn scale(a: &Polynomial, s: f64) -> Polynomial {
    Polynomial::new(a.coeffs.iter().map(|c| c * s).collect())
}

/// Where the expression is evaluated.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    /// The diffusion, when the model is one; required by `L(..)`.
    pub diffusion: Option<&'a Diffusion1D>,
    /// State index of `v`, when the model has velocities.
    pub v_index: Option<usize>,
}

enum Node {
    Num(f64),
    Coord(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, i32),
    Pos(Box<Node>),
    Obs(Observable),
}

impl Node {
    fn eval(&self, s: &[f64]) -> f64 {
        match self {
            Node::Num(c) => *c,
            Node::Coord(i) => s[*i],
            Node::Add(a, b) => a.eval(s) + b.eval(s),
            Node::Sub(a, b) => a.eval(s) - b.eval(s),
            Node::Mul(a, b) => a.eval(s) * b.eval(s),
            Node::Div(a, b) => a.eval(s) / b.eval(s),
            Node::Neg(a) => -a.eval(s),
            Node::Pow(a, k) => a.eval(s).powi(*k),
            Node::Pos(a) => a.eval(s).max(0.0),
            Node::Obs(o) => o.eval(s),
        }
    }
}

fn lower(e: &Expr, ctx: Context) -> Result<Node, String> {
    let bin = |a: &Expr, b: &Expr| -> Result<(Box<Node>, Box<Node>), String> {
        Ok((Box::new(lower(a, ctx)?), Box::new(lower(b, ctx)?)))
    };
    Ok(match e {
        Expr::Num(c) => Node::Num(*c),
        Expr::X => Node::Coord(0),
        Expr::V => Node::Coord(ctx.v_index.ok_or("'v' needs a model with velocities")?),
        Expr::Add(a, b) => {
            let (a, b) = bin(a, b)?;
            Node::Add(a, b)
        }
        Expr::Sub(a, b) => {
            let (a, b) = bin(a, b)?;
            Node::Sub(a, b)
        }
        Expr::Mul(a, b) => {
            let (a, b) = bin(a, b)?;
            Node::Mul(a, b)
        }
        Expr::Div(a, b) => {
            let (a, b) = bin(a, b)?;
            Node::Div(a, b)
        }
        Expr::Neg(a) => Node::Neg(Box::new(lower(a, ctx)?)),
        Expr::Pow(a, k) => Node::Pow(Box::new(lower(a, ctx)?), *k as i32),
        Expr::Pos(a) => Node::Pos(Box::new(lower(a, ctx)?)),
        Expr::Gen(a) => Node::Obs(generator(a, ctx)?),
    })
}

fn generator(arg: &Expr, ctx: Context) -> Result<Observable, String> {
    let model = ctx.diffusion.ok_or("L(..) needs a one-dimensional diffusion model")?;
    let p = arg.to_polynomial().ok_or("the argument of L(..) must be a polynomial in x")?;
    Ok(Observable::generator_of(model, p))
}

/// Builds the observable. Plain coordinates, polynomials and `L(p)` map to
/// the dedicated constructors; anything else is evaluated as a tree.
pub fn compile(src: &str, ctx: Context) -> Result<Observable, String> {
    let e = parse(src).map_err(|e| e.to_string())?;
    if e.uses_v() && ctx.v_index.is_none() {
        return Err("'v' needs a model with velocities".into());
    }
    let label = src.trim().to_string();
    let obs = match &e {
        Expr::X => Observable::coordinate(0),
        Expr::V => Observable::coordinate(ctx.v_index.unwrap_or(1)),
        Expr::Gen(a) => generator(a, ctx)?,
        _ => match e.to_polynomial() {
            Some(p) if ctx.v_index.is_none() => Observable::polynomial(p),
            _ => {
                let node = Arc::new(lower(&e, ctx)?);
                Observable::new(label.clone(), move |s: &[f64]| node.eval(s))
            }
        },
    };
    Ok(obs)
}
