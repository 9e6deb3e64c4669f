//! Scalar expressions in the state variables `x1..xd`.
//!
//! Vector-field components and jump rates are written as small arithmetic
//! expressions. They are parsed once into an immutable [`Expr`] tree,
//! differentiated symbolically when Jacobians or Lie brackets are needed, and
//! compiled to a flat stack program ([`Compiled`]) for the integrator's inner
//! loop.
//!
//! Grammar (standard precedence, `^` binds tighter than unary minus and is
//! right-associative; exponents must fold to an integer constant):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | xK | func '(' sum ')' | '(' sum ')'
//! func    := sin | cos | exp | log | sqrt | abs
//! ```

mod compile;
mod diff;
mod parse;

use std::fmt;

use thiserror::Error;

pub use compile::Compiled;
pub use parse::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("exponent must be a constant integer (at byte {0})")]
    NonIntegerExponent(usize),
    #[error("non-finite intermediate value during evaluation")]
    Domain,
    #[error("point has dimension {got}, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {index} outside 1..={dim}")]
    VariableOutOfRange { index: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub(crate) fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    #[inline]
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            UnaryOp::Neg => -v,
            UnaryOp::Sin => v.sin(),
            UnaryOp::Cos => v.cos(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Log => {
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NAN
                }
            }
            UnaryOp::Sqrt => v.sqrt(),
            UnaryOp::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    #[inline]
    pub(crate) fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

/// Expression tree. Variables are stored 0-based (`Var(0)` prints as `x1`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Integer power; the exponent is part of the node so differentiation stays
    /// closed over the grammar.
    Pow(Box<Expr>, i32),
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    /// `x_{k+1}` for a 0-based index `k`.
    pub fn var(k: usize) -> Self {
        Expr::Var(k)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Largest 0-based variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(k) => Some(*k),
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(p), Some(q)) => Some(p.max(q)),
                (p, q) => p.or(q),
            },
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) | Expr::Pow(a, _) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Tree-walking evaluation. Fails on any non-finite intermediate.
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(k) => *x.get(*k).ok_or(ExprError::DimensionMismatch {
                expected: k + 1,
                got: x.len(),
            })?,
            Expr::Unary(op, a) => op.apply(a.eval(x)?),
            Expr::Binary(op, a, b) => op.apply(a.eval(x)?, b.eval(x)?),
            Expr::Pow(a, n) => a.eval(x)?.powi(*n),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain)
        }
    }

    /// Exact partial derivative with respect to the 0-based variable `k`.
    pub fn derivative(&self, k: usize) -> Expr {
        diff::derivative(self, k)
    }

    pub fn compile(&self) -> Compiled {
        Compiled::new(self)
    }

    // Constructors with constant folding. They only fold constants and the
    // neutral/absorbing elements 0 and 1; no other rewriting happens.

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Unary(UnaryOp::Neg, inner) => *inner,
            a => Expr::Unary(UnaryOp::Neg, Box::new(a)),
        }
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        if op == UnaryOp::Neg {
            return Expr::neg(a);
        }
        if let Expr::Const(c) = a {
            let v = op.apply(c);
            if v.is_finite() {
                return Expr::Const(v);
            }
        }
        Expr::Unary(op, Box::new(a))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p + q),
            (a, b) if a.is_zero() => b,
            (a, b) if b.is_zero() => a,
            (a, b) => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p - q),
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => Expr::neg(b),
            (a, b) => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p * q),
            (a, _) if a.is_zero() => Expr::Const(0.0),
            (_, b) if b.is_zero() => Expr::Const(0.0),
            (Expr::Const(p), b) if p == 1.0 => b,
            (a, Expr::Const(q)) if q == 1.0 => a,
            (Expr::Const(p), b) if p == -1.0 => Expr::neg(b),
            (a, Expr::Const(q)) if q == -1.0 => Expr::neg(a),
            (a, b) => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(p), Expr::Const(q)) if q != 0.0 => Expr::Const(p / q),
            (a, b) if a.is_zero() && !b.is_zero() => Expr::Const(0.0),
            (a, Expr::Const(q)) if q == 1.0 => a,
            (a, b) => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        match (a, n) {
            (_, 0) => Expr::Const(1.0),
            (a, 1) => a,
            (Expr::Const(c), n) if c.powi(n).is_finite() => Expr::Const(c.powi(n)),
            (a, n) => Expr::Pow(Box::new(a), n),
        }
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // `Display` for f64 is the shortest representation that round-trips.
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{})", -c)
    } else {
        write!(f, "{c}")
    }
}

/// Fully parenthesised form; reparses to an identical tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_number(f, *c),
            Expr::Var(k) => write!(f, "x{}", k + 1),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(a, n) if *n < 0 => write!(f, "({a}^(-{}))", -(*n as i64)),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
        }
    }
}
