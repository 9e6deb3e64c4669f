use smallvec::SmallVec;

use super::{BinaryOp, Expr, ExprError, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
    Pow(i32),
}

/// Postfix program for an [`Expr`], evaluated on a small stack.
///
/// Produces bit-identical results to [`Expr::eval`]; only the traversal
/// differs.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    ops: Vec<Op>,
    max_var: Option<usize>,
}

impl Compiled {
    pub fn new(e: &Expr) -> Self {
        let mut ops = Vec::with_capacity(e.size());
        emit(e, &mut ops);
        Compiled {
            ops,
            max_var: e.max_var(),
        }
    }

    /// Constant value when the program does not read any variable.
    pub fn as_const(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(c)] => Some(*c),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        if let Some(k) = self.max_var {
            if k >= x.len() {
                return Err(ExprError::DimensionMismatch {
                    expected: k + 1,
                    got: x.len(),
                });
            }
        }
        let mut stack: SmallVec<[f64; 32]> = SmallVec::new();
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Var(k) => x[k],
                Op::Unary(u) => {
                    let a = stack.pop().expect("well-formed program");
                    u.apply(a)
                }
                Op::Binary(b) => {
                    let rhs = stack.pop().expect("well-formed program");
                    let lhs = stack.pop().expect("well-formed program");
                    b.apply(lhs, rhs)
                }
                Op::Pow(n) => {
                    let a = stack.pop().expect("well-formed program");
                    a.powi(n)
                }
            };
            if !v.is_finite() {
                return Err(ExprError::Domain);
            }
            stack.push(v);
        }
        Ok(stack.pop().expect("well-formed program"))
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(k) => ops.push(Op::Var(*k)),
        Expr::Unary(u, a) => {
            emit(a, ops);
            ops.push(Op::Unary(*u));
        }
        Expr::Binary(b, l, r) => {
            emit(l, ops);
            emit(r, ops);
            ops.push(Op::Binary(*b));
        }
        Expr::Pow(a, n) => {
            emit(a, ops);
            ops.push(Op::Pow(*n));
        }
    }
}
