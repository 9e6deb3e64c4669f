use super::{BinaryOp, Expr, UnaryOp};

pub(super) fn derivative(e: &Expr, k: usize) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(j) => Expr::Const(if *j == k { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = derivative(a, k);
            if da.is_zero() {
                return Expr::Const(0.0);
            }
            let a = (**a).clone();
            let outer = match op {
                UnaryOp::Neg => return Expr::neg(da),
                UnaryOp::Sin => Expr::unary(UnaryOp::Cos, a),
                UnaryOp::Cos => Expr::neg(Expr::unary(UnaryOp::Sin, a)),
                UnaryOp::Exp => Expr::unary(UnaryOp::Exp, a),
                UnaryOp::Log => return Expr::div(da, a),
                UnaryOp::Sqrt => {
                    return Expr::div(
                        da,
                        Expr::mul(Expr::Const(2.0), Expr::unary(UnaryOp::Sqrt, a)),
                    )
                }
                // sign(a); undefined at 0, where evaluation reports a domain error
                UnaryOp::Abs => Expr::div(a.clone(), Expr::unary(UnaryOp::Abs, a)),
            };
            Expr::mul(outer, da)
        }
        Expr::Binary(op, a, b) => {
            let da = derivative(a, k);
            let db = derivative(b, k);
            match op {
                BinaryOp::Add => Expr::add(da, db),
                BinaryOp::Sub => Expr::sub(da, db),
                BinaryOp::Mul => Expr::add(
                    Expr::mul(da, (**b).clone()),
                    Expr::mul((**a).clone(), db),
                ),
                BinaryOp::Div => {
                    if db.is_zero() {
                        Expr::div(da, (**b).clone())
                    } else {
                        Expr::div(
                            Expr::sub(
                                Expr::mul(da, (**b).clone()),
                                Expr::mul((**a).clone(), db),
                            ),
                            Expr::pow((**b).clone(), 2),
                        )
                    }
                }
            }
        }
        Expr::Pow(a, n) => {
            let da = derivative(a, k);
            if da.is_zero() {
                return Expr::Const(0.0);
            }
            Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                da,
            )
        }
    }
}
