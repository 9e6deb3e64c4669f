//! Single-regime flows, composite flows, the variational equation and
//! pullback families.
//!
//! All integration is classical fixed-step RK4. A duration `t` is covered by
//! `floor(t / h)` full steps and one final partial step, so the endpoint is
//! reached exactly in time.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::system::{JumpSequence, SwitchingSystem};

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Default relative tolerance for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Below this `|det J|` the variational flow is treated as blown up.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub end: Vec<f64>,
    /// `DΦ_t(x0)`, present for variational integration.
    pub jacobian: Option<DMatrix<f64>>,
    pub steps: usize,
    pub clamps: usize,
}

/// Number of full steps and the length of the trailing partial step.
fn step_plan(t: f64, h: f64) -> (usize, f64) {
    let ratio = t / h;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        return (nearest as usize, 0.0);
    }
    let full = ratio.floor();
    (full as usize, t - full * h)
}

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("integration step must be positive, got {h}")))
    }
}

fn check_duration(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("duration must be non-negative, got {t}")))
    }
}

/// Reusable RK4 workspace bound to one system. Accumulates step and clamp
/// counters across calls.
pub struct Integrator<'s> {
    sys: &'s SwitchingSystem,
    h: f64,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    pub steps: usize,
    pub clamps: usize,
}

impl<'s> Integrator<'s> {
    pub fn new(sys: &'s SwitchingSystem, h: f64) -> Result<Self> {
        check_step(h)?;
        let d = sys.dim();
        Ok(Integrator {
            sys,
            h,
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            tmp: vec![0.0; d],
            steps: 0,
            clamps: 0,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn system(&self) -> &'s SwitchingSystem {
        self.sys
    }

    /// Replaces `x` by `Φ^regime_t(x)`.
    pub fn advance(&mut self, regime: usize, x: &mut [f64], t: f64) -> Result<()> {
        if t <= 0.0 {
            check_duration(t)?;
            return Ok(());
        }
        let field = self.sys.field(regime);
        if let Some(c) = field.constant() {
            for (xk, ck) in x.iter_mut().zip(c) {
                *xk += t * ck;
            }
            self.steps += 1;
            self.finish_step(x);
            return Ok(());
        }
        let (full, rem) = step_plan(t, self.h);
        for _ in 0..full {
            self.rk4_step(regime, x, self.h)?;
        }
        if rem > 0.0 {
            self.rk4_step(regime, x, rem)?;
        }
        Ok(())
    }

    fn eval(&mut self, regime: usize, which: u8, at_tmp: bool, x: &[f64]) -> Result<()> {
        let field = self.sys.field(regime);
        let src: &[f64] = if at_tmp { &self.tmp } else { x };
        let out = match which {
            1 => &mut self.k1,
            2 => &mut self.k2,
            3 => &mut self.k3,
            _ => &mut self.k4,
        };
        if field.eval_into(src, out) {
            Ok(())
        } else {
            Err(Error::FieldDomain {
                regime,
                point: src.to_vec(),
            })
        }
    }

    #[inline]
    fn rk4_step(&mut self, regime: usize, x: &mut [f64], h: f64) -> Result<()> {
        let d = x.len();
        self.eval(regime, 1, false, x)?;
        for k in 0..d {
            self.tmp[k] = x[k] + 0.5 * h * self.k1[k];
        }
        self.eval(regime, 2, true, x)?;
        for k in 0..d {
            self.tmp[k] = x[k] + 0.5 * h * self.k2[k];
        }
        self.eval(regime, 3, true, x)?;
        for k in 0..d {
            self.tmp[k] = x[k] + h * self.k3[k];
        }
        self.eval(regime, 4, true, x)?;
        for k in 0..d {
            x[k] += h / 6.0 * (self.k1[k] + 2.0 * self.k2[k] + 2.0 * self.k3[k] + self.k4[k]);
        }
        self.steps += 1;
        self.finish_step(x);
        Ok(())
    }

    #[inline]
    fn finish_step(&mut self, x: &mut [f64]) {
        let domain = self.sys.domain();
        domain.wrap_point(x);
        if domain.clamp(x, self.sys.clamp_margin()) {
            self.clamps += 1;
        }
    }
}

/// `Φ^regime_t(x0)` by RK4 with step `h`.
pub fn integrate(
    sys: &SwitchingSystem,
    regime: usize,
    x0: &[f64],
    t: f64,
    h: f64,
) -> Result<FlowResult> {
    check_regime(sys, regime)?;
    check_point(sys, x0)?;
    check_duration(t)?;
    let mut it = Integrator::new(sys, h)?;
    let mut x = x0.to_vec();
    it.advance(regime, &mut x, t)?;
    Ok(FlowResult {
        end: x,
        jacobian: None,
        steps: it.steps,
        clamps: it.clamps,
    })
}

/// All points `x_0..x_n` of a composite trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositePath {
    pub points: Vec<Vec<f64>>,
    pub steps: usize,
    pub clamps: usize,
}

impl CompositePath {
    pub fn end(&self) -> &[f64] {
        self.points.last().expect("at least the start point")
    }
}

/// Follows `F^{i_0}` for `u_1`, then `F^{i_1}` for `u_2`, and so on.
pub fn composite_flow(
    sys: &SwitchingSystem,
    x0: &[f64],
    seq: &JumpSequence,
    h: f64,
) -> Result<CompositePath> {
    seq.check(sys)?;
    check_point(sys, x0)?;
    let mut it = Integrator::new(sys, h)?;
    let mut x = x0.to_vec();
    let mut points = Vec::with_capacity(seq.len() + 1);
    points.push(x.clone());
    for (k, &u) in seq.durations().iter().enumerate() {
        it.advance(seq.indices()[k], &mut x, u)?;
        points.push(x.clone());
    }
    Ok(CompositePath {
        points,
        steps: it.steps,
        clamps: it.clamps,
    })
}

/// Integrates the state together with `J' = DF(x) J`, `J(0) = I`.
pub fn variational_integrate(
    sys: &SwitchingSystem,
    regime: usize,
    x0: &[f64],
    t: f64,
    h: f64,
) -> Result<FlowResult> {
    check_regime(sys, regime)?;
    check_point(sys, x0)?;
    check_duration(t)?;
    check_step(h)?;
    let d = sys.dim();
    let field = sys.field(regime);
    let mut y = vec![0.0; d + d * d];
    y[..d].copy_from_slice(x0);
    for k in 0..d {
        y[d + k * d + k] = 1.0;
    }
    let mut steps = 0;
    let mut clamps = 0;
    if t > 0.0 && field.constant().is_none() {
        let n = y.len();
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut tmp = vec![0.0; n];
        let mut jac = vec![0.0; d * d];
        let rhs = |y: &[f64], out: &mut [f64], jac: &mut [f64]| -> Result<()> {
            let (x, j) = y.split_at(d);
            let (fx, dj) = out.split_at_mut(d);
            if !field.eval_into(x, fx) || !field.jacobian_into(x, jac) {
                return Err(Error::FieldDomain {
                    regime,
                    point: x.to_vec(),
                });
            }
            for r in 0..d {
                for c in 0..d {
                    let mut s = 0.0;
                    for m in 0..d {
                        s += jac[r * d + m] * j[m * d + c];
                    }
                    dj[r * d + c] = s;
                }
            }
            Ok(())
        };
        let (full, rem) = step_plan(t, h);
        let mut do_step = |y: &mut [f64], h: f64| -> Result<()> {
            rhs(y, &mut k[0], &mut jac)?;
            for m in 0..n {
                tmp[m] = y[m] + 0.5 * h * k[0][m];
            }
            rhs(&tmp, &mut k[1], &mut jac)?;
            for m in 0..n {
                tmp[m] = y[m] + 0.5 * h * k[1][m];
            }
            rhs(&tmp, &mut k[2], &mut jac)?;
            for m in 0..n {
                tmp[m] = y[m] + h * k[2][m];
            }
            rhs(&tmp, &mut k[3], &mut jac)?;
            for m in 0..n {
                y[m] += h / 6.0 * (k[0][m] + 2.0 * k[1][m] + 2.0 * k[2][m] + k[3][m]);
            }
            steps += 1;
            let domain = sys.domain();
            domain.wrap_point(&mut y[..d]);
            if domain.clamp(&mut y[..d], sys.clamp_margin()) {
                clamps += 1;
            }
            Ok(())
        };
        for _ in 0..full {
            do_step(&mut y, h)?;
        }
        if rem > 0.0 {
            do_step(&mut y, rem)?;
        }
    } else if t > 0.0 {
        let c = field.constant().expect("checked");
        for m in 0..d {
            y[m] += t * c[m];
        }
        steps = 1;
        sys.domain().wrap_point(&mut y[..d]);
        if sys.domain().clamp(&mut y[..d], sys.clamp_margin()) {
            clamps = 1;
        }
    }
    let jacobian = DMatrix::from_row_slice(d, d, &y[d..]);
    let det = jacobian.determinant();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::SingularJacobian { det });
    }
    y.truncate(d);
    Ok(FlowResult {
        end: y,
        jacobian: Some(jacobian),
        steps,
        clamps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PullbackVariant {
    /// `{F^{i_0}(x_0), Φ*(1) F^{i_1}(x_0), …, Φ*(m) F^{i_m}(x_0)}`.
    Tilde,
    /// `{Φ*(k) F^{i_k}(x_0) − Φ*(m) F^{i_m}(x_0) : k < m}`.
    Difference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackFamily {
    pub base: Vec<f64>,
    pub sequence: JumpSequence,
    pub variant: PullbackVariant,
    pub vectors: Vec<Vec<f64>>,
}

/// Pulls each `F^{i_k}(x_k)` back to `x_0` through the variational
/// Jacobians of the preceding segments.
pub fn pullback_family(
    sys: &SwitchingSystem,
    x0: &[f64],
    seq: &JumpSequence,
    variant: PullbackVariant,
    h: f64,
) -> Result<PullbackFamily> {
    seq.check(sys)?;
    check_point(sys, x0)?;
    if let Some(u) = seq.durations().iter().find(|&&u| u <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "pullback needs positive durations, got {u}"
        )));
    }
    let d = sys.dim();
    let mut x = x0.to_vec();
    let mut lus = Vec::with_capacity(seq.len());
    let mut pulled = Vec::with_capacity(seq.len() + 1);
    let f0 = sys
        .field(seq.indices()[0])
        .eval(&x)
        .ok_or_else(|| Error::FieldDomain {
            regime: seq.indices()[0],
            point: x.clone(),
        })?;
    pulled.push(f0);
    for (k, &u) in seq.durations().iter().enumerate() {
        let r = variational_integrate(sys, seq.indices()[k], &x, u, h)?;
        x = r.end;
        lus.push(r.jacobian.expect("variational").lu());
        let next = seq.indices()[k + 1];
        let fk = sys.field(next).eval(&x).ok_or_else(|| Error::FieldDomain {
            regime: next,
            point: x.clone(),
        })?;
        let mut v = DVector::from_vec(fk);
        for lu in lus.iter().rev() {
            v = lu
                .solve(&v)
                .ok_or(Error::SingularJacobian { det: lu.determinant() })?;
        }
        debug_assert_eq!(v.len(), d);
        pulled.push(v.iter().copied().collect());
    }
    let vectors = match variant {
        PullbackVariant::Tilde => pulled,
        PullbackVariant::Difference => {
            let last = pulled.last().expect("non-empty").clone();
            pulled[..pulled.len() - 1]
                .iter()
                .map(|v| v.iter().zip(&last).map(|(a, b)| a - b).collect())
                .collect()
        }
    };
    Ok(PullbackFamily {
        base: x0.to_vec(),
        sequence: seq.clone(),
        variant,
        vectors,
    })
}

/// Numerical rank of the `d x m` matrix whose columns are `vectors`:
/// the number of singular values above `tol * σ_max`. Singular values are
/// returned in decreasing order.
pub fn numerical_rank(vectors: &[Vec<f64>], dim: usize, tol: f64) -> (usize, Vec<f64>) {
    if vectors.is_empty() || dim == 0 {
        return (0, Vec::new());
    }
    let m = DMatrix::from_fn(dim, vectors.len(), |r, c| vectors[c][r]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv[0];
    if !(smax > 0.0) {
        return (0, sv);
    }
    let rank = sv.iter().filter(|&&s| s > tol * smax).count();
    (rank, sv)
}

/// Rank of a pullback family; the submersion criterion holds iff it equals
/// the state dimension.
pub fn submersion_rank(family: &PullbackFamily, tol: f64) -> (usize, Vec<f64>) {
    numerical_rank(&family.vectors, family.base.len(), tol)
}

fn check_regime(sys: &SwitchingSystem, regime: usize) -> Result<()> {
    if regime < sys.regimes() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "regime {regime} outside 0..{}",
            sys.regimes()
        )))
    }
}

fn check_point(sys: &SwitchingSystem, x: &[f64]) -> Result<()> {
    if x.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "point has dimension {}, system has {}",
            x.len(),
            sys.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite point {x:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::system::{StateBox, VectorField};

    fn decay() -> SwitchingSystem {
        SwitchingSystem::builder(StateBox::cube(1, -2.0, 2.0).unwrap())
            .field_exprs(&["-x1"])
            .unwrap()
            .lambda_bar(1.0)
            .build()
            .unwrap()
    }

    /// `F^0 = A x`, `F^1 = A (x - a)`.
    fn linear(a: [[f64; 2]; 2], p: [f64; 2]) -> SwitchingSystem {
        let f0 = [
            format!("({})*x1 + ({})*x2", a[0][0], a[0][1]),
            format!("({})*x1 + ({})*x2", a[1][0], a[1][1]),
        ];
        let f1 = [
            format!("({})*(x1 - ({})) + ({})*(x2 - ({}))", a[0][0], p[0], a[0][1], p[1]),
            format!("({})*(x1 - ({})) + ({})*(x2 - ({}))", a[1][0], p[0], a[1][1], p[1]),
        ];
        SwitchingSystem::builder(StateBox::cube(2, -6.0, 6.0).unwrap())
            .field_exprs(&[&f0[0], &f0[1]])
            .unwrap()
            .field_exprs(&[&f1[0], &f1[1]])
            .unwrap()
            .constant_rate(0, 1, 1.0)
            .constant_rate(1, 0, 1.0)
            .lambda_bar(3.0)
            .clamp_margin(1e6)
            .build()
            .unwrap()
    }

    /// Scaling-and-squaring Taylor exponential, independent of the integrator.
    fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = a.abs().column_sum().max();
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let b = a / 2f64.powi(s);
        let n = a.nrows();
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &b / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn exponential_decay() {
        let r = integrate(&decay(), 0, &[1.0], 1.0, 1e-3).unwrap();
        assert!((r.end[0] - (-1f64).exp()).abs() < 1e-9);
        assert_eq!(r.steps, 1000);
        assert_eq!(r.clamps, 0);
    }

    #[test]
    fn zero_duration_is_identity() {
        let r = integrate(&decay(), 0, &[0.7], 0.0, 1e-3).unwrap();
        assert_eq!(r.end, vec![0.7]);
        assert_eq!(r.steps, 0);
        let v = variational_integrate(&decay(), 0, &[0.7], 0.0, 1e-3).unwrap();
        assert_eq!(v.jacobian.unwrap(), DMatrix::identity(1, 1));
    }

    #[test]
    fn partial_final_step_lands_on_t() {
        let r = integrate(&decay(), 0, &[1.0], 0.0105, 1e-3).unwrap();
        assert_eq!(r.steps, 11);
        assert!((r.end[0] - (-0.0105f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn rotation_spiral_after_pi() {
        let sys = linear([[-1.0, -1.0], [1.0, -1.0]], [1.0, 0.0]);
        let r = integrate(&sys, 0, &[1.0, 0.0], PI, 1e-3).unwrap();
        assert!((r.end[0] + (-PI).exp()).abs() < 1e-6, "{:?}", r.end);
        assert!(r.end[1].abs() < 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sys = decay();
        let exact = (-1f64).exp();
        let err = |h: f64| (integrate(&sys, 0, &[1.0], 1.0, h).unwrap().end[0] - exact).abs();
        let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
        assert!(e1 / e2 >= 12.0, "{}", e1 / e2);
        assert!(e2 / e3 >= 12.0, "{}", e2 / e3);
    }

    #[test]
    fn torus_composite_translation() {
        let sys = SwitchingSystem::builder(StateBox::unit_torus(2).unwrap())
            .field_exprs(&["1", "0"])
            .unwrap()
            .field_exprs(&["0", "1"])
            .unwrap()
            .constant_rate(0, 1, 1.0)
            .constant_rate(1, 0, 1.0)
            .lambda_bar(2.0)
            .build()
            .unwrap();
        let seq = JumpSequence::new(vec![0, 1, 0], vec![0.25, 0.5]).unwrap();
        let p = composite_flow(&sys, &[0.0, 0.0], &seq, 1e-3).unwrap();
        assert_eq!(p.end(), &[0.25, 0.5]);
        let seq = JumpSequence::new(vec![0, 1, 0], vec![1.75, 2.5]).unwrap();
        let p = composite_flow(&sys, &[0.5, 0.5], &seq, 1e-3).unwrap();
        assert_eq!(p.end(), &[0.25, 0.0]);
        let empty = composite_flow(&sys, &[0.3, 0.4], &JumpSequence::empty(1), 1e-3).unwrap();
        assert_eq!(empty.points, vec![vec![0.3, 0.4]]);

        let seq = JumpSequence::new(vec![1, 0, 1], vec![0.3, 0.9]).unwrap();
        let fam = pullback_family(&sys, &[0.1, 0.2], &seq, PullbackVariant::Tilde, 1e-3).unwrap();
        assert_eq!(fam.vectors, vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(submersion_rank(&fam, DEFAULT_RANK_TOL).0, 2);
    }

    #[test]
    fn linear_jacobian_is_matrix_exponential() {
        let a = [[-1.0, -1.0], [1.0, -1.0]];
        let sys = linear(a, [1.0, 0.0]);
        let am = DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]);
        for &t in &[0.1, 0.7, 1.3, 2.0] {
            for x0 in [[0.3, -0.2], [2.0, 1.0]] {
                let r = variational_integrate(&sys, 1, &x0, t, 1e-3).unwrap();
                let diff = (r.jacobian.unwrap() - expm(&(&am * t))).abs().max();
                assert!(diff <= 1e-8, "t={t}: {diff}");
            }
        }
    }

    #[test]
    fn liouville_determinant() {
        let fields = ["x1*x2 - x1^3", "sin(x1) - x2/2"];
        let sys = SwitchingSystem::builder(StateBox::cube(2, -3.0, 3.0).unwrap())
            .field_exprs(&fields)
            .unwrap()
            .lambda_bar(1.0)
            .build()
            .unwrap();
        // augment with the divergence as a third component
        let f: Vec<_> = fields.iter().map(|s| crate::expr::parse(s, 2).unwrap()).collect();
        let div = crate::expr::Expr::add(f[0].derivative(0), f[1].derivative(1));
        let mut aug: Vec<_> = f.clone();
        aug.push(div);
        let aug_sys = SwitchingSystem::builder(StateBox::new(vec![-3.0, -3.0, -1e3], vec![3.0, 3.0, 1e3]).unwrap())
            .field(VectorField::from_exprs(aug))
            .lambda_bar(1.0)
            .build()
            .unwrap();
        let x0 = [0.4, -0.3];
        let t = 1.5;
        let v = variational_integrate(&sys, 0, &x0, t, 1e-3).unwrap();
        let w = integrate(&aug_sys, 0, &[x0[0], x0[1], 0.0], t, 1e-3).unwrap();
        let det = v.jacobian.unwrap().determinant();
        assert!((det - w.end[2].exp()).abs() <= 1e-6 * det.abs().max(1.0), "{det} vs {}", w.end[2].exp());
        assert!((v.end[0] - w.end[0]).abs() < 1e-12);
    }

    #[test]
    fn linear_pullback_closed_form() {
        let a = [[-1.0, -1.0], [1.0, -1.0]];
        let p = [1.0, 0.0];
        let sys = linear(a, p);
        let am = DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]);
        let x0 = DVector::from_vec(vec![0.5, 0.8]);
        let s = 0.6;
        let seq = JumpSequence::new(vec![0, 1], vec![s]).unwrap();
        let fam = pullback_family(&sys, x0.as_slice(), &seq, PullbackVariant::Tilde, 1e-3).unwrap();
        let ax0 = &am * &x0;
        let x1 = expm(&(&am * s)) * &x0;
        let want = expm(&(&am * -s)) * (&am * (x1 - DVector::from_vec(p.to_vec())));
        for k in 0..2 {
            assert!((fam.vectors[0][k] - ax0[k]).abs() < 1e-12);
            assert!((fam.vectors[1][k] - want[k]).abs() < 1e-6);
        }
        let diff = pullback_family(&sys, x0.as_slice(), &seq, PullbackVariant::Difference, 1e-3).unwrap();
        assert_eq!(diff.vectors.len(), 1);
        for k in 0..2 {
            assert!((diff.vectors[0][k] - (ax0[k] - want[k])).abs() < 1e-6);
        }
    }

    #[test]
    fn invariant_line_gives_rank_one() {
        let sys = linear([[-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0]);
        let seq = JumpSequence::new(vec![0, 1, 0, 1], vec![0.3, 0.7, 0.2]).unwrap();
        let fam = pullback_family(&sys, &[0.4, 0.0], &seq, PullbackVariant::Difference, 1e-3).unwrap();
        assert_eq!(fam.vectors.len(), 3);
        assert_eq!(submersion_rank(&fam, DEFAULT_RANK_TOL).0, 1);
        // differences stay on R·a everywhere; the tilde family spans off the line
        let fam = pullback_family(&sys, &[0.4, 0.3], &seq, PullbackVariant::Difference, 1e-3).unwrap();
        assert_eq!(submersion_rank(&fam, DEFAULT_RANK_TOL).0, 1);
        let fam = pullback_family(&sys, &[0.4, 0.3], &seq, PullbackVariant::Tilde, 1e-3).unwrap();
        assert_eq!(submersion_rank(&fam, DEFAULT_RANK_TOL).0, 2);
    }

    #[test]
    fn rank_of_simple_families() {
        let v = vec![1.0, -2.0, 0.5];
        let w: Vec<f64> = v.iter().map(|a| 2.0 * a).collect();
        assert_eq!(numerical_rank(&[v, w], 3, DEFAULT_RANK_TOL).0, 1);
        assert_eq!(numerical_rank(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2, DEFAULT_RANK_TOL).0, 2);
        assert_eq!(numerical_rank(&[vec![0.0, 0.0]], 2, DEFAULT_RANK_TOL).0, 0);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let sys = SwitchingSystem::builder(StateBox::cube(1, -1.0, 1.0).unwrap())
            .field(VectorField::programmatic(
                1,
                Arc::new(|x: &[f64], o: &mut [f64]| o[0] = -40.0 * x[0]),
                Some(Arc::new(|_: &[f64], o: &mut [f64]| o[0] = -40.0)),
            ))
            .lambda_bar(1.0)
            .build()
            .unwrap();
        // det = exp(-40 t) drops below the threshold
        assert!(matches!(
            variational_integrate(&sys, 0, &[0.5], 1.0, 1e-3),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn clamps_are_counted() {
        let sys = SwitchingSystem::builder(StateBox::cube(1, 0.0, 1.0).unwrap())
            .field_exprs(&["1"])
            .unwrap()
            .lambda_bar(1.0)
            .clamp_margin(0.01)
            .build()
            .unwrap();
        let r = integrate(&sys, 0, &[0.5], 2.0, 1e-3).unwrap();
        assert_eq!(r.end, vec![1.01]);
        assert_eq!(r.clamps, 1);
    }

    fn random_orthogonal(seed: [f64; 9]) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &seed).qr().q()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn flow_semigroup(s in 0.0..1.0f64, t in 0.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64) {
            let sys = SwitchingSystem::builder(StateBox::cube(2, -10.0, 10.0).unwrap())
                .field_exprs(&["-x1 + x2/(1+x1^2)", "-x2 + sin(x1)"]).unwrap()
                .lambda_bar(1.0).build().unwrap();
            // h divides both durations evenly so the RK4 grids coincide
            let h = 1e-3;
            let s = (s / h).round() * h;
            let t = (t / h).round() * h;
            let a = integrate(&sys, 0, &[x, y], s, h).unwrap();
            let b = integrate(&sys, 0, &a.end, t, h).unwrap();
            let c = integrate(&sys, 0, &[x, y], s + t, h).unwrap();
            for k in 0..2 {
                prop_assert!((b.end[k] - c.end[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn composite_concatenation(
            u1 in 0.0..1.0f64, u2 in 0.0..1.0f64, u3 in 0.0..1.0f64,
            a00 in -1.0..1.0f64, a01 in -1.0..1.0f64, a10 in -1.0..1.0f64, a11 in -1.0..1.0f64,
            x in -1.0..1.0f64, y in -1.0..1.0f64,
        ) {
            let sys = linear([[a00, a01], [a10, a11]], [0.5, -0.5]);
            let s1 = JumpSequence::new(vec![0, 1], vec![u1]).unwrap();
            let s2 = JumpSequence::new(vec![1, 0, 1], vec![u2, u3]).unwrap();
            let whole = composite_flow(&sys, &[x, y], &s1.concat(&s2).unwrap(), 1e-3).unwrap();
            let mid = composite_flow(&sys, &[x, y], &s1, 1e-3).unwrap();
            let rest = composite_flow(&sys, mid.end(), &s2, 1e-3).unwrap();
            for k in 0..2 {
                prop_assert!((whole.end()[k] - rest.end()[k]).abs() < 1e-10);
            }
        }

        #[test]
        fn rank_is_basis_invariant(v in proptest::collection::vec(-1.0..1.0f64, 6), q in proptest::array::uniform9(-1.0..1.0f64), collinear in any::<bool>()) {
            let mut family = vec![v[..3].to_vec(), v[3..].to_vec()];
            if collinear {
                family[1] = family[0].iter().map(|a| -3.0 * a).collect();
            }
            let qm = random_orthogonal(q);
            let rotated: Vec<Vec<f64>> = family
                .iter()
                .map(|w| (&qm * DVector::from_vec(w.clone())).iter().copied().collect())
                .collect();
            prop_assert_eq!(
                numerical_rank(&family, 3, DEFAULT_RANK_TOL).0,
                numerical_rank(&rotated, 3, DEFAULT_RANK_TOL).0
            );
        }
    }
}
