//! The switching system: one vector field per regime, state-dependent jump
//! rates, the uniformization constant and the state box.
//!
//! Jumps are generated by thinning: proposals arrive at the constant rate
//! `lambda_bar`, and a proposal at position `x` from regime `i` moves to `j`
//! with probability `Q(x)[i][j] = rate(x, i, j) / lambda_bar`; the remaining
//! mass stays on the diagonal (a "phantom" jump).

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse, Compiled, Expr};
use crate::flow;

/// Callable field components: writes `F(x)` into the output slice.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Callable Jacobian: writes `DF(x)` row-major (`out[m * d + k] = dF_m/dx_k`).
pub type JacobianFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Callable scalar (jump rate).
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Relative step of the finite-difference Jacobian used for programmatic
/// fields without an explicit Jacobian.
pub const FD_JACOBIAN_STEP: f64 = 1e-5;

/// Points per axis of the probe grid (reduced in high dimension).
pub const PROBE_POINTS_PER_AXIS: usize = 16;
/// Upper bound on the number of probe points.
pub const PROBE_POINT_CAP: usize = 65_536;

/// Axis-aligned state box, optionally periodic along some axes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    wrap: Vec<bool>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let wrap = vec![false; lower.len()];
        Self::with_wrap(lower, upper, wrap)
    }

    pub fn with_wrap(lower: Vec<f64>, upper: Vec<f64>, wrap: Vec<bool>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != wrap.len() {
            return Err(Error::InvalidInput(
                "box bounds and wrap flags must have the same positive length".into(),
            ));
        }
        for k in 0..lower.len() {
            if !(lower[k].is_finite() && upper[k].is_finite() && lower[k] < upper[k]) {
                return Err(Error::InvalidInput(format!(
                    "box axis {} has invalid bounds [{}, {}]",
                    k + 1,
                    lower[k],
                    upper[k]
                )));
            }
        }
        Ok(StateBox { lower, upper, wrap })
    }

    /// `[lo, hi]^d`
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Unit torus `[0,1)^d` with every axis periodic.
    pub fn unit_torus(dim: usize) -> Result<Self> {
        Self::with_wrap(vec![0.0; dim], vec![1.0; dim], vec![true; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn wrap(&self) -> &[bool] {
        &self.wrap
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, x: &[f64], margin: f64) -> bool {
        x.iter().enumerate().all(|(k, &v)| {
            self.wrap[k] || (v >= self.lower[k] - margin && v <= self.upper[k] + margin)
        })
    }

    /// Maps periodic coordinates back into `[lower, upper)`.
    #[inline]
    pub fn wrap_point(&self, x: &mut [f64]) {
        for k in 0..x.len() {
            if self.wrap[k] {
                let w = self.upper[k] - self.lower[k];
                let mut v = self.lower[k] + (x[k] - self.lower[k]).rem_euclid(w);
                if v >= self.upper[k] {
                    v = self.lower[k];
                }
                x[k] = v;
            }
        }
    }

    /// Clamps non-periodic coordinates lying more than `margin` outside the
    /// box back onto the margin. Returns whether anything was clamped.
    #[inline]
    pub fn clamp(&self, x: &mut [f64], margin: f64) -> bool {
        let mut clamped = false;
        for k in 0..x.len() {
            if self.wrap[k] {
                continue;
            }
            let lo = self.lower[k] - margin;
            let hi = self.upper[k] + margin;
            if x[k] < lo {
                x[k] = lo;
                clamped = true;
            } else if x[k] > hi {
                x[k] = hi;
                clamped = true;
            }
        }
        clamped
    }

    /// Deterministic probe grid: an inclusive lattice with 16 points per axis
    /// (fewer when `16^d` would exceed 65536), which contains the corners.
    pub fn probe_points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut n = PROBE_POINTS_PER_AXIS;
        while n > 2 && (n as f64).powi(d as i32) > PROBE_POINT_CAP as f64 {
            n -= 1;
        }
        let total = n.checked_pow(d as u32).filter(|&t| t <= PROBE_POINT_CAP);
        let mut points = Vec::new();
        if let Some(total) = total {
            points.reserve(total);
            for flat in 0..total {
                let mut rem = flat;
                let p: Vec<f64> = (0..d)
                    .map(|k| {
                        let idx = rem % n;
                        rem /= n;
                        self.lower[k] + self.width(k) * idx as f64 / (n - 1) as f64
                    })
                    .collect();
                points.push(p);
            }
        } else {
            // very high dimension: corners only, capped
            let corners = 1usize.checked_shl(d as u32).unwrap_or(usize::MAX);
            for mask in 0..corners.min(PROBE_POINT_CAP) {
                points.push(
                    (0..d)
                        .map(|k| {
                            if mask >> k & 1 == 1 {
                                self.upper[k]
                            } else {
                                self.lower[k]
                            }
                        })
                        .collect(),
                );
            }
        }
        points
    }
}

/// A vector field `F: R^d -> R^d`.
#[derive(Clone)]
pub enum VectorField {
    Expr(ExprField),
    Programmatic(ProgrammaticField),
}

#[derive(Debug, Clone)]
pub struct ExprField {
    components: Vec<Expr>,
    compiled: Vec<Compiled>,
    jacobian: Vec<Compiled>,
    constant: Option<Vec<f64>>,
}

#[derive(Clone)]
pub struct ProgrammaticField {
    dim: usize,
    eval: FieldFn,
    jacobian: Option<JacobianFn>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Expr(e) => f
                .debug_tuple("Expr")
                .field(&e.components.iter().map(ToString::to_string).collect::<Vec<_>>())
                .finish(),
            VectorField::Programmatic(p) => f
                .debug_struct("Programmatic")
                .field("dim", &p.dim)
                .field("jacobian", &p.jacobian.is_some())
                .finish(),
        }
    }
}

impl VectorField {
    pub fn from_exprs(components: Vec<Expr>) -> Self {
        let d = components.len();
        let compiled = components.iter().map(Expr::compile).collect();
        let mut jacobian = Vec::with_capacity(d * d);
        for c in &components {
            for k in 0..d {
                jacobian.push(c.derivative(k).compile());
            }
        }
        let constant = components
            .iter()
            .map(Expr::as_const)
            .collect::<Option<Vec<f64>>>();
        VectorField::Expr(ExprField {
            components,
            compiled,
            jacobian,
            constant,
        })
    }

    /// Parses one expression per component; the dimension is the number of
    /// components.
    pub fn parse(components: &[&str]) -> Result<Self> {
        let d = components.len();
        let exprs = components
            .iter()
            .map(|c| parse(c, d))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_exprs(exprs))
    }

    pub fn programmatic(dim: usize, eval: FieldFn, jacobian: Option<JacobianFn>) -> Self {
        VectorField::Programmatic(ProgrammaticField {
            dim,
            eval,
            jacobian,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Expr(e) => e.components.len(),
            VectorField::Programmatic(p) => p.dim,
        }
    }

    /// Symbolic components, when the field is expression based.
    pub fn exprs(&self) -> Option<&[Expr]> {
        match self {
            VectorField::Expr(e) => Some(&e.components),
            VectorField::Programmatic(_) => None,
        }
    }

    /// Value of the field when it does not depend on the state.
    pub fn constant(&self) -> Option<&[f64]> {
        match self {
            VectorField::Expr(e) => e.constant.as_deref(),
            VectorField::Programmatic(_) => None,
        }
    }

    pub fn has_exact_jacobian(&self) -> bool {
        match self {
            VectorField::Expr(_) => true,
            VectorField::Programmatic(p) => p.jacobian.is_some(),
        }
    }

    /// Writes `F(x)` into `out`. Returns `false` if any component is not finite.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match self {
            VectorField::Expr(e) => {
                if let Some(c) = &e.constant {
                    out.copy_from_slice(c);
                    return true;
                }
                for (o, c) in out.iter_mut().zip(&e.compiled) {
                    match c.eval(x) {
                        Ok(v) => *o = v,
                        Err(_) => return false,
                    }
                }
                true
            }
            VectorField::Programmatic(p) => {
                (p.eval)(x, out);
                out.iter().all(|v| v.is_finite())
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out).then_some(out)
    }

    /// Writes `DF(x)` row-major into `out` (length `d*d`). Falls back to
    /// central differences with step `1e-5 * (1 + |x_k|)` for programmatic
    /// fields without a Jacobian.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim();
        match self {
            VectorField::Expr(e) => {
                for (o, c) in out.iter_mut().zip(&e.jacobian) {
                    match c.eval(x) {
                        Ok(v) => *o = v,
                        Err(_) => return false,
                    }
                }
                true
            }
            VectorField::Programmatic(p) => {
                if let Some(j) = &p.jacobian {
                    j(x, out);
                    return out.iter().all(|v| v.is_finite());
                }
                let mut xp = x.to_vec();
                let mut fp = vec![0.0; d];
                let mut fm = vec![0.0; d];
                for k in 0..d {
                    let h = FD_JACOBIAN_STEP * (1.0 + x[k].abs());
                    xp[k] = x[k] + h;
                    (p.eval)(&xp, &mut fp);
                    xp[k] = x[k] - h;
                    (p.eval)(&xp, &mut fm);
                    xp[k] = x[k];
                    for m in 0..d {
                        out[m * d + k] = (fp[m] - fm[m]) / (2.0 * h);
                    }
                }
                out.iter().all(|v| v.is_finite())
            }
        }
    }
}

/// A jump-rate function `x -> rate(x, i, j)`.
#[derive(Clone)]
pub enum RateFn {
    Expr { expr: Expr, compiled: Compiled },
    Programmatic(ScalarFn),
}

impl fmt::Debug for RateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFn::Expr { expr, .. } => write!(f, "RateFn({expr})"),
            RateFn::Programmatic(_) => write!(f, "RateFn(<fn>)"),
        }
    }
}

impl RateFn {
    pub fn from_expr(expr: Expr) -> Self {
        let compiled = expr.compile();
        RateFn::Expr { expr, compiled }
    }

    pub fn constant(v: f64) -> Self {
        Self::from_expr(Expr::Const(v))
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RateFn::Expr { compiled, .. } => compiled.eval(x).unwrap_or(f64::NAN),
            RateFn::Programmatic(f) => f(x),
        }
    }

    pub fn expr(&self) -> Option<&Expr> {
        match self {
            RateFn::Expr { expr, .. } => Some(expr),
            RateFn::Programmatic(_) => None,
        }
    }
}

/// Builder for [`SwitchingSystem`].
#[derive(Debug, Clone)]
pub struct SystemBuilder {
    domain: StateBox,
    fields: Vec<VectorField>,
    rates: Vec<((usize, usize), RateFn)>,
    lambda_bar: Option<f64>,
    clamp_margin: Option<f64>,
}

impl SystemBuilder {
    pub fn new(domain: StateBox) -> Self {
        SystemBuilder {
            domain,
            fields: Vec::new(),
            rates: Vec::new(),
            lambda_bar: None,
            clamp_margin: None,
        }
    }

    /// Adds the next regime's field from component expressions.
    pub fn field_exprs(mut self, components: &[&str]) -> Result<Self> {
        let d = self.domain.dim();
        if components.len() != d {
            return Err(Error::InvalidInput(format!(
                "field has {} components, state dimension is {d}",
                components.len()
            )));
        }
        let exprs = components
            .iter()
            .map(|c| parse(c, d))
            .collect::<Result<Vec<_>, _>>()?;
        self.fields.push(VectorField::from_exprs(exprs));
        Ok(self)
    }

    pub fn field(mut self, field: VectorField) -> Self {
        self.fields.push(field);
        self
    }

    /// Jump rate from regime `from` to regime `to`, as an expression.
    pub fn rate(self, from: usize, to: usize, text: &str) -> Result<Self> {
        let e = parse(text, self.domain.dim())?;
        Ok(self.rate_fn(from, to, RateFn::from_expr(e)))
    }

    pub fn rate_fn(mut self, from: usize, to: usize, rate: RateFn) -> Self {
        self.rates.retain(|(k, _)| *k != (from, to));
        self.rates.push(((from, to), rate));
        self
    }

    pub fn constant_rate(self, from: usize, to: usize, value: f64) -> Self {
        self.rate_fn(from, to, RateFn::constant(value))
    }

    pub fn lambda_bar(mut self, value: f64) -> Self {
        self.lambda_bar = Some(value);
        self
    }

    /// Distance outside the box tolerated before integration clamps.
    pub fn clamp_margin(mut self, value: f64) -> Self {
        self.clamp_margin = Some(value);
        self
    }

    pub fn build(self) -> Result<SwitchingSystem> {
        let d = self.domain.dim();
        let n = self.fields.len();
        if n == 0 {
            return Err(Error::InvalidInput("system needs at least one regime".into()));
        }
        if let Some(f) = self.fields.iter().find(|f| f.dim() != d) {
            return Err(Error::InvalidInput(format!(
                "field of dimension {} in a {d}-dimensional box",
                f.dim()
            )));
        }
        let lambda_bar = self
            .lambda_bar
            .ok_or_else(|| Error::InvalidInput("lambda_bar is required".into()))?;
        if !(lambda_bar.is_finite() && lambda_bar > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda_bar must be positive and finite, got {lambda_bar}"
            )));
        }
        let mut rates: Vec<Option<RateFn>> = vec![None; n * n];
        for ((i, j), r) in self.rates {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "rate ({i}, {j}) refers to a regime outside 0..{n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!(
                    "diagonal rate ({i}, {i}) is implicitly zero and cannot be set"
                )));
            }
            if let RateFn::Expr { expr, .. } = &r {
                if expr.max_var().is_some_and(|k| k >= d) {
                    return Err(Error::InvalidInput(format!(
                        "rate ({i}, {j}) uses a variable beyond x{d}"
                    )));
                }
            }
            rates[i * n + j] = Some(r);
        }
        for f in &self.fields {
            if let Some(k) = f.exprs().and_then(|c| c.iter().filter_map(Expr::max_var).max()) {
                if k >= d {
                    return Err(Error::InvalidInput(format!("field uses x{} in dimension {d}", k + 1)));
                }
            }
        }
        let margin = self
            .clamp_margin
            .unwrap_or_else(|| 1e-3 * (0..d).map(|k| self.domain.width(k)).fold(0.0, f64::max));
        let mut sys = SwitchingSystem {
            dim: d,
            fields: self.fields,
            rates,
            lambda_bar,
            domain: self.domain,
            speed_bound: 0.0,
            clamp_margin: margin,
        };
        sys.speed_bound = sys.domain_probe()?;
        Ok(sys)
    }
}

/// The full switching model. Immutable once built.
#[derive(Debug, Clone)]
pub struct SwitchingSystem {
    dim: usize,
    fields: Vec<VectorField>,
    rates: Vec<Option<RateFn>>,
    lambda_bar: f64,
    domain: StateBox,
    speed_bound: f64,
    clamp_margin: f64,
}

impl SwitchingSystem {
    pub fn builder(domain: StateBox) -> SystemBuilder {
        SystemBuilder::new(domain)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn regimes(&self) -> usize {
        self.fields.len()
    }

    pub fn field(&self, regime: usize) -> &VectorField {
        &self.fields[regime]
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn rate(&self, from: usize, to: usize) -> Option<&RateFn> {
        self.rates[from * self.regimes() + to].as_ref()
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    pub fn domain(&self) -> &StateBox {
        &self.domain
    }

    /// Largest field norm seen on the probe grid.
    pub fn speed_bound(&self) -> f64 {
        self.speed_bound
    }

    pub fn clamp_margin(&self) -> f64 {
        self.clamp_margin
    }

    /// Same model with a different uniformization constant.
    pub fn with_lambda_bar(&self, lambda_bar: f64) -> Result<Self> {
        if !(lambda_bar.is_finite() && lambda_bar > 0.0) {
            return Err(Error::InvalidInput(format!("invalid lambda_bar {lambda_bar}")));
        }
        let mut s = self.clone();
        s.lambda_bar = lambda_bar;
        Ok(s)
    }

    /// Jump rate `rate(x, i, j)`; zero on the diagonal and for unset pairs.
    #[inline]
    pub fn rate_at(&self, x: &[f64], from: usize, to: usize) -> f64 {
        match &self.rates[from * self.regimes() + to] {
            Some(r) => r.eval(x),
            None => 0.0,
        }
    }

    /// Writes row `i` of `Q(x)` into `out`.
    pub fn q_row(&self, x: &[f64], i: usize, out: &mut [f64]) -> Result<()> {
        let n = self.regimes();
        let mut sum = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let r = self.rate_at(x, i, j);
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvariantViolation {
                    regime: i,
                    point: x.to_vec(),
                    detail: format!("rate to regime {j} is {r}"),
                });
            }
            out[j] = r / self.lambda_bar;
            sum += r;
        }
        if sum >= self.lambda_bar {
            return Err(Error::InvariantViolation {
                regime: i,
                point: x.to_vec(),
                detail: format!(
                    "total exit rate {sum} is not below lambda_bar {}",
                    self.lambda_bar
                ),
            });
        }
        out[i] = 1.0 - sum / self.lambda_bar;
        Ok(())
    }

    /// Transition matrix of the thinned chain at `x`, row-major.
    pub fn q_matrix(&self, x: &[f64]) -> Result<TransitionMatrix> {
        let n = self.regimes();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            self.q_row(x, i, &mut data[i * n..(i + 1) * n])?;
        }
        Ok(TransitionMatrix { n, data })
    }

    /// `1.2 *` the largest total exit rate seen on the probe grid.
    pub fn suggest_lambda_bar(&self) -> f64 {
        let n = self.regimes();
        let mut max_sum: f64 = 0.0;
        for p in self.domain.probe_points() {
            for i in 0..n {
                let s: f64 = (0..n).filter(|&j| j != i).map(|j| self.rate_at(&p, i, j)).sum();
                max_sum = max_sum.max(s);
            }
        }
        1.2 * max_sum
    }

    /// Product of `Q` entries along the composite trajectory of `seq`
    /// started at `x`; positive exactly when `seq` is adapted to `x`.
    pub fn adapted_weight(&self, x: &[f64], seq: &JumpSequence, h: f64) -> Result<f64> {
        seq.check(self)?;
        if seq.durations().is_empty() {
            return Ok(1.0);
        }
        let path = flow::composite_flow(self, x, seq, h)?;
        let n = self.regimes();
        let mut row = vec![0.0; n];
        let mut weight = 1.0;
        for k in 1..seq.indices().len() {
            let (from, to) = (seq.indices()[k - 1], seq.indices()[k]);
            self.q_row(&path.points[k], from, &mut row)?;
            weight *= row[to];
        }
        Ok(weight)
    }

    /// Runs the probe-grid checks on rates and reports every kind of
    /// violation together with the first offending point.
    pub fn validate(&self) -> ValidationReport {
        let n = self.regimes();
        let points = self.domain.probe_points();
        let mut violations: Vec<Violation> = Vec::new();
        let mut record = |kind: ViolationKind, regimes: (usize, usize), point: &[f64], detail: String| {
            if let Some(v) = violations
                .iter_mut()
                .find(|v| v.kind == kind && v.regimes == regimes)
            {
                v.count += 1;
            } else {
                violations.push(Violation {
                    kind,
                    regimes,
                    point: point.to_vec(),
                    detail,
                    count: 1,
                });
            }
        };
        if n < 2 {
            record(
                ViolationKind::TooFewRegimes,
                (0, 0),
                &[],
                format!("{n} regime(s); at least two are required"),
            );
        }
        let mut max_row_sum: f64 = 0.0;
        let mut adjacency = vec![false; n * n];
        for p in &points {
            for i in 0..n {
                let mut sum = 0.0;
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let r = self.rate_at(p, i, j);
                    if !r.is_finite() {
                        record(ViolationKind::NonFiniteRate, (i, j), p, format!("rate is {r}"));
                        adjacency[i * n + j] = false;
                        continue;
                    }
                    if r < 0.0 {
                        record(ViolationKind::NegativeRate, (i, j), p, format!("negative rate {r}"));
                    }
                    adjacency[i * n + j] = r > 0.0;
                    sum += r.max(0.0);
                }
                max_row_sum = max_row_sum.max(sum);
                if sum >= self.lambda_bar {
                    record(
                        ViolationKind::LambdaBarTooSmall,
                        (i, i),
                        p,
                        format!("exit rate {sum} >= lambda_bar {}", self.lambda_bar),
                    );
                }
            }
            if n >= 2 && !strongly_connected(n, &adjacency) {
                record(
                    ViolationKind::NotIrreducible,
                    (0, 0),
                    p,
                    "rate graph is not strongly connected".into(),
                );
            }
        }
        ValidationReport {
            probe_points: points.len(),
            max_exit_rate: max_row_sum,
            lambda_bar: self.lambda_bar,
            suggested_lambda_bar: 1.2 * max_row_sum,
            speed_bound: self.speed_bound,
            violations,
        }
    }

    /// Evaluates every field, its Jacobian and every rate expression (with
    /// first derivatives) on the probe grid. Returns the speed bound.
    fn domain_probe(&self) -> Result<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        let mut speed: f64 = 0.0;
        let rate_derivs: Vec<(usize, Vec<Compiled>)> = self
            .rates
            .iter()
            .enumerate()
            .filter_map(|(idx, r)| {
                r.as_ref()
                    .and_then(RateFn::expr)
                    .map(|e| (idx, (0..d).map(|k| e.derivative(k).compile()).collect()))
            })
            .collect();
        for p in self.domain.probe_points() {
            for (i, f) in self.fields.iter().enumerate() {
                if !f.eval_into(&p, &mut out) {
                    return Err(Error::DomainProbe {
                        what: format!("field of regime {i}"),
                        point: p,
                    });
                }
                speed = speed.max(out.iter().map(|v| v * v).sum::<f64>().sqrt());
                if f.exprs().is_some() && !f.jacobian_into(&p, &mut jac) {
                    return Err(Error::DomainProbe {
                        what: format!("Jacobian of regime {i}"),
                        point: p,
                    });
                }
            }
            for (idx, r) in self.rates.iter().enumerate() {
                if let Some(r) = r {
                    if !r.eval(&p).is_finite() {
                        return Err(Error::DomainProbe {
                            what: format!("rate ({}, {})", idx / self.regimes(), idx % self.regimes()),
                            point: p,
                        });
                    }
                }
            }
            for (idx, derivs) in &rate_derivs {
                if derivs.iter().any(|c| c.eval(&p).is_err()) {
                    return Err(Error::DomainProbe {
                        what: format!(
                            "derivative of rate ({}, {})",
                            idx / self.regimes(),
                            idx % self.regimes()
                        ),
                        point: p,
                    });
                }
            }
        }
        Ok(speed)
    }
}

fn strongly_connected(n: usize, adjacency: &[bool]) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let edge = if forward {
                    adjacency[u * n + v]
                } else {
                    adjacency[v * n + u]
                };
                if edge && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Row-stochastic `n x n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Regime indices `i_0..i_n` and durations `u_1..u_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpSequence {
    indices: Vec<usize>,
    durations: Vec<f64>,
}

impl JumpSequence {
    pub fn new(indices: Vec<usize>, durations: Vec<f64>) -> Result<Self> {
        if indices.len() != durations.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} indices need {} durations, got {}",
                indices.len(),
                indices.len().saturating_sub(1),
                durations.len()
            )));
        }
        if let Some(u) = durations.iter().find(|u| !(u.is_finite() && **u >= 0.0)) {
            return Err(Error::InvalidInput(format!("invalid duration {u}")));
        }
        Ok(JumpSequence { indices, durations })
    }

    /// The sequence with a single regime and no switch.
    pub fn empty(regime: usize) -> Self {
        JumpSequence {
            indices: vec![regime],
            durations: Vec::new(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    /// Follows `self`, then `other`; the last regime of `self` must be the
    /// first regime of `other`.
    pub fn concat(&self, other: &JumpSequence) -> Result<Self> {
        if self.indices.last() != other.indices.first() {
            return Err(Error::InvalidInput(
                "sequences do not share the junction regime".into(),
            ));
        }
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices[1..]);
        let mut durations = self.durations.clone();
        durations.extend_from_slice(&other.durations);
        Ok(JumpSequence { indices, durations })
    }

    pub(crate) fn check(&self, sys: &SwitchingSystem) -> Result<()> {
        if let Some(i) = self.indices.iter().find(|&&i| i >= sys.regimes()) {
            return Err(Error::InvalidInput(format!(
                "regime {i} outside 0..{}",
                sys.regimes()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TooFewRegimes,
    NegativeRate,
    NonFiniteRate,
    LambdaBarTooSmall,
    NotIrreducible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// `(from, to)` for rate violations, `(i, i)` for a row, `(0, 0)` when
    /// global.
    pub regimes: (usize, usize),
    /// First offending probe point.
    pub point: Vec<f64>,
    pub detail: String,
    /// Number of probe points (or rows) exhibiting this violation.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub probe_points: usize,
    pub max_exit_rate: f64,
    pub lambda_bar: f64,
    pub suggested_lambda_bar: f64,
    pub speed_bound: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}
