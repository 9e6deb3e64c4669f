//! Catalog of reference systems with closed-form quantities.
//!
//! Every reference value carries an independent oracle and a tolerance;
//! [`ExampleSpec::verify`] recomputes them so that a typo in a formula shows
//! up as a failed check rather than as a silently wrong constant.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::Matrix2;
use serde::Serialize;
use statrs::function::beta::{beta_reg, ln_beta};

use crate::brackets::{check_condition, lie_bracket, BracketField, ConditionKind};
use crate::error::{Error, Result};
use crate::reach::halton_points;
use crate::system::{StateBox, SwitchingSystem};

/// Oracle for a reference value.
pub type Oracle = Arc<dyn Fn() -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ReferenceValue {
    pub name: String,
    /// Closed form in words.
    pub formula: String,
    pub value: f64,
    pub tol: f64,
    pub oracle: Oracle,
}

impl fmt::Debug for ReferenceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceValue")
            .field("name", &self.name)
            .field("formula", &self.formula)
            .field("value", &self.value)
            .field("tol", &self.tol)
            .finish_non_exhaustive()
    }
}

impl ReferenceValue {
    fn new(name: &str, formula: &str, value: f64, tol: f64, oracle: impl Fn() -> f64 + Send + Sync + 'static) -> Self {
        ReferenceValue {
            name: name.into(),
            formula: formula.into(),
            value,
            tol,
            oracle: Arc::new(oracle),
        }
    }

    pub fn check(&self) -> ReferenceCheck {
        let oracle = (self.oracle)();
        let error = (self.value - oracle).abs();
        ReferenceCheck {
            name: self.name.clone(),
            value: self.value,
            oracle,
            error,
            tol: self.tol,
            pass: error <= self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceCheck {
    pub name: String,
    pub value: f64,
    pub oracle: f64,
    pub error: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Straight segment `[from, to]` describing an accessible set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

impl Segment {
    pub fn distance(&self, p: &[f64]) -> f64 {
        let ab: Vec<f64> = self.to.iter().zip(&self.from).map(|(b, a)| b - a).collect();
        let ap: Vec<f64> = p.iter().zip(&self.from).map(|(p, a)| p - a).collect();
        let len2: f64 = ab.iter().map(|v| v * v).sum();
        let t = if len2 > 0.0 {
            (ap.iter().zip(&ab).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ap.iter()
            .zip(&ab)
            .map(|(u, v)| (u - t * v).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `n + 1` evenly spaced points from `from` to `to`.
    pub fn sample(&self, n: usize) -> Vec<Vec<f64>> {
        (0..=n)
            .map(|k| {
                let t = k as f64 / n.max(1) as f64;
                self.from.iter().zip(&self.to).map(|(a, b)| a + t * (b - a)).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExampleSpec {
    pub name: String,
    pub system: SwitchingSystem,
    pub references: Vec<ReferenceValue>,
    /// Known accessible set, when it is a segment.
    pub accessible: Option<Segment>,
    /// Invariant law or qualitative behavior in words.
    pub description: String,
}

impl ExampleSpec {
    pub fn reference(&self, name: &str) -> Option<f64> {
        self.references.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn verify(&self) -> Vec<ReferenceCheck> {
        self.references.iter().map(ReferenceValue::check).collect()
    }
}

/// Names accepted by [`from_params`].
pub const EXAMPLE_NAMES: [&str; 5] = [
    "torus",
    "planar_linear",
    "interval_beta",
    "radulescu",
    "radulescu_diagonal",
];

fn num(v: f64) -> String {
    format!("({v})")
}

/// Constant unit fields `e_i` on the flat torus `[0,1)^d`, rate 1 between
/// every pair of regimes.
pub fn torus(d: usize) -> Result<ExampleSpec> {
    if d < 2 {
        return Err(Error::InvalidInput("torus dimension must be at least 2".into()));
    }
    let mut b = SwitchingSystem::builder(StateBox::unit_torus(d)?);
    for i in 0..d {
        let comps: Vec<&str> = (0..d).map(|k| if k == i { "1" } else { "0" }).collect();
        b = b.field_exprs(&comps)?;
    }
    for i in 0..d {
        for j in 0..d {
            if i != j {
                b = b.constant_rate(i, j, 1.0);
            }
        }
    }
    let system = b.lambda_bar(d as f64 + 1.0).build()?;
    let center = vec![0.5; d];
    let (s1, s2, c1, c2) = (system.clone(), system.clone(), center.clone(), center);
    Ok(ExampleSpec {
        name: "torus".into(),
        references: vec![
            ReferenceValue::new("weak_rank", "d", d as f64, 0.0, move || {
                check_condition(&s1, &c1, ConditionKind::Weak, 0, 1e-8)
                    .map_or(f64::NAN, |r| r.ranks[0] as f64)
            }),
            ReferenceValue::new("strong_rank", "d - 1", d as f64 - 1.0, 0.0, move || {
                check_condition(&s2, &c2, ConditionKind::Strong, 2, 1e-8)
                    .map_or(f64::NAN, |r| *r.ranks.last().unwrap_or(&0) as f64)
            }),
        ],
        system,
        accessible: None,
        description: "uniform law on the torus; every cell is reachable".into(),
    })
}

/// `F0(x) = A x`, `F1(x) = A (x - a)` on `[-R, R]^2` with `R = 3 (|a| + 1)`.
pub fn planar_linear(a_mat: [[f64; 2]; 2], a: [f64; 2], lambda0: f64, lambda1: f64) -> Result<ExampleSpec> {
    let r = 3.0 * (a[0].hypot(a[1]) + 1.0);
    planar_linear_with_radius(a_mat, a, lambda0, lambda1, r)
}

/// [`planar_linear`] on the square `[-r, r]^2`.
pub fn planar_linear_with_radius(
    a_mat: [[f64; 2]; 2],
    a: [f64; 2],
    lambda0: f64,
    lambda1: f64,
    r: f64,
) -> Result<ExampleSpec> {
    let m = Matrix2::new(a_mat[0][0], a_mat[0][1], a_mat[1][0], a_mat[1][1]);
    let aa = m * nalgebra::Vector2::new(a[0], a[1]);
    let f0: Vec<String> = (0..2)
        .map(|k| format!("{}*x1 + {}*x2", num(a_mat[k][0]), num(a_mat[k][1])))
        .collect();
    let f1: Vec<String> = (0..2)
        .map(|k| format!("{}*x1 + {}*x2 - {}", num(a_mat[k][0]), num(a_mat[k][1]), num(aa[k])))
        .collect();
    let f0: Vec<&str> = f0.iter().map(String::as_str).collect();
    let f1: Vec<&str> = f1.iter().map(String::as_str).collect();
    let system = SwitchingSystem::builder(StateBox::cube(2, -r, r)?)
        .field_exprs(&f0)?
        .field_exprs(&f1)?
        .constant_rate(0, 1, lambda0)
        .constant_rate(1, 0, lambda1)
        .lambda_bar(lambda0 + lambda1 + 2.0)
        .build()?;

    let det_a = m.determinant();
    let s = system.clone();
    let det_identity = move || {
        halton_points(s.domain(), 20)
            .iter()
            .map(|x| {
                let (u, v) = (s.field(0).eval(x).unwrap(), s.field(1).eval(x).unwrap());
                let lhs = u[0] * v[1] - u[1] * v[0];
                let rhs = det_a * (a[0] * x[1] - a[1] * x[0]);
                (lhs - rhs).abs()
            })
            .fold(0.0, f64::max)
    };
    let s = system.clone();
    let equilibria = move || {
        let u = s.field(0).eval(&[0.0, 0.0]).unwrap();
        let v = s.field(1).eval(&a).unwrap();
        u.iter().chain(&v).map(|c| c.abs()).fold(0.0, f64::max)
    };
    let a2a = m * aa;
    let krylov = (aa[0] * a2a[1] - aa[1] * a2a[0]).abs();
    let s = system.clone();
    let bracket_det = move || {
        let f0 = BracketField::from_field(s.field(0), "F0");
        let f1 = BracketField::from_field(s.field(1), "F1");
        let x = [0.3, -0.2];
        let g = f1.eval(&x).unwrap();
        let h = f0.eval(&x).unwrap();
        let diff = [g[0] - h[0], g[1] - h[1]];
        let b = lie_bracket(&f0, &f1).eval(&x).unwrap();
        (diff[0] * b[1] - diff[1] * b[0]).abs()
    };
    let trace_half = m.trace() / 2.0;
    let eig_re = move || {
        let ev = m.complex_eigenvalues();
        (ev[0].re + ev[1].re) / 2.0
    };
    let segment = (a_mat == [[-1.0, 0.0], [0.0, -1.0]]).then(|| Segment {
        from: vec![0.0, 0.0],
        to: a.to_vec(),
    });
    Ok(ExampleSpec {
        name: "planar_linear".into(),
        references: vec![
            ReferenceValue::new("det_identity_residual", "det(F0,F1)(x) - det(A) det(a,x)", 0.0, 1e-10, det_identity),
            ReferenceValue::new("equilibrium_residual", "|F0(0)| + |F1(a)|", 0.0, 1e-12, equilibria),
            ReferenceValue::new("abs_det_Aa_A2a", "|det(Aa, A^2 a)|", krylov, 1e-10, bracket_det),
            ReferenceValue::new("mean_eigenvalue_real_part", "tr(A) / 2", trace_half, 1e-10, eig_re),
        ],
        system,
        accessible: segment,
        description: "two linear fields sharing the matrix A with equilibria 0 and a".into(),
    })
}

/// One-dimensional system on `[0, 1]` with `F0 = -x`, `F1 = 1 - x` and rate
/// `lambda` both ways. The regime-`i` marginal of the invariant law is
/// `Beta(lambda, lambda + 1)` for `i = 0` and `Beta(lambda + 1, lambda)`
/// for `i = 1`.
pub fn interval_beta(lambda: f64) -> Result<ExampleSpec> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("rate must be positive, got {lambda}")));
    }
    let system = SwitchingSystem::builder(StateBox::cube(1, 0.0, 1.0)?)
        .field_exprs(&["-x1"])?
        .field_exprs(&["1 - x1"])?
        .constant_rate(0, 1, lambda)
        .constant_rate(1, 0, lambda)
        .lambda_bar(2.0 * lambda + 1.0)
        .build()?;
    // E[X] = B(p + 1, q) / B(p, q) evaluated through log-gamma
    let mean = move |p: f64, q: f64| (ln_beta(p + 1.0, q) - ln_beta(p, q)).exp();
    Ok(ExampleSpec {
        name: "interval_beta".into(),
        references: vec![
            ReferenceValue::new("mean_regime0", "lambda / (2 lambda + 1)", lambda / (2.0 * lambda + 1.0), 1e-12, move || {
                mean(lambda, lambda + 1.0)
            }),
            ReferenceValue::new(
                "mean_regime1",
                "(lambda + 1) / (2 lambda + 1)",
                (lambda + 1.0) / (2.0 * lambda + 1.0),
                1e-12,
                move || mean(lambda + 1.0, lambda),
            ),
        ],
        system,
        accessible: Some(Segment {
            from: vec![0.0],
            to: vec![1.0],
        }),
        description: format!("regime marginals Beta({lambda}, {}) and Beta({}, {lambda})", lambda + 1.0, lambda + 1.0),
    })
}

/// CDF of the regime marginal of [`interval_beta`].
pub fn interval_beta_cdf(lambda: f64, regime: usize, x: f64) -> f64 {
    let (p, q) = if regime == 0 {
        (lambda, lambda + 1.0)
    } else {
        (lambda + 1.0, lambda)
    };
    beta_reg(p, q, x.clamp(0.0, 1.0))
}

/// Real root of `b^3 + b = alpha` in closed form.
pub fn radulescu_b(alpha: f64) -> f64 {
    let r = (4.0 / 27.0 + alpha * alpha).sqrt();
    ((r + alpha) / 2.0).cbrt() - ((r - alpha) / 2.0).cbrt()
}

/// Larger coordinate `a` of the off-diagonal sinks `(a, 1/a)`, `alpha > 2`.
pub fn radulescu_a(alpha: f64) -> Option<f64> {
    (alpha > 2.0).then(|| (alpha + (alpha * alpha - 4.0).sqrt()) / 2.0)
}

/// `c = 3 sqrt(3) / 8`, the maximum of `2u / (1 + u^2)^2` over `u >= 0`.
pub const RADULESCU_C: f64 = 0.649_519_052_838_329;

/// Exponential rate bound for `x - y` on the wedge `0 < y < x`.
pub fn radulescu_lyapunov_bound(alpha: f64, lambda0: f64, lambda1: f64) -> f64 {
    -(lambda1 - (RADULESCU_C * alpha - 1.0) * lambda0) / (lambda0 + lambda1)
}

fn newton_cubic(alpha: f64) -> f64 {
    let mut b = alpha.max(1.0);
    for _ in 0..100 {
        let step = (b * b * b + b - alpha) / (3.0 * b * b + 1.0);
        b -= step;
        if step.abs() < 1e-16 * b.abs().max(1.0) {
            break;
        }
    }
    b
}

/// Newton on `x (1 + y^2) = alpha`, `y (1 + x^2) = alpha`.
fn newton_critical(alpha: f64, mut x: f64, mut y: f64) -> (f64, f64) {
    for _ in 0..100 {
        let g = [x * (1.0 + y * y) - alpha, y * (1.0 + x * x) - alpha];
        let j = Matrix2::new(1.0 + y * y, 2.0 * x * y, 2.0 * x * y, 1.0 + x * x);
        let Some(inv) = j.try_inverse() else { break };
        let d = inv * nalgebra::Vector2::new(g[0], g[1]);
        x -= d[0];
        y -= d[1];
        if d.norm() < 1e-15 {
            break;
        }
    }
    (x, y)
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f((lo + hi) / 2.0)
}

fn fd_eigenvalues(sys: &SwitchingSystem, regime: usize, p: [f64; 2]) -> [f64; 2] {
    let h = 1e-6;
    let mut j = Matrix2::zeros();
    for k in 0..2 {
        let (mut a, mut b) = (p, p);
        a[k] += h;
        b[k] -= h;
        let (fa, fb) = (sys.field(regime).eval(&a).unwrap(), sys.field(regime).eval(&b).unwrap());
        for m in 0..2 {
            j[(m, k)] = (fa[m] - fb[m]) / (2.0 * h);
        }
    }
    let ev = j.complex_eigenvalues();
    let (u, v) = (ev[0].re, ev[1].re);
    [u.min(v), u.max(v)]
}

fn radulescu_system(alpha: f64, lambda0: f64, lambda1: f64, diagonal: bool) -> Result<SwitchingSystem> {
    let al = num(alpha);
    let (domain, f0, f1) = if diagonal {
        let den = "((1 + (x1 + x2)^2)*(1 + (x1 - x2)^2))";
        let half = (alpha + 1.0) / 2.0;
        (
            StateBox::new(vec![0.0, -half], vec![alpha + 1.0, half])?,
            [format!("-x1 + {al}"), "-x2".to_string()],
            [
                format!("-x1 + {al}*(1 + x1^2 + x2^2)/{den}"),
                format!("-x2 + 2*{al}*x1*x2/{den}"),
            ],
        )
    } else {
        (
            StateBox::cube(2, 0.0, alpha + 1.0)?,
            [format!("-x1 + {al}"), format!("-x2 + {al}")],
            [format!("-x1 + {al}/(1 + x2^2)"), format!("-x2 + {al}/(1 + x1^2)")],
        )
    };
    SwitchingSystem::builder(domain)
        .field_exprs(&[&f0[0], &f0[1]])?
        .field_exprs(&[&f1[0], &f1[1]])?
        .constant_rate(0, 1, lambda0)
        .constant_rate(1, 0, lambda1)
        .lambda_bar(lambda0 + lambda1 + 2.0)
        .build()
}

/// `F0 = (-x + alpha, -y + alpha)`, `F1 = (-x + alpha/(1+y^2), -y + alpha/(1+x^2))`
/// on `[0, alpha + 1]^2`.
pub fn radulescu(alpha: f64, lambda0: f64, lambda1: f64) -> Result<ExampleSpec> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let system = radulescu_system(alpha, lambda0, lambda1, false)?;
    let b = radulescu_b(alpha);
    let mut refs = vec![
        ReferenceValue::new("b", "real root of b^3 + b = alpha (Cardano)", b, 1e-10, move || newton_cubic(alpha)),
        {
            let s = system.clone();
            ReferenceValue::new("field_residual_bb", "|F1(b, b)|", 0.0, 1e-10, move || {
                let nb = newton_cubic(alpha);
                let v = s.field(1).eval(&[nb, nb]).unwrap();
                v[0].hypot(v[1])
            })
        },
        {
            let s = system.clone();
            ReferenceValue::new("eta1", "-3 + 2b/alpha", -3.0 + 2.0 * b / alpha, 1e-6, move || {
                let nb = newton_cubic(alpha);
                fd_eigenvalues(&s, 1, [nb, nb])[0]
            })
        },
        {
            let s = system.clone();
            ReferenceValue::new("eta2", "1 - 2b/alpha", 1.0 - 2.0 * b / alpha, 1e-6, move || {
                let nb = newton_cubic(alpha);
                fd_eigenvalues(&s, 1, [nb, nb])[1]
            })
        },
        ReferenceValue::new("c", "3 sqrt(3) / 8", 3.0 * 3f64.sqrt() / 8.0, 1e-9, || {
            golden_max(|u| 2.0 * u / (1.0 + u * u).powi(2), 0.0, 2.0)
        }),
        ReferenceValue::new("transience_threshold", "c alpha - 1", RADULESCU_C * alpha - 1.0, 1e-9, move || {
            golden_max(|u| 2.0 * u / (1.0 + u * u).powi(2), 0.0, 2.0) * alpha - 1.0
        }),
        ReferenceValue::new(
            "lyapunov_bound",
            "-(lambda1 - (c alpha - 1) lambda0) / (lambda0 + lambda1)",
            radulescu_lyapunov_bound(alpha, lambda0, lambda1),
            1e-9,
            move || {
                let c = golden_max(|u| 2.0 * u / (1.0 + u * u).powi(2), 0.0, 2.0);
                -(lambda1 - (c * alpha - 1.0) * lambda0) / (lambda0 + lambda1)
            },
        ),
    ];
    if let Some(a) = radulescu_a(alpha) {
        refs.push(ReferenceValue::new("a", "(alpha + sqrt(alpha^2 - 4)) / 2", a, 1e-10, move || {
            newton_critical(alpha, alpha, 1.0 / alpha).0
        }));
        let s = system.clone();
        refs.push(ReferenceValue::new("field_residual_sink", "|F1(a, 1/a)|", 0.0, 1e-10, move || {
            let (x, y) = newton_critical(alpha, alpha, 1.0 / alpha);
            let v = s.field(1).eval(&[x, y]).unwrap();
            v[0].hypot(v[1])
        }));
        let s = system.clone();
        refs.push(ReferenceValue::new("sink_eigenvalue_low", "-1 - 2/alpha", -1.0 - 2.0 / alpha, 1e-6, move || {
            let (x, y) = newton_critical(alpha, alpha, 1.0 / alpha);
            fd_eigenvalues(&s, 1, [x, y])[0]
        }));
        let s = system.clone();
        refs.push(ReferenceValue::new("sink_eigenvalue_high", "-1 + 2/alpha", -1.0 + 2.0 / alpha, 1e-6, move || {
            let (x, y) = newton_critical(alpha, alpha, 1.0 / alpha);
            fd_eigenvalues(&s, 1, [x, y])[1]
        }));
    }
    Ok(ExampleSpec {
        name: "radulescu".into(),
        references: refs,
        system,
        accessible: Some(Segment {
            from: vec![b, b],
            to: vec![alpha, alpha],
        }),
        description: format!(
            "diagonal x = y is invariant; the wedge 0 < y < x is transient when lambda1 > {} lambda0",
            RADULESCU_C * alpha - 1.0
        ),
    })
}

/// [`radulescu`] in the coordinates `u = (x + y)/2`, `v = (x - y)/2`, which
/// keep `v` accurate near the diagonal.
pub fn radulescu_diagonal(alpha: f64, lambda0: f64, lambda1: f64) -> Result<ExampleSpec> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let system = radulescu_system(alpha, lambda0, lambda1, true)?;
    let b = radulescu_b(alpha);
    let s = system.clone();
    Ok(ExampleSpec {
        name: "radulescu_diagonal".into(),
        references: vec![
            ReferenceValue::new("b", "real root of b^3 + b = alpha (Cardano)", b, 1e-10, move || newton_cubic(alpha)),
            ReferenceValue::new("field_residual_bb", "|F1(b, 0)|", 0.0, 1e-10, move || {
                let v = s.field(1).eval(&[newton_cubic(alpha), 0.0]).unwrap();
                v[0].hypot(v[1])
            }),
        ],
        system,
        accessible: Some(Segment {
            from: vec![b, 0.0],
            to: vec![alpha, 0.0],
        }),
        description: "v = 0 is invariant".into(),
    })
}

fn take(params: &mut BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    params
        .remove(key)
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("parameter {key}: not a number: {v:?}")))
        })
        .transpose()
}

fn take_vec<const N: usize>(params: &mut BTreeMap<String, String>, key: &str) -> Result<Option<[f64; N]>> {
    let Some(v) = params.remove(key) else {
        return Ok(None);
    };
    let vals: Vec<f64> = v
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("parameter {key}: not a list of numbers: {v:?}")))?;
    <[f64; N]>::try_from(vals)
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("parameter {key}: expected {N} numbers")))
}

/// Builds a catalog example by name. Recognized parameters:
/// - `torus`: `d` (2);
/// - `planar_linear`: `A` (4 numbers, row-major; `-1 -1 1 -1`), `a` (`1 0`),
///   `lambda0` (1), `lambda1` (1), `radius` (`3 (|a| + 1)`);
/// - `interval_beta`: `lambda` (2);
/// - `radulescu`, `radulescu_diagonal`: `alpha` (3), `lambda0` (1), `lambda1` (4).
///
/// Unknown parameters are errors.
pub fn from_params(name: &str, params: &BTreeMap<String, String>) -> Result<ExampleSpec> {
    let mut p = params.clone();
    let spec = match name {
        "torus" => {
            let d = take(&mut p, "d")?.unwrap_or(2.0);
            if d.fract() != 0.0 || d < 2.0 {
                return Err(Error::InvalidInput(format!("torus dimension must be an integer >= 2, got {d}")));
            }
            torus(d as usize)?
        }
        "planar_linear" => {
            let m = take_vec::<4>(&mut p, "A")?.unwrap_or([-1.0, -1.0, 1.0, -1.0]);
            let a = take_vec::<2>(&mut p, "a")?.unwrap_or([1.0, 0.0]);
            let l0 = take(&mut p, "lambda0")?.unwrap_or(1.0);
            let l1 = take(&mut p, "lambda1")?.unwrap_or(1.0);
            let mat = [[m[0], m[1]], [m[2], m[3]]];
            match take(&mut p, "radius")? {
                Some(r) => planar_linear_with_radius(mat, a, l0, l1, r)?,
                None => planar_linear(mat, a, l0, l1)?,
            }
        }
        "interval_beta" => interval_beta(take(&mut p, "lambda")?.unwrap_or(2.0))?,
        "radulescu" | "radulescu_diagonal" => {
            let alpha = take(&mut p, "alpha")?.unwrap_or(3.0);
            let l0 = take(&mut p, "lambda0")?.unwrap_or(1.0);
            let l1 = take(&mut p, "lambda1")?.unwrap_or(4.0);
            if name == "radulescu" {
                radulescu(alpha, l0, l1)?
            } else {
                radulescu_diagonal(alpha, l0, l1)?
            }
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown example {other:?}; known: {}",
                EXAMPLE_NAMES.join(", ")
            )))
        }
    };
    if let Some(k) = p.keys().next() {
        return Err(Error::InvalidInput(format!("unknown parameter {k:?} for example {name}")));
    }
    Ok(spec)
}
