//! Lie brackets and the weak/strong bracket rank conditions.
//!
//! `[F, G](x) = DG(x) F(x) − DF(x) G(x)`.
//!
//! The weak family starts from the fields themselves, the strong family from
//! their pairwise differences; each order adds the brackets of every field
//! `F^i` with the elements added at the previous order. Families are built
//! symbolically when every field is expression based, otherwise from nested
//! central differences. Deduplication is syntactic: two fields are the same
//! if their printed components agree. Fields that fold to zero are dropped,
//! since they never change a span.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::flow::numerical_rank;
use crate::system::{StateBox, SwitchingSystem, VectorField};

pub const DEFAULT_K_MAX: usize = 4;
pub const DEFAULT_FAMILY_CAP: usize = 512;
/// Step of each directional difference in numeric brackets.
pub const NUMERIC_BRACKET_STEP: f64 = 1e-4;
/// Numeric brackets nested deeper than this are flagged low confidence.
pub const NUMERIC_CONFIDENT_DEPTH: usize = 2;

type NumFn = Arc<dyn Fn(&[f64], &mut [f64]) -> bool + Send + Sync>;

/// A vector field produced by bracketing.
#[derive(Clone)]
pub enum BracketField {
    Symbolic(Vec<Expr>),
    Numeric {
        dim: usize,
        eval: NumFn,
        label: String,
        depth: usize,
    },
}

impl fmt::Debug for BracketField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.key())
    }
}

impl BracketField {
    pub fn from_field(field: &VectorField, label: &str) -> Self {
        match field.exprs() {
            Some(e) => BracketField::Symbolic(e.to_vec()),
            None => {
                let g = field.clone();
                BracketField::Numeric {
                    dim: field.dim(),
                    eval: Arc::new(move |x, out| g.eval_into(x, out)),
                    label: label.to_string(),
                    depth: 0,
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BracketField::Symbolic(c) => c.len(),
            BracketField::Numeric { dim, .. } => *dim,
        }
    }

    /// Nesting depth of numeric brackets (zero for symbolic fields).
    pub fn depth(&self) -> usize {
        match self {
            BracketField::Symbolic(_) => 0,
            BracketField::Numeric { depth, .. } => *depth,
        }
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self, BracketField::Symbolic(_))
    }

    /// Symbolically identically zero.
    pub fn is_zero(&self) -> bool {
        match self {
            BracketField::Symbolic(c) => c.iter().all(Expr::is_zero),
            BracketField::Numeric { .. } => false,
        }
    }

    /// Deduplication key.
    pub fn key(&self) -> String {
        match self {
            BracketField::Symbolic(c) => c
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" ; "),
            BracketField::Numeric { label, .. } => label.clone(),
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match self {
            BracketField::Symbolic(c) => {
                for (o, e) in out.iter_mut().zip(c) {
                    match e.eval(x) {
                        Ok(v) => *o = v,
                        Err(_) => return false,
                    }
                }
                true
            }
            BracketField::Numeric { eval, .. } => eval(x, out),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out).then_some(out)
    }

    fn as_num_fn(&self) -> NumFn {
        match self {
            BracketField::Numeric { eval, .. } => eval.clone(),
            BracketField::Symbolic(c) => {
                let compiled: Vec<_> = c.iter().map(Expr::compile).collect();
                Arc::new(move |x, out| {
                    for (o, e) in out.iter_mut().zip(&compiled) {
                        match e.eval(x) {
                            Ok(v) => *o = v,
                            Err(_) => return false,
                        }
                    }
                    true
                })
            }
        }
    }

    fn label(&self) -> String {
        match self {
            BracketField::Numeric { label, .. } => label.clone(),
            BracketField::Symbolic(_) => format!("({})", self.key()),
        }
    }

    fn difference(a: &BracketField, b: &BracketField) -> BracketField {
        match (a, b) {
            (BracketField::Symbolic(x), BracketField::Symbolic(y)) => BracketField::Symbolic(
                x.iter()
                    .zip(y)
                    .map(|(p, q)| Expr::sub(p.clone(), q.clone()))
                    .collect(),
            ),
            _ => {
                let (f, g) = (a.as_num_fn(), b.as_num_fn());
                let d = a.dim();
                BracketField::Numeric {
                    dim: d,
                    eval: Arc::new(move |x, out| {
                        let mut tmp = vec![0.0; d];
                        if !f(x, out) || !g(x, &mut tmp) {
                            return false;
                        }
                        for (o, t) in out.iter_mut().zip(&tmp) {
                            *o -= t;
                        }
                        true
                    }),
                    label: format!("{}-{}", a.label(), b.label()),
                    depth: a.depth().max(b.depth()),
                }
            }
        }
    }
}

/// `[F, G]`; symbolic when both inputs are, nested central differences
/// otherwise.
pub fn lie_bracket(f: &BracketField, g: &BracketField) -> BracketField {
    let d = f.dim();
    if let (BracketField::Symbolic(fc), BracketField::Symbolic(gc)) = (f, g) {
        let comps = (0..d)
            .map(|m| {
                let mut acc = Expr::Const(0.0);
                for k in 0..d {
                    acc = Expr::add(acc, Expr::mul(gc[m].derivative(k), fc[k].clone()));
                    acc = Expr::sub(acc, Expr::mul(fc[m].derivative(k), gc[k].clone()));
                }
                acc
            })
            .collect();
        return BracketField::Symbolic(comps);
    }
    numeric_bracket(f, g)
}

/// `[F, G]` with `DG·F` and `DF·G` replaced by central differences of step
/// [`NUMERIC_BRACKET_STEP`] along the other field.
pub fn numeric_bracket(f: &BracketField, g: &BracketField) -> BracketField {
    let d = f.dim();
    let (ff, gf) = (f.as_num_fn(), g.as_num_fn());
    let eps = NUMERIC_BRACKET_STEP;
    let eval: NumFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let mut fv = vec![0.0; d];
        let mut gv = vec![0.0; d];
        let mut p = vec![0.0; d];
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        if !ff(x, &mut fv) || !gf(x, &mut gv) {
            return false;
        }
        // DG(x) F(x)
        for k in 0..d {
            p[k] = x[k] + eps * fv[k];
        }
        if !gf(&p, &mut a) {
            return false;
        }
        for k in 0..d {
            p[k] = x[k] - eps * fv[k];
        }
        if !gf(&p, &mut b) {
            return false;
        }
        for k in 0..d {
            out[k] = (a[k] - b[k]) / (2.0 * eps);
        }
        // DF(x) G(x)
        for k in 0..d {
            p[k] = x[k] + eps * gv[k];
        }
        if !ff(&p, &mut a) {
            return false;
        }
        for k in 0..d {
            p[k] = x[k] - eps * gv[k];
        }
        if !ff(&p, &mut b) {
            return false;
        }
        for k in 0..d {
            out[k] -= (a[k] - b[k]) / (2.0 * eps);
        }
        out.iter().all(|v| v.is_finite())
    });
    BracketField::Numeric {
        dim: d,
        eval,
        label: format!("[{},{}]", f.label(), g.label()),
        depth: f.depth().max(g.depth()) + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Weak,
    Strong,
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionKind::Weak => "weak",
            ConditionKind::Strong => "strong",
        })
    }
}

/// A bracket family split by order: `levels[k]` holds the fields first
/// appearing at order `k`.
#[derive(Debug, Clone)]
pub struct Family {
    pub kind: ConditionKind,
    pub levels: Vec<Vec<BracketField>>,
}

impl Family {
    pub fn k_max(&self) -> usize {
        self.levels.len() - 1
    }

    /// Cumulative size up to and including order `k`.
    pub fn size(&self, k: usize) -> usize {
        self.levels[..=k].iter().map(Vec::len).sum()
    }

    pub fn up_to(&self, k: usize) -> impl Iterator<Item = &BracketField> {
        self.levels[..=k].iter().flatten()
    }

    pub fn is_symbolic(&self) -> bool {
        self.levels.iter().flatten().all(BracketField::is_symbolic)
    }
}

/// Builds `𝓕_0..𝓕_{k_max}` (weak) or `𝓖_0..𝓖_{k_max}` (strong).
pub fn build_family(
    sys: &SwitchingSystem,
    kind: ConditionKind,
    k_max: usize,
    cap: usize,
) -> Result<Family> {
    let base: Vec<BracketField> = sys
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| BracketField::from_field(f, &format!("F{i}")))
        .collect();
    let symbolic = base.iter().all(BracketField::is_symbolic);
    // mixed systems are handled entirely numerically
    let base: Vec<BracketField> = if symbolic {
        base
    } else {
        base.into_iter()
            .enumerate()
            .map(|(i, f)| BracketField::Numeric {
                dim: f.dim(),
                eval: f.as_num_fn(),
                label: format!("F{i}"),
                depth: 0,
            })
            .collect()
    };
    let mut seen = HashSet::new();
    let mut size = 0;
    let mut admit = |f: BracketField, order: usize, level: &mut Vec<BracketField>| -> Result<()> {
        if f.is_zero() || !seen.insert(f.key()) {
            return Ok(());
        }
        size += 1;
        if size > cap {
            return Err(Error::FamilyExplosion { size, cap, order });
        }
        level.push(f);
        Ok(())
    };
    let mut level0 = Vec::new();
    match kind {
        ConditionKind::Weak => {
            for f in &base {
                admit(f.clone(), 0, &mut level0)?;
            }
        }
        ConditionKind::Strong => {
            for (i, a) in base.iter().enumerate() {
                for (j, b) in base.iter().enumerate() {
                    if i != j {
                        admit(BracketField::difference(a, b), 0, &mut level0)?;
                    }
                }
            }
        }
    }
    let mut levels = vec![level0];
    for order in 1..=k_max {
        let mut next = Vec::new();
        for v in &levels[order - 1] {
            for f in &base {
                admit(lie_bracket(f, v), order, &mut next)?;
            }
        }
        levels.push(next);
    }
    Ok(Family { kind, levels })
}

pub fn weak_family(sys: &SwitchingSystem, k_max: usize) -> Result<Family> {
    build_family(sys, ConditionKind::Weak, k_max, DEFAULT_FAMILY_CAP)
}

pub fn strong_family(sys: &SwitchingSystem, k_max: usize) -> Result<Family> {
    build_family(sys, ConditionKind::Strong, k_max, DEFAULT_FAMILY_CAP)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketReport {
    pub point: Vec<f64>,
    pub kind: ConditionKind,
    /// Highest order examined (stops early once the rank is full).
    pub k_explored: usize,
    /// Numerical rank of the family evaluated at the point, per order.
    pub ranks: Vec<usize>,
    /// Cumulative family size per order.
    pub family_sizes: Vec<usize>,
    /// Singular values at the last order examined, decreasing.
    pub singular_values: Vec<f64>,
    /// First order at which the rank equals the dimension.
    pub order_achieved: Option<usize>,
    pub satisfied: bool,
    /// Numeric brackets nested beyond second order were used.
    pub low_confidence: bool,
}

/// Evaluates a prebuilt family at `x` order by order.
pub fn check_family(family: &Family, x: &[f64], tol: f64) -> Result<BracketReport> {
    let d = x.len();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut ranks = Vec::new();
    let mut sizes = Vec::new();
    let mut singular_values = Vec::new();
    let mut order_achieved = None;
    let mut low_confidence = false;
    for (k, level) in family.levels.iter().enumerate() {
        for f in level {
            let v = f.eval(x).ok_or_else(|| Error::DomainProbe {
                what: format!("bracket field {}", f.key()),
                point: x.to_vec(),
            })?;
            low_confidence |= f.depth() > NUMERIC_CONFIDENT_DEPTH;
            vectors.push(v);
        }
        let (rank, sv) = numerical_rank(&vectors, d, tol);
        ranks.push(rank);
        sizes.push(family.size(k));
        singular_values = sv;
        if rank == d {
            order_achieved = Some(k);
            break;
        }
    }
    Ok(BracketReport {
        point: x.to_vec(),
        kind: family.kind,
        k_explored: ranks.len() - 1,
        ranks,
        family_sizes: sizes,
        singular_values,
        order_achieved,
        satisfied: order_achieved.is_some(),
        low_confidence,
    })
}

/// Weak or strong bracket condition at `x` up to order `k_max`.
pub fn check_condition(
    sys: &SwitchingSystem,
    x: &[f64],
    kind: ConditionKind,
    k_max: usize,
    tol: f64,
) -> Result<BracketReport> {
    if x.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "point has dimension {}, system has {}",
            x.len(),
            sys.dim()
        )));
    }
    let family = build_family(sys, kind, k_max, DEFAULT_FAMILY_CAP)?;
    check_family(&family, x, tol)
}

/// Inclusive grid with `per_axis` points along each axis of the box.
pub fn grid_points(domain: &StateBox, per_axis: usize) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let n = per_axis.max(1);
    let total = n.pow(d as u32);
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            (0..d)
                .map(|k| {
                    let i = rem % n;
                    rem /= n;
                    if n == 1 {
                        domain.lower()[k] + 0.5 * domain.width(k)
                    } else {
                        domain.lower()[k] + domain.width(k) * i as f64 / (n - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Checks the condition at every point of a grid over the box.
pub fn scan_region(
    sys: &SwitchingSystem,
    kind: ConditionKind,
    k_max: usize,
    tol: f64,
    per_axis: usize,
) -> Result<Vec<BracketReport>> {
    let family = build_family(sys, kind, k_max, DEFAULT_FAMILY_CAP)?;
    grid_points(sys.domain(), per_axis)
        .par_iter()
        .map(|x| check_family(&family, x, tol))
        .collect()
}

/// CSV verdict map with header `x1..xd,kind,order_achieved,rank,satisfied`;
/// `order_achieved` is empty when the condition fails.
pub fn write_verdicts_csv<W: Write>(reports: &[BracketReport], mut w: W) -> io::Result<()> {
    let d = reports.first().map_or(0, |r| r.point.len());
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.extend(["kind", "order_achieved", "rank", "satisfied"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for r in reports {
        for v in &r.point {
            write!(w, "{v},")?;
        }
        let order = r.order_achieved.map(|k| k.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            r.kind,
            order,
            r.ranks.last().copied().unwrap_or(0),
            r.satisfied
        )?;
    }
    Ok(())
}
