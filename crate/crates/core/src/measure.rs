//! Occupation measures, the exponential smoothing operator `K̃`, and
//! distances between empirical laws.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::Integrator;
use crate::simulate::HybridPath;
use crate::system::{StateBox, SwitchingSystem};

/// Default Gauss–Laguerre order for `K̃`.
pub const DEFAULT_QUADRATURE_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    /// Step average over the embedded chain.
    Discrete,
    /// Time average over a continuous path.
    Continuous,
    /// Image of another measure under a map.
    Pushforward,
}

/// Weighted atoms on `box x regimes`. Weights are normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    regimes: Vec<u32>,
    weights: Vec<f64>,
    kind: MeasureKind,
}

impl EmpiricalMeasure {
    /// Builds a measure from raw atoms and normalizes the weights.
    pub fn from_atoms(
        dim: usize,
        points: Vec<f64>,
        regimes: Vec<u32>,
        weights: Vec<f64>,
        kind: MeasureKind,
    ) -> Result<Self> {
        if points.len() != dim * regimes.len() || regimes.len() != weights.len() {
            return Err(Error::InvalidInput("atom arrays have inconsistent lengths".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InsufficientData("measure has zero total weight".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(EmpiricalMeasure {
            dim,
            points,
            regimes,
            weights,
            kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn regime(&self, k: usize) -> usize {
        self.regimes[k] as usize
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `∫ f dμ`.
    pub fn integrate<F: FnMut(&[f64], usize) -> f64>(&self, mut f: F) -> f64 {
        (0..self.len())
            .map(|k| self.weights[k] * f(self.point(k), self.regime(k)))
            .sum()
    }

    /// `∫ f dμ` for a fallible integrand; stops at the first error.
    pub fn try_integrate<F: FnMut(&[f64], usize) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for k in 0..self.len() {
            acc += self.weights[k] * f(self.point(k), self.regime(k))?;
        }
        Ok(acc)
    }

    /// Total mass carried by `regime`.
    pub fn regime_mass(&self, regime: usize) -> f64 {
        (0..self.len())
            .filter(|&k| self.regime(k) == regime)
            .map(|k| self.weights[k])
            .sum()
    }

    /// `(value, weight)` pairs of coordinate `coord`, optionally restricted
    /// to one regime; weights are renormalized to sum to one.
    pub fn marginal(&self, coord: usize, regime: Option<usize>) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = (0..self.len())
            .filter(|&k| regime.is_none_or(|r| self.regime(k) == r))
            .map(|k| (self.point(k)[coord], self.weights[k]))
            .collect();
        let total: f64 = out.iter().map(|p| p.1).sum();
        if total > 0.0 {
            for p in &mut out {
                p.1 /= total;
            }
        }
        out
    }

    /// Image under `map`; weights are kept.
    pub fn pushforward<F: FnMut(&[f64], usize) -> (Vec<f64>, usize)>(&self, mut map: F) -> Self {
        let mut points = Vec::with_capacity(self.points.len());
        let mut regimes = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let (y, j) = map(self.point(k), self.regime(k));
            points.extend_from_slice(&y);
            regimes.push(j as u32);
        }
        EmpiricalMeasure {
            dim: self.dim,
            points,
            regimes,
            weights: self.weights.clone(),
            kind: MeasureKind::Pushforward,
        }
    }

    /// CSV with header `x1..xd,regime,weight`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        header.push("regime".into());
        header.push("weight".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            for v in self.point(k) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{},{}", self.regimes[k], self.weights[k])?;
        }
        Ok(())
    }
}

/// `Π̃_n`: equal weights on `Z̃_1..Z̃_n`.
pub fn discrete_occupation(path: &HybridPath, n: usize) -> Result<EmpiricalMeasure> {
    let sk = path.skeleton();
    if n == 0 || path.jumps() < n {
        return Err(Error::InsufficientData(format!(
            "need {n} jumps, path has {}",
            path.jumps()
        )));
    }
    let d = sk.dim();
    let mut points = Vec::with_capacity(n * d);
    let mut regimes = Vec::with_capacity(n);
    for k in 1..=n {
        points.extend_from_slice(sk.position(k));
        regimes.push(sk.regime(k) as u32);
    }
    EmpiricalMeasure::from_atoms(d, points, regimes, vec![1.0; n], MeasureKind::Discrete)
}

/// `Π_T`: trapezoidal time average over the dense rows on `[0, T]`. On each
/// interval the regime is that of the left row; a row lying on a switch
/// therefore carries mass in two regimes.
pub fn continuous_occupation(path: &HybridPath, t_end: f64) -> Result<EmpiricalMeasure> {
    let dense = path
        .dense()
        .ok_or_else(|| Error::InsufficientData("path has no dense samples".into()))?;
    if !(t_end > 0.0) || t_end > path.horizon() * (1.0 + 1e-12) {
        return Err(Error::InsufficientData(format!(
            "occupation horizon {t_end} outside (0, {}]",
            path.horizon()
        )));
    }
    let d = dense.dim();
    let mut points: Vec<f64> = Vec::with_capacity(dense.len() * d);
    let mut regimes: Vec<u32> = Vec::with_capacity(dense.len());
    let mut weights: Vec<f64> = Vec::with_capacity(dense.len());
    let mut last: Option<(usize, u32)> = None;
    let mut push = |row: Option<usize>, x: &[f64], regime: u32, w: f64| {
        if let (Some(r), Some((lr, lreg))) = (row, last) {
            if r == lr && regime == lreg {
                *weights.last_mut().expect("non-empty") += w;
                return;
            }
        }
        points.extend_from_slice(x);
        regimes.push(regime);
        weights.push(w);
        last = row.map(|r| (r, regime));
    };
    let mut xt = vec![0.0; d];
    for r in 0..dense.len().saturating_sub(1) {
        let (t0, t1) = (dense.time(r), dense.time(r + 1));
        if t0 >= t_end {
            break;
        }
        let regime = dense.regime(r) as u32;
        if t1 <= t_end || (t1 - t_end).abs() <= 1e-12 * t_end {
            let dt = t1.min(t_end) - t0;
            if dt <= 0.0 {
                continue;
            }
            push(Some(r), dense.position(r), regime, 0.5 * dt);
            push(Some(r + 1), dense.position(r + 1), regime, 0.5 * dt);
        } else {
            let s = (t_end - t0) / (t1 - t0);
            for k in 0..d {
                xt[k] = dense.position(r)[k] + s * (dense.position(r + 1)[k] - dense.position(r)[k]);
            }
            let dt = t_end - t0;
            push(Some(r), dense.position(r), regime, 0.5 * dt);
            push(None, &xt, regime, 0.5 * dt);
            break;
        }
    }
    EmpiricalMeasure::from_atoms(d, points, regimes, weights, MeasureKind::Continuous)
}

/// Gauss–Laguerre rule for `∫_0^∞ e^{-s} g(s) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLaguerre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLaguerre {
    /// Nodes by Newton iteration on the Laguerre recurrence.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > 180 {
            return Err(Error::InvalidInput(format!(
                "quadrature order must be in 1..=180, got {order}"
            )));
        }
        let n = order;
        let nf = n as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let mut z: f64 = 0.0;
        for i in 0..n {
            z = match i {
                0 => 3.0 / (1.0 + 2.4 * nf),
                1 => z + 15.0 / (1.0 + 2.5 * nf),
                _ => {
                    let ai = (i - 1) as f64;
                    z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2])
                }
            };
            let mut pp = 0.0;
            let mut p2 = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
                }
                pp = nf * (p1 - p2) / z;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            weights[i] = -1.0 / (pp * nf * p2);
        }
        Ok(GaussLaguerre { nodes, weights })
    }

    /// Drops nodes whose weight is below `floor`.
    pub fn truncated(mut self, floor: f64) -> Self {
        let keep = self.weights.iter().filter(|&&w| w >= floor).count();
        self.nodes.truncate(keep);
        self.weights.truncate(keep);
        self
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// `K̃f(x, i) = ∫ λ̄ e^{-λ̄ t} f(Φ^i_t(x), i) dt`, with the flow advanced
/// through the rescaled nodes `s_k / λ̄` in a single pass.
pub fn apply_ktilde<F: Fn(&[f64], usize) -> f64>(
    integrator: &mut Integrator<'_>,
    quad: &GaussLaguerre,
    f: &F,
    x: &[f64],
    regime: usize,
) -> Result<f64> {
    let lambda_bar = integrator.system().lambda_bar();
    let mut y = x.to_vec();
    let mut t = 0.0;
    let mut acc = 0.0;
    for (s, w) in quad.nodes.iter().zip(&quad.weights) {
        let target = s / lambda_bar;
        integrator.advance(regime, &mut y, target - t)?;
        t = target;
        acc += w * f(&y, regime);
    }
    Ok(acc)
}

/// Convenience wrapper building the integrator and the rule.
pub fn ktilde<F: Fn(&[f64], usize) -> f64>(
    sys: &SwitchingSystem,
    f: &F,
    x: &[f64],
    regime: usize,
    order: usize,
    h: f64,
) -> Result<f64> {
    let quad = GaussLaguerre::new(order)?;
    let mut it = Integrator::new(sys, h)?;
    apply_ktilde(&mut it, &quad, f, x, regime)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrespondenceGap {
    pub t: f64,
    /// `N_t`.
    pub jumps: usize,
    /// `Π_t f`.
    pub continuous: f64,
    /// `Π̃_{N_t} K̃f`.
    pub discrete: f64,
    pub gap: f64,
}

/// `|Π_t f − Π̃_{N_t}(K̃f)|`.
pub fn correspondence_gap<F: Fn(&[f64], usize) -> f64>(
    sys: &SwitchingSystem,
    path: &HybridPath,
    f: &F,
    t: f64,
    quad: &GaussLaguerre,
    h: f64,
) -> Result<CorrespondenceGap> {
    let cont = continuous_occupation(path, t)?.integrate(|x, i| f(x, i));
    let n = path.jumps_until(t);
    let disc_measure = discrete_occupation(path, n)?;
    let mut it = Integrator::new(sys, h)?;
    let disc = disc_measure.try_integrate(|x, i| apply_ktilde(&mut it, quad, f, x, i))?;
    Ok(CorrespondenceGap {
        t,
        jumps: n,
        continuous: cont,
        discrete: disc,
        gap: (cont - disc).abs(),
    })
}

/// Per-regime bin masses on a regular grid over the box.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    domain: StateBox,
    regimes: usize,
    bins: usize,
    masses: Vec<f64>,
}

/// 64 bins per axis up to dimension two, 16 in dimension three.
pub fn default_bins(dim: usize) -> Option<usize> {
    match dim {
        1 | 2 => Some(64),
        3 => Some(16),
        _ => None,
    }
}

impl Histogram {
    pub fn new(measure: &EmpiricalMeasure, domain: &StateBox, regimes: usize, bins: usize) -> Result<Self> {
        let d = domain.dim();
        if d >= 4 {
            return Err(Error::Unsupported(format!(
                "histograms in dimension {d}; use marginals"
            )));
        }
        if d != measure.dim() {
            return Err(Error::GridMismatch);
        }
        if bins == 0 {
            return Err(Error::InvalidInput("histogram needs at least one bin".into()));
        }
        let cells = bins.pow(d as u32);
        let mut masses = vec![0.0; regimes * cells];
        for k in 0..measure.len() {
            let r = measure.regime(k);
            if r >= regimes {
                return Err(Error::InvalidInput(format!("atom in regime {r}")));
            }
            let idx = Self::flat_index(domain, bins, measure.point(k));
            masses[r * cells + idx] += measure.weight(k);
        }
        Ok(Histogram {
            domain: domain.clone(),
            regimes,
            bins,
            masses,
        })
    }

    fn flat_index(domain: &StateBox, bins: usize, x: &[f64]) -> usize {
        let mut idx = 0;
        for k in (0..domain.dim()).rev() {
            let s = (x[k] - domain.lower()[k]) / domain.width(k);
            let b = ((s * bins as f64).floor().max(0.0) as usize).min(bins - 1);
            idx = idx * bins + b;
        }
        idx
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn cells(&self) -> usize {
        self.bins.pow(self.domain.dim() as u32)
    }

    pub fn mass(&self, regime: usize, cell: usize) -> f64 {
        self.masses[regime * self.cells() + cell]
    }

    /// Center of flat cell index `cell`.
    pub fn center(&self, cell: usize) -> Vec<f64> {
        let d = self.domain.dim();
        let mut rem = cell;
        (0..d)
            .map(|k| {
                let b = rem % self.bins;
                rem /= self.bins;
                self.domain.lower()[k] + (b as f64 + 0.5) * self.domain.width(k) / self.bins as f64
            })
            .collect()
    }

    /// CSV with header `x1..xd,regime,mass` (bin centers).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.domain.dim();
        let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        header.push("regime".into());
        header.push("mass".into());
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.regimes {
            for c in 0..self.cells() {
                for v in self.center(c) {
                    write!(w, "{v},")?;
                }
                writeln!(w, "{r},{}", self.mass(r, c))?;
            }
        }
        Ok(())
    }
}

/// `(1/2) Σ |m1 − m2|` over all bins and regimes.
pub fn tv_distance(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.domain != b.domain || a.bins != b.bins || a.regimes != b.regimes {
        return Err(Error::GridMismatch);
    }
    Ok(0.5 * a.masses.iter().zip(&b.masses).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Weighted Kolmogorov–Smirnov distance `sup |F_emp − F_ref|`, checking
/// both one-sided limits at every atom.
pub fn ks_distance_1d<C: Fn(f64) -> f64>(samples: &[(f64, f64)], cdf: C) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let mut s: Vec<(f64, f64)> = samples.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = s.iter().map(|p| p.1).sum();
    let mut below = 0.0;
    let mut sup: f64 = 0.0;
    let mut k = 0;
    while k < s.len() {
        let v = s[k].0;
        let mut w = 0.0;
        while k < s.len() && s[k].0 == v {
            w += s[k].1;
            k += 1;
        }
        let f = cdf(v);
        sup = sup.max((below / total - f).abs());
        below += w;
        sup = sup.max((below / total - f).abs());
    }
    Ok(sup)
}

/// Unweighted KS distance.
pub fn ks_distance<C: Fn(f64) -> f64>(samples: &[f64], cdf: C) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = samples.iter().map(|&v| (v, 1.0)).collect();
    ks_distance_1d(&pairs, cdf)
}
