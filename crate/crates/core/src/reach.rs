//! Grid approximation of positive orbits, accessible sets and ω-limit sets
//! by bang-bang exploration.
//!
//! Each occupied cell is expanded from two seeds: the point through which it
//! was first entered (the start point for the start cell) and its center.
//! The first keeps sub-cell progress along a trajectory; the second keeps
//! invariant manifolds through cell centers exact. Expanding flows a seed
//! under each regime in micro-steps of length `tau` until it leaves the
//! cell; the landing cell is marked. A seed that stays in its cell for
//! [`MAX_MICRO_STEPS`] micro-steps is a stall and yields a self-loop.

use std::collections::HashMap;
use std::io::{self, Write};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{Integrator, DEFAULT_STEP};
use crate::system::{StateBox, SwitchingSystem};

pub const DEFAULT_RESOLUTION: usize = 128;
pub const DEFAULT_STARTS: usize = 32;
/// Micro-steps tried before a representative counts as stalled.
pub const MAX_MICRO_STEPS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachOptions {
    /// Cells per axis.
    pub resolution: usize,
    /// Micro-step; `0.5 * cell / speed_bound` when `None`.
    pub tau: Option<f64>,
    /// BFS levels; `10 * resolution` when `None`.
    pub max_iters: Option<usize>,
    /// RK4 step inside a micro-step.
    pub h: f64,
    /// Closure radius in cells for accessible and ω-limit sets.
    pub dilation: usize,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            resolution: DEFAULT_RESOLUTION,
            tau: None,
            max_iters: None,
            h: DEFAULT_STEP,
            dilation: 1,
        }
    }
}

impl ReachOptions {
    pub fn with_resolution(resolution: usize) -> Self {
        ReachOptions {
            resolution,
            ..Default::default()
        }
    }
}

/// Boolean occupancy over a regular grid on the box.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachGrid {
    domain: StateBox,
    resolution: usize,
    occupied: Vec<bool>,
    tau: f64,
    starts: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
}

impl ReachGrid {
    fn empty(domain: &StateBox, resolution: usize, tau: f64) -> Self {
        ReachGrid {
            domain: domain.clone(),
            resolution,
            occupied: vec![false; resolution.pow(domain.dim() as u32)],
            tau,
            starts: Vec::new(),
            iterations: 0,
            converged: false,
        }
    }

    pub fn domain(&self) -> &StateBox {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn starts(&self) -> &[Vec<f64>] {
        &self.starts
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// The exploration reached a fixed point before `max_iters`.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn cells(&self) -> usize {
        self.occupied.len()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn is_occupied(&self, cell: usize) -> bool {
        self.occupied[cell]
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.domain.width(axis) / self.resolution as f64
    }

    /// Cell containing `x`; points outside the box map to the boundary cell.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        cell_index(&self.domain, self.resolution, x)
    }

    pub fn cell_coords(&self, cell: usize) -> Vec<usize> {
        let mut rem = cell;
        (0..self.dim())
            .map(|_| {
                let c = rem % self.resolution;
                rem /= self.resolution;
                c
            })
            .collect()
    }

    fn flat(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.resolution + c)
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        self.cell_coords(cell)
            .iter()
            .enumerate()
            .map(|(k, &c)| self.domain.lower()[k] + (c as f64 + 0.5) * self.cell_width(k))
            .collect()
    }

    /// Cells at Chebyshev distance at most one, wrapping periodic axes.
    pub fn neighborhood(&self, cell: usize) -> Vec<usize> {
        let d = self.dim();
        let base = self.cell_coords(cell);
        let r = self.resolution as i64;
        let mut out = Vec::with_capacity(3usize.pow(d as u32));
        for code in 0..3usize.pow(d as u32) {
            let mut rem = code;
            let mut coords = Vec::with_capacity(d);
            let mut valid = true;
            for (k, &b) in base.iter().enumerate() {
                let off = (rem % 3) as i64 - 1;
                rem /= 3;
                let mut c = b as i64 + off;
                if self.domain.wrap()[k] {
                    c = c.rem_euclid(r);
                } else if c < 0 || c >= r {
                    valid = false;
                    break;
                }
                coords.push(c as usize);
            }
            if valid {
                let f = self.flat(&coords);
                if !out.contains(&f) {
                    out.push(f);
                }
            }
        }
        out
    }

    /// One-cell dilation.
    pub fn closure(&self) -> ReachGrid {
        self.dilate(1)
    }

    /// Dilation by `cells` cells in the Chebyshev metric.
    pub fn dilate(&self, cells: usize) -> ReachGrid {
        let mut out = self.clone();
        for _ in 0..cells {
            let prev = out.occupied.clone();
            for c in 0..self.cells() {
                if prev[c] {
                    for n in self.neighborhood(c) {
                        out.occupied[n] = true;
                    }
                }
            }
        }
        out
    }

    fn check_compatible(&self, other: &ReachGrid) -> Result<()> {
        if self.domain != other.domain || self.resolution != other.resolution {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn intersect(&self, other: &ReachGrid) -> Result<ReachGrid> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.occupied.iter_mut().zip(&other.occupied) {
            *a &= *b;
        }
        out.starts.extend_from_slice(&other.starts);
        out.converged &= other.converged;
        out.iterations = out.iterations.max(other.iterations);
        Ok(out)
    }

    /// Cells occupied in exactly one of the grids.
    pub fn symmetric_difference(&self, other: &ReachGrid) -> Result<usize> {
        self.check_compatible(other)?;
        Ok(self
            .occupied
            .iter()
            .zip(&other.occupied)
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Occupancy on a grid `factor` times coarser: a coarse cell is
    /// occupied when any of its fine cells is.
    pub fn coarsen(&self, factor: usize) -> Result<ReachGrid> {
        if factor == 0 || self.resolution % factor != 0 {
            return Err(Error::InvalidInput(format!(
                "cannot coarsen {} cells by {factor}",
                self.resolution
            )));
        }
        let mut out = ReachGrid::empty(&self.domain, self.resolution / factor, self.tau);
        out.starts = self.starts.clone();
        out.iterations = self.iterations;
        out.converged = self.converged;
        for c in 0..self.cells() {
            if self.occupied[c] {
                let coarse: Vec<usize> = self.cell_coords(c).iter().map(|&v| v / factor).collect();
                let f = out.flat(&coarse);
                out.occupied[f] = true;
            }
        }
        Ok(out)
    }

    /// CSV with header `x1..xd,occupied` (cell centers, one row per cell).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        header.push("occupied".into());
        writeln!(w, "{}", header.join(","))?;
        for c in 0..self.cells() {
            for v in self.center(c) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{}", self.occupied[c] as u8)?;
        }
        Ok(())
    }

    /// Plain PGM (P2); occupied cells black, first row at the top of the
    /// second axis. One-dimensional grids give a single row.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let (width, height) = match self.dim() {
            1 => (self.resolution, 1),
            2 => (self.resolution, self.resolution),
            d => return Err(Error::Unsupported(format!("PGM export in dimension {d}"))),
        };
        let mut text = format!("P2\n{width} {height}\n255\n");
        for row in (0..height).rev() {
            let line: Vec<&str> = (0..width)
                .map(|col| {
                    if self.occupied[row * width + col] {
                        "0"
                    } else {
                        "255"
                    }
                })
                .collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
        w.write_all(text.as_bytes()).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

fn cell_index(domain: &StateBox, resolution: usize, x: &[f64]) -> usize {
    let mut idx = 0;
    for k in (0..domain.dim()).rev() {
        let s = (x[k] - domain.lower()[k]) / domain.width(k);
        let c = ((s * resolution as f64).floor().max(0.0) as usize).min(resolution - 1);
        idx = idx * resolution + c;
    }
    idx
}

struct Edge {
    from: usize,
    to: usize,
    time: f64,
}

struct Exploration {
    grid: ReachGrid,
    edges: Vec<Edge>,
}

fn resolve_tau(sys: &SwitchingSystem, opts: &ReachOptions) -> Result<f64> {
    let d = sys.dim();
    if d >= 4 {
        return Err(Error::Unsupported(format!("reachability in dimension {d}")));
    }
    if opts.resolution < 2 {
        return Err(Error::InvalidInput("reach grid needs at least 2 cells per axis".into()));
    }
    let cell = (0..d)
        .map(|k| sys.domain().width(k) / opts.resolution as f64)
        .fold(f64::INFINITY, f64::min);
    let speed = sys.speed_bound();
    let tau = match opts.tau {
        Some(t) if t.is_finite() && t > 0.0 => t,
        Some(t) => return Err(Error::InvalidInput(format!("micro-step must be positive, got {t}"))),
        None if speed > 0.0 => 0.5 * cell / speed,
        None => cell,
    };
    if tau * speed >= 2.0 * cell {
        return Err(Error::ResolutionTooCoarse {
            displacement: tau * speed,
            cell,
        });
    }
    Ok(tau)
}

fn explore(
    sys: &SwitchingSystem,
    x0: &[f64],
    opts: &ReachOptions,
    tau: f64,
    record_edges: bool,
) -> Result<Exploration> {
    if x0.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "start has dimension {}, system has {}",
            x0.len(),
            sys.dim()
        )));
    }
    let mut start = x0.to_vec();
    sys.domain().wrap_point(&mut start);
    if !sys.domain().contains(&start, sys.clamp_margin()) {
        return Err(Error::InvalidInput(format!("start {x0:?} is outside the box")));
    }
    let max_iters = opts.max_iters.unwrap_or(10 * opts.resolution);
    let mut grid = ReachGrid::empty(sys.domain(), opts.resolution, tau);
    grid.starts.push(start.clone());
    let mut reps: HashMap<usize, Vec<f64>> = HashMap::new();
    let c0 = grid.cell_of(&start);
    grid.occupied[c0] = true;
    reps.insert(c0, start);
    let mut frontier = vec![c0];
    let mut edges = Vec::new();
    let mut it = Integrator::new(sys, opts.h.min(tau))?;
    let mut p = vec![0.0; sys.dim()];
    while !frontier.is_empty() && grid.iterations < max_iters {
        grid.iterations += 1;
        let mut next = Vec::new();
        for &cell in &frontier {
            let seeds = [reps[&cell].clone(), grid.center(cell)];
            for seed in &seeds {
                for regime in 0..sys.regimes() {
                    p.copy_from_slice(seed);
                    let mut landed = cell;
                    let mut n = 0;
                    while n < MAX_MICRO_STEPS {
                        it.advance(regime, &mut p, tau)?;
                        n += 1;
                        landed = grid.cell_of(&p);
                        if landed != cell {
                            break;
                        }
                    }
                    if record_edges {
                        edges.push(Edge {
                            from: cell,
                            to: landed,
                            time: n as f64 * tau,
                        });
                    }
                    if !grid.occupied[landed] {
                        grid.occupied[landed] = true;
                        reps.insert(landed, p.clone());
                        next.push(landed);
                    }
                }
            }
        }
        frontier = next;
    }
    grid.converged = frontier.is_empty();
    Ok(Exploration { grid, edges })
}

/// Grid approximation of `closure(γ⁺(x0))`.
pub fn reachable(sys: &SwitchingSystem, x0: &[f64], opts: &ReachOptions) -> Result<ReachGrid> {
    let tau = resolve_tau(sys, opts)?;
    Ok(explore(sys, x0, opts, tau, false)?.grid)
}

/// First `n` points of the Halton sequence (bases 2, 3, 5) scaled to the
/// box, skipping the origin of the sequence.
pub fn halton_points(domain: &StateBox, n: usize) -> Vec<Vec<f64>> {
    const BASES: [u64; 3] = [2, 3, 5];
    (1..=n as u64)
        .map(|i| {
            (0..domain.dim())
                .map(|k| {
                    let b = BASES[k % BASES.len()];
                    let (mut f, mut r, mut m) = (1.0, 0.0, i);
                    while m > 0 {
                        f /= b as f64;
                        r += f * (m % b) as f64;
                        m /= b;
                    }
                    domain.lower()[k] + r * domain.width(k)
                })
                .collect()
        })
        .collect()
}

/// Intersection over the starts of the reachable grids, each dilated by
/// `opts.dilation` cells.
pub fn accessible_set(
    sys: &SwitchingSystem,
    starts: &[Vec<f64>],
    opts: &ReachOptions,
) -> Result<ReachGrid> {
    if starts.is_empty() {
        return Err(Error::InvalidInput("accessible set needs at least one start".into()));
    }
    let tau = resolve_tau(sys, opts)?;
    let grids: Vec<ReachGrid> = starts
        .par_iter()
        .map(|x| explore(sys, x, opts, tau, false).map(|e| e.grid.dilate(opts.dilation)))
        .collect::<Result<_>>()?;
    let mut iter = grids.into_iter();
    let first = iter.next().expect("non-empty");
    iter.try_fold(first, |acc, g| acc.intersect(&g))
}

/// [`accessible_set`] from the default Halton starts.
pub fn accessible_set_default(sys: &SwitchingSystem, opts: &ReachOptions) -> Result<ReachGrid> {
    accessible_set(sys, &halton_points(sys.domain(), DEFAULT_STARTS), opts)
}

/// Cells that the exploration from `x0` can occupy at times `>= burn_in`,
/// dilated by `opts.dilation` cells.
///
/// Arrival times are longest paths in the cell graph (edge weight = time
/// spent leaving a cell); cells in or downstream of a cycle, including a
/// stall, can be visited arbitrarily late.
pub fn omega_limit(
    sys: &SwitchingSystem,
    x0: &[f64],
    burn_in: f64,
    opts: &ReachOptions,
) -> Result<ReachGrid> {
    let tau = resolve_tau(sys, opts)?;
    let ex = explore(sys, x0, opts, tau, true)?;
    let mut graph: DiGraph<usize, f64> = DiGraph::new();
    let mut node_of: HashMap<usize, NodeIndex> = HashMap::new();
    for c in (0..ex.grid.cells()).filter(|&c| ex.grid.occupied[c]) {
        node_of.insert(c, graph.add_node(c));
    }
    let mut self_loop = vec![false; graph.node_count()];
    for e in &ex.edges {
        let (a, b) = (node_of[&e.from], node_of[&e.to]);
        if a == b {
            self_loop[a.index()] = true;
        }
        graph.add_edge(a, b, e.time);
    }
    let sccs = tarjan_scc(&graph);
    let mut arrival = vec![f64::NEG_INFINITY; graph.node_count()];
    let start = node_of[&ex.grid.cell_of(&ex.grid.starts[0])];
    arrival[start.index()] = 0.0;
    // tarjan_scc lists components in reverse topological order
    for comp in sccs.iter().rev() {
        let cyclic = comp.len() > 1 || self_loop[comp[0].index()];
        if cyclic && comp.iter().any(|n| arrival[n.index()] > f64::NEG_INFINITY) {
            for n in comp {
                arrival[n.index()] = f64::INFINITY;
            }
        }
        for &n in comp {
            let t = arrival[n.index()];
            for e in graph.edges(n) {
                use petgraph::visit::EdgeRef;
                let v = e.target().index();
                arrival[v] = arrival[v].max(t + e.weight());
            }
        }
    }
    let mut grid = ReachGrid::empty(sys.domain(), opts.resolution, tau);
    grid.starts = ex.grid.starts.clone();
    grid.iterations = ex.grid.iterations;
    grid.converged = ex.grid.converged;
    for n in graph.node_indices() {
        if arrival[n.index()] >= burn_in {
            grid.occupied[graph[n]] = true;
        }
    }
    Ok(grid.dilate(opts.dilation))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus2() -> SwitchingSystem {
        SwitchingSystem::builder(StateBox::unit_torus(2).unwrap())
            .field_exprs(&["1", "0"])
            .unwrap()
            .field_exprs(&["0", "1"])
            .unwrap()
            .constant_rate(0, 1, 1.0)
            .constant_rate(1, 0, 1.0)
            .lambda_bar(3.0)
            .build()
            .unwrap()
    }

    fn contraction() -> SwitchingSystem {
        SwitchingSystem::builder(StateBox::cube(2, -1.5, 1.5).unwrap())
            .field_exprs(&["-x1", "-x2"])
            .unwrap()
            .lambda_bar(1.0)
            .build()
            .unwrap()
    }

    fn distance_to_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let ab = [b[0] - a[0], b[1] - a[1]];
        let ap = [p[0] - a[0], p[1] - a[1]];
        let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
        ((ap[0] - t * ab[0]).powi(2) + (ap[1] - t * ab[1]).powi(2)).sqrt()
    }

    #[test]
    fn torus_is_fully_reachable() {
        let opts = ReachOptions {
            resolution: 64,
            tau: Some(0.25 / 64.0),
            ..Default::default()
        };
        let g = reachable(&torus2(), &[0.3, 0.7], &opts).unwrap();
        assert_eq!(g.count(), 64 * 64);
        let w = omega_limit(&torus2(), &[0.1, 0.1], 5.0, &opts).unwrap();
        assert_eq!(w.count(), 64 * 64);
    }

    #[test]
    fn zero_fields_reach_only_the_start() {
        let sys = SwitchingSystem::builder(StateBox::cube(2, 0.0, 1.0).unwrap())
            .field_exprs(&["0", "0"])
            .unwrap()
            .field_exprs(&["0", "0"])
            .unwrap()
            .lambda_bar(1.0)
            .build()
            .unwrap();
        let g = reachable(&sys, &[0.5, 0.5], &ReachOptions::with_resolution(16)).unwrap();
        assert_eq!(g.count(), 1);
        assert!(g.converged());
    }

    #[test]
    fn contraction_traces_the_ray() {
        let sys = contraction();
        let opts = ReachOptions::with_resolution(128);
        let g = reachable(&sys, &[1.0, 0.0], &opts).unwrap();
        let cell = g.cell_width(0);
        for c in (0..g.cells()).filter(|&c| g.is_occupied(c)) {
            let d = distance_to_segment(&g.center(c), &[0.0, 0.0], &[1.0, 0.0]);
            assert!(d <= 1.5 * cell, "cell {c} at distance {d}");
        }
        let covered = (0..=200)
            .map(|k| vec![k as f64 / 200.0, 0.0])
            .filter(|p| g.neighborhood(g.cell_of(p)).iter().any(|&n| g.is_occupied(n)))
            .count();
        assert!(covered as f64 / 201.0 >= 0.9);
        // ω-limit is a neighborhood of the sink
        let w = omega_limit(&sys, &[1.0, 0.0], 20.0, &opts).unwrap();
        assert!(w.count() <= 9);
        assert!(w.is_occupied(w.cell_of(&[0.0, 0.0])));
    }

    #[test]
    fn too_coarse_micro_step_is_rejected() {
        let sys = contraction();
        let opts = ReachOptions {
            resolution: 32,
            tau: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(
            reachable(&sys, &[1.0, 0.0], &opts),
            Err(Error::ResolutionTooCoarse { .. })
        ));
    }

    #[test]
    fn occupancy_grows_with_iterations() {
        let sys = torus2();
        let mut prev: Option<ReachGrid> = None;
        for k in 1..12 {
            let opts = ReachOptions {
                resolution: 32,
                max_iters: Some(k),
                ..Default::default()
            };
            let g = reachable(&sys, &[0.5, 0.5], &opts).unwrap();
            if let Some(p) = prev {
                assert!(p
                    .occupancy()
                    .iter()
                    .zip(g.occupancy())
                    .all(|(a, b)| !a || *b));
                assert!(g.count() > p.count());
            }
            prev = Some(g);
        }
    }

    #[test]
    fn closure_and_neighborhoods() {
        let sys = torus2();
        let mut g = ReachGrid::empty(sys.domain(), 8, 0.1);
        g.occupied[0] = true;
        // corner cell on a torus has all 8 neighbours
        assert_eq!(g.neighborhood(0).len(), 9);
        assert_eq!(g.closure().count(), 9);
        let c = contraction();
        let mut h = ReachGrid::empty(c.domain(), 8, 0.1);
        h.occupied[0] = true;
        assert_eq!(h.closure().count(), 4);
        assert_eq!(h.coarsen(2).unwrap().count(), 1);
        assert_eq!(h.dilate(2).count(), 9);
        assert_eq!(g.dilate(0), g);
        assert!(h.coarsen(3).is_err());
    }

    #[test]
    fn halton_points_fill_the_box() {
        let b = StateBox::cube(2, -1.0, 1.0).unwrap();
        let pts = halton_points(&b, 32);
        assert_eq!(pts.len(), 32);
        assert_eq!(pts[0], vec![0.0, -1.0 + 2.0 / 3.0]);
        let quadrants = |sx: f64, sy: f64| pts.iter().filter(|p| p[0] * sx > 0.0 && p[1] * sy > 0.0).count();
        for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            assert!(quadrants(sx, sy) >= 5);
        }
    }

    #[test]
    fn exports() {
        let sys = contraction();
        let g = reachable(&sys, &[1.0, 0.0], &ReachOptions::with_resolution(4)).unwrap();
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with("x1,x2,occupied\n-1.125,-1.125,0\n"));
        let mut pgm = Vec::new();
        g.write_pgm(&mut pgm).unwrap();
        let text = String::from_utf8(pgm).unwrap();
        assert!(text.starts_with("P2\n4 4\n255\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
