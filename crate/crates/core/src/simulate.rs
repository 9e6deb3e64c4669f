//! Sampling by thinning.
//!
//! Proposal times form a Poisson process of rate `lambda_bar`. Between
//! proposals the state follows the current regime's flow; at a proposal the
//! next regime is drawn from the row of `Q` at the landing point. Proposals
//! that keep the regime (phantom jumps) stay in the skeleton, flagged.
//!
//! Each embedded step consumes exactly two uniforms from the stream: one for
//! the exponential holding time and one for the regime draw. A holding time
//! that overshoots the horizon of [`sample_path`] consumes only the first.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::Integrator;
use crate::rng::StreamRng;
use crate::system::SwitchingSystem;

/// Column-oriented table of path rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathRows {
    dim: usize,
    times: Vec<f64>,
    positions: Vec<f64>,
    regimes: Vec<u32>,
    is_jump: Vec<bool>,
    is_true_switch: Vec<bool>,
}

impl PathRows {
    pub fn new(dim: usize) -> Self {
        PathRows {
            dim,
            ..Default::default()
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        PathRows {
            dim,
            times: Vec::with_capacity(rows),
            positions: Vec::with_capacity(rows * dim),
            regimes: Vec::with_capacity(rows),
            is_jump: Vec::with_capacity(rows),
            is_true_switch: Vec::with_capacity(rows),
        }
    }

    pub fn push(&mut self, t: f64, x: &[f64], regime: usize, is_jump: bool, is_true_switch: bool) {
        debug_assert_eq!(x.len(), self.dim);
        self.times.push(t);
        self.positions.extend_from_slice(x);
        self.regimes.push(regime as u32);
        self.is_jump.push(is_jump);
        self.is_true_switch.push(is_true_switch);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn regime(&self, k: usize) -> usize {
        self.regimes[k] as usize
    }

    pub fn is_jump(&self, k: usize) -> bool {
        self.is_jump[k]
    }

    pub fn is_true_switch(&self, k: usize) -> bool {
        self.is_true_switch[k]
    }

    /// CSV with header `t,x1..xd,regime,is_jump,is_true_switch`; flags are
    /// written as 0/1, floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = String::from("t");
        for k in 1..=self.dim {
            header.push_str(&format!(",x{k}"));
        }
        header.push_str(",regime,is_jump,is_true_switch\n");
        w.write_all(header.as_bytes())?;
        let mut line = String::new();
        for r in 0..self.len() {
            line.clear();
            line.push_str(&format!("{}", self.times[r]));
            for v in self.position(r) {
                line.push_str(&format!(",{v}"));
            }
            line.push_str(&format!(
                ",{},{},{}\n",
                self.regimes[r],
                self.is_jump[r] as u8,
                self.is_true_switch[r] as u8
            ));
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// One sampled trajectory: the jump skeleton `(T_n, X̃_n, Ỹ_n)` and, for
/// [`sample_path`], dense rows on the output grid plus every jump.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPath {
    skeleton: PathRows,
    dense: Option<PathRows>,
    horizon: f64,
    master_seed: u64,
    stream: u64,
    clamps: usize,
}

#[derive(Serialize)]
struct SkeletonRecord<'a> {
    n: usize,
    t: f64,
    x: &'a [f64],
    regime: usize,
    true_switch: bool,
}

impl HybridPath {
    /// Skeleton rows; row 0 is the initial state, row `n` the `n`-th jump.
    pub fn skeleton(&self) -> &PathRows {
        &self.skeleton
    }

    pub fn dense(&self) -> Option<&PathRows> {
        self.dense.as_ref()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Integration steps that were clamped back into the box.
    pub fn clamps(&self) -> usize {
        self.clamps
    }

    /// Number of jumps (true or phantom) in the skeleton.
    pub fn jumps(&self) -> usize {
        self.skeleton.len() - 1
    }

    /// `N_t`: number of jumps with `T_k <= t`.
    pub fn jumps_until(&self, t: f64) -> usize {
        self.skeleton.times()[1..].partition_point(|&s| s <= t)
    }

    /// Regime at time `t`, following the right-continuous convention.
    pub fn regime_at(&self, t: f64) -> usize {
        let k = self.jumps_until(t);
        self.skeleton.regime(k)
    }

    pub fn write_skeleton_json<W: Write>(&self, w: W) -> io::Result<()> {
        let s = &self.skeleton;
        let records: Vec<SkeletonRecord> = (0..s.len())
            .map(|k| SkeletonRecord {
                n: k,
                t: s.time(k),
                x: s.position(k),
                regime: s.regime(k),
                true_switch: s.is_true_switch(k),
            })
            .collect();
        serde_json::to_writer_pretty(w, &records).map_err(io::Error::other)
    }
}

/// Outcome of a single thinning step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedStep {
    pub x: Vec<f64>,
    pub regime: usize,
    pub holding_time: f64,
    pub true_switch: bool,
}

/// Holds integrator scratch and the `Q`-row buffer for repeated steps.
pub struct Stepper<'s> {
    integrator: Integrator<'s>,
    row: Vec<f64>,
}

impl<'s> Stepper<'s> {
    pub fn new(sys: &'s SwitchingSystem, h: f64) -> Result<Self> {
        Ok(Stepper {
            integrator: Integrator::new(sys, h)?,
            row: vec![0.0; sys.regimes()],
        })
    }

    pub fn integrator(&mut self) -> &mut Integrator<'s> {
        &mut self.integrator
    }

    /// Draws the post-jump regime from row `regime` of `Q(x)`.
    pub fn draw_regime(&mut self, x: &[f64], regime: usize, u: f64) -> Result<usize> {
        let sys = self.integrator.system();
        sys.q_row(x, regime, &mut self.row)?;
        let mut cum = 0.0;
        for (j, q) in self.row.iter().enumerate() {
            cum += q;
            if u < cum {
                return Ok(j);
            }
        }
        Ok(regime)
    }

    /// Advances `(x, regime)` by one proposal in place and returns the
    /// holding time.
    pub fn step(&mut self, x: &mut [f64], regime: &mut usize, rng: &mut StreamRng) -> Result<f64> {
        let u = rng.exponential(self.integrator.system().lambda_bar());
        self.integrator.advance(*regime, x, u)?;
        let v = rng.uniform();
        *regime = self.draw_regime(x, *regime, v)?;
        Ok(u)
    }
}

fn check_start(sys: &SwitchingSystem, x0: &[f64], i0: usize) -> Result<()> {
    if x0.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "initial point has dimension {}, system has {}",
            x0.len(),
            sys.dim()
        )));
    }
    if i0 >= sys.regimes() {
        return Err(Error::InvalidInput(format!(
            "initial regime {i0} outside 0..{}",
            sys.regimes()
        )));
    }
    Ok(())
}

/// One step of the embedded chain from `(x, regime)`.
pub fn embedded_step(
    sys: &SwitchingSystem,
    x: &[f64],
    regime: usize,
    rng: &mut StreamRng,
    h: f64,
) -> Result<EmbeddedStep> {
    check_start(sys, x, regime)?;
    let mut stepper = Stepper::new(sys, h)?;
    let mut x = x.to_vec();
    let mut next = regime;
    let u = stepper.step(&mut x, &mut next, rng)?;
    Ok(EmbeddedStep {
        x,
        regime: next,
        holding_time: u,
        true_switch: next != regime,
    })
}

/// `n_steps` steps of the embedded chain; skeleton only.
pub fn sample_embedded(
    sys: &SwitchingSystem,
    x0: &[f64],
    i0: usize,
    n_steps: usize,
    rng: &mut StreamRng,
    h: f64,
) -> Result<HybridPath> {
    check_start(sys, x0, i0)?;
    let mut stepper = Stepper::new(sys, h)?;
    let mut skeleton = PathRows::with_capacity(sys.dim(), n_steps + 1);
    let mut x = x0.to_vec();
    let mut i = i0;
    let mut t = 0.0;
    skeleton.push(t, &x, i, false, false);
    for _ in 0..n_steps {
        let before = i;
        t += stepper.step(&mut x, &mut i, rng)?;
        skeleton.push(t, &x, i, true, i != before);
    }
    Ok(HybridPath {
        skeleton,
        dense: None,
        horizon: t,
        master_seed: rng.master_seed(),
        stream: rng.stream(),
        clamps: stepper.integrator.clamps,
    })
}

/// Continuous-time path on `[0, horizon]` with rows at `k * output_dt`, at
/// every jump (post-jump regime) and at the horizon.
pub fn sample_path(
    sys: &SwitchingSystem,
    x0: &[f64],
    i0: usize,
    horizon: f64,
    output_dt: f64,
    rng: &mut StreamRng,
    h: f64,
) -> Result<HybridPath> {
    check_start(sys, x0, i0)?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    if !(output_dt.is_finite() && output_dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "output_dt must be positive, got {output_dt}"
        )));
    }
    let d = sys.dim();
    let lambda_bar = sys.lambda_bar();
    let mut stepper = Stepper::new(sys, h)?;
    let expected_jumps = (lambda_bar * horizon * 1.1) as usize + 16;
    let grid_rows = (horizon / output_dt) as usize + 2;
    let mut skeleton = PathRows::with_capacity(d, expected_jumps);
    let mut dense = PathRows::with_capacity(d, grid_rows + expected_jumps);
    let mut x = x0.to_vec();
    let mut i = i0;
    let mut t = 0.0;
    skeleton.push(t, &x, i, false, false);
    dense.push(t, &x, i, false, false);
    let mut k: u64 = 1;
    loop {
        let t_next = t + rng.exponential(lambda_bar);
        let stop = t_next.min(horizon);
        loop {
            let g = k as f64 * output_dt;
            if g >= stop {
                break;
            }
            stepper.integrator.advance(i, &mut x, g - t)?;
            t = g;
            dense.push(t, &x, i, false, false);
            k += 1;
        }
        stepper.integrator.advance(i, &mut x, stop - t)?;
        t = stop;
        if t_next >= horizon {
            dense.push(horizon, &x, i, false, false);
            break;
        }
        let before = i;
        let v = rng.uniform();
        i = stepper.draw_regime(&x, i, v)?;
        skeleton.push(t, &x, i, true, i != before);
        dense.push(t, &x, i, true, i != before);
    }
    Ok(HybridPath {
        skeleton,
        dense: Some(dense),
        horizon,
        master_seed: rng.master_seed(),
        stream: rng.stream(),
        clamps: stepper.integrator.clamps,
    })
}

/// Runs `op` for replicas `0..n` on the rayon pool, replica `k` getting
/// stream `k` of `master_seed`. Results come back in replica order.
pub fn ensemble<T, F>(n: usize, master_seed: u64, op: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut StreamRng) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidInput("ensemble needs at least one replica".into()));
    }
    let results: Vec<Result<T>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = StreamRng::new(master_seed, k as u64);
            op(k, &mut rng)
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        let (first_index, first) = results
            .into_iter()
            .enumerate()
            .find_map(|(k, r)| r.err().map(|e| (k, e)))
            .expect("at least one failure");
        return Err(Error::Ensemble {
            failed,
            total: n,
            first_index,
            first_message: first.to_string(),
        });
    }
    Ok(results.into_iter().map(|r| r.ok().expect("no failures")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::StateBox;

    fn two_regime(l0: f64, l1: f64, lambda_bar: f64) -> SwitchingSystem {
        SwitchingSystem::builder(StateBox::cube(1, 0.0, 1.0).unwrap())
            .field_exprs(&["-x1"])
            .unwrap()
            .field_exprs(&["1 - x1"])
            .unwrap()
            .constant_rate(0, 1, l0)
            .constant_rate(1, 0, l1)
            .lambda_bar(lambda_bar)
            .build()
            .unwrap()
    }

    #[test]
    fn no_switching_follows_single_flow() {
        let sys = SwitchingSystem::builder(StateBox::cube(1, 0.0, 1.0).unwrap())
            .field_exprs(&["-x1"])
            .unwrap()
            .field_exprs(&["1-x1"])
            .unwrap()
            .lambda_bar(3.0)
            .build()
            .unwrap();
        let mut rng = StreamRng::new(1, 0);
        let p = sample_path(&sys, &[1.0], 0, 1.0, 0.1, &mut rng, 1e-3).unwrap();
        let dense = p.dense().unwrap();
        let last = dense.len() - 1;
        assert_eq!(dense.time(last), 1.0);
        assert!((dense.position(last)[0] - (-1f64).exp()).abs() < 1e-6);
        assert!((0..p.skeleton().len()).all(|k| p.skeleton().regime(k) == 0));
        let s = embedded_step(&sys, &[0.5], 1, &mut rng, 1e-3).unwrap();
        assert_eq!(s.regime, 1);
        assert!(!s.true_switch);
        let want = 1.0 - 0.5 * (-s.holding_time).exp();
        assert!((s.x[0] - want).abs() < 1e-9);
    }

    #[test]
    fn zero_steps_gives_initial_state() {
        let sys = two_regime(1.0, 1.0, 3.0);
        let p = sample_embedded(&sys, &[0.2], 1, 0, &mut StreamRng::new(0, 0), 1e-3).unwrap();
        assert_eq!(p.jumps(), 0);
        assert_eq!(p.skeleton().position(0), &[0.2]);
        assert_eq!(p.skeleton().regime(0), 1);
    }

    #[test]
    fn dense_rows_contain_grid_and_jumps() {
        let sys = two_regime(1.0, 2.0, 4.0);
        let mut rng = StreamRng::new(5, 2);
        let p = sample_path(&sys, &[0.5], 0, 10.0, 0.25, &mut rng, 1e-3).unwrap();
        let dense = p.dense().unwrap();
        let grid = (0..dense.len())
            .filter(|&r| !dense.is_jump(r))
            .count();
        // t = 0, 0.25, ..., 9.75 and the horizon
        assert_eq!(grid, 41);
        assert_eq!(dense.len() - grid, p.jumps());
        assert!(dense.times().windows(2).all(|w| w[0] <= w[1]));
        for k in 1..p.skeleton().len() {
            let t = p.skeleton().time(k);
            let r = dense.times().iter().position(|&s| s == t).unwrap();
            assert_eq!(dense.position(r), p.skeleton().position(k));
            assert_eq!(dense.regime(r), p.skeleton().regime(k));
        }
    }

    #[test]
    fn interpolation_between_jumps_follows_flow() {
        let sys = two_regime(1.0, 2.0, 4.0);
        let mut rng = StreamRng::new(9, 0);
        let p = sample_path(&sys, &[0.5], 0, 20.0, 0.05, &mut rng, 1e-3).unwrap();
        let dense = p.dense().unwrap();
        let sk = p.skeleton();
        for r in 0..dense.len() {
            let t = dense.time(r);
            let n = p.jumps_until(t);
            let (tn, xn, i) = (sk.time(n), sk.position(n)[0], sk.regime(n));
            let target = i as f64;
            let want = target + (xn - target) * (-(t - tn)).exp();
            assert_eq!(dense.regime(r), i);
            assert!((dense.position(r)[0] - want).abs() < 1e-9, "row {r}");
        }
    }

    #[test]
    fn path_before_first_jump_depends_only_on_first_holding_time() {
        let sys = two_regime(1.0, 1.0, 3.0);
        let mut a = StreamRng::new(11, 0);
        let u1 = a.exponential(3.0);
        let mut rng = StreamRng::new(11, 0);
        let p = sample_path(&sys, &[0.9], 0, 5.0, 0.01, &mut rng, 1e-3).unwrap();
        let dense = p.dense().unwrap();
        for r in 0..dense.len() {
            if dense.time(r) >= u1 {
                break;
            }
            let want = 0.9 * (-dense.time(r)).exp();
            assert!((dense.position(r)[0] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_count_mean() {
        let sys = two_regime(1.0, 1.0, 3.0);
        let t = 2.0;
        let n = 10_000;
        let counts = ensemble(n, 77, |_, rng| {
            let mut stepper = Stepper::new(&sys, 1e-2)?;
            let mut x = [0.5];
            let mut i = 0;
            let mut s = 0.0;
            let mut c = 0usize;
            loop {
                s += stepper.step(&mut x, &mut i, rng)?;
                if s > t {
                    return Ok(c);
                }
                c += 1;
            }
        })
        .unwrap();
        let mean = counts.iter().sum::<usize>() as f64 / n as f64;
        let want = sys.lambda_bar() * t;
        assert!((mean - want).abs() < 3.0 * (want / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn stationary_regime_fraction() {
        let sys = two_regime(1.0, 3.0, 5.0);
        let p = sample_embedded(&sys, &[0.5], 0, 1_000_000, &mut StreamRng::new(3, 0), 0.05).unwrap();
        let zeros = (1..p.skeleton().len())
            .filter(|&k| p.skeleton().regime(k) == 0)
            .count();
        let frac = zeros as f64 / p.jumps() as f64;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
    }

    #[test]
    fn ensemble_is_order_deterministic() {
        let sys = two_regime(1.0, 1.0, 3.0);
        let run = |seed| {
            ensemble(8, seed, |_, rng| {
                sample_embedded(&sys, &[0.5], 0, 50, rng, 1e-2).map(|p| p.skeleton().clone())
            })
            .unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a, b);
        let alone = sample_embedded(&sys, &[0.5], 0, 50, &mut StreamRng::new(42, 5), 1e-2).unwrap();
        assert_eq!(&a[5], alone.skeleton());
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn ensemble_aggregates_failures() {
        let err = ensemble(5, 1, |k, _| {
            if k % 2 == 1 {
                Err(Error::InvalidInput(format!("replica {k}")))
            } else {
                Ok(k)
            }
        })
        .unwrap_err();
        match err {
            Error::Ensemble {
                failed,
                total,
                first_index,
                ..
            } => assert_eq!((failed, total, first_index), (2, 5, 1)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn csv_and_json_export() {
        let sys = two_regime(1.0, 1.0, 3.0);
        let p = sample_path(&sys, &[0.5], 0, 0.5, 0.25, &mut StreamRng::new(0, 0), 1e-3).unwrap();
        let mut buf = Vec::new();
        p.dense().unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,regime,is_jump,is_true_switch"));
        assert_eq!(lines.next(), Some("0,0.5,0,0,0"));
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let mut js = Vec::new();
        p.write_skeleton_json(&mut js).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&js).unwrap();
        assert_eq!(v.as_array().unwrap().len(), p.skeleton().len());
    }
}
