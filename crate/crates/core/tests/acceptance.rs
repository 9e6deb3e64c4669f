//! Acceptance criteria. Runs as a plain binary and prints one PASS/FAIL line
//! per criterion; exits non-zero if any criterion fails.

use std::time::Instant;

use pdmp_core::brackets::{check_condition, grid_points, lie_bracket, BracketField, ConditionKind};
use pdmp_core::examples::{interval_beta, interval_beta_cdf, planar_linear, radulescu, radulescu_diagonal, torus};
use pdmp_core::flow::DEFAULT_STEP;
use pdmp_core::measure::{continuous_occupation, correspondence_gap, ks_distance, ks_distance_1d, GaussLaguerre};
use pdmp_core::reach::{accessible_set, halton_points, reachable, ReachOptions};
use pdmp_core::simulate::{sample_path, Stepper};
use pdmp_core::{StateBox, StreamRng, SwitchingSystem};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn beta_invariant_law() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for lambda in [2.0, 1.0] {
        let spec = interval_beta(lambda).unwrap();
        let mut rng = StreamRng::new(42, 0);
        let path = sample_path(&spec.system, &[0.5], 0, 5e4, 0.05, &mut rng, DEFAULT_STEP).unwrap();
        let occ = continuous_occupation(&path, 5e4).unwrap();
        let marginal = occ.marginal(0, Some(0));
        let ks = ks_distance_1d(&marginal, |x| interval_beta_cdf(lambda, 0, x)).unwrap();
        pass &= ks < 0.02;
        parts.push(format!("lambda={lambda} ks={ks:.4}"));
    }
    outcome(pass, parts.join(", ") + " (< 0.02)")
}

/// Central-difference Jacobian eigenvalues (2x2, real spectrum), ascending.
fn fd_eigs(sys: &SwitchingSystem, regime: usize, p: [f64; 2]) -> [f64; 2] {
    let h = 1e-6;
    let mut j = [[0.0; 2]; 2];
    for k in 0..2 {
        let (mut a, mut b) = (p, p);
        a[k] += h;
        b[k] -= h;
        let fa = sys.field(regime).eval(&a).unwrap();
        let fb = sys.field(regime).eval(&b).unwrap();
        for m in 0..2 {
            j[m][k] = (fa[m] - fb[m]) / (2.0 * h);
        }
    }
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    [tr / 2.0 - disc, tr / 2.0 + disc]
}

fn radulescu_fixed_points() -> Outcome {
    let alpha: f64 = 3.0;
    let sys = radulescu(alpha, 1.0, 4.0).unwrap().system;
    // Newton on b^3 + b = alpha
    let mut b = alpha;
    for _ in 0..60 {
        b -= (b * b * b + b - alpha) / (3.0 * b * b + 1.0);
    }
    let r = (4.0 / 27.0 + alpha * alpha).sqrt();
    let closed = ((r + alpha) / 2.0).cbrt() - ((r - alpha) / 2.0).cbrt();
    let f = sys.field(1).eval(&[b, b]).unwrap();
    let res_b = f[0].hypot(f[1]);
    let eb = fd_eigs(&sys, 1, [b, b]);
    let (eta1, eta2) = (-3.0 + 2.0 * b / alpha, 1.0 - 2.0 * b / alpha);
    let err_b = (eb[0] - eta1).abs().max((eb[1] - eta2).abs());
    let a = (alpha + (alpha * alpha - 4.0).sqrt()) / 2.0;
    let f = sys.field(1).eval(&[a, 1.0 / a]).unwrap();
    let res_a = f[0].hypot(f[1]);
    let ea = fd_eigs(&sys, 1, [a, 1.0 / a]);
    let err_a = (ea[0] - (-1.0 - 2.0 / alpha)).abs().max((ea[1] - (-1.0 + 2.0 / alpha)).abs());
    let pass = (b - closed).abs() < 1e-10 && res_b < 1e-10 && res_a < 1e-10 && err_b < 1e-6 && err_a < 1e-6;
    outcome(
        pass,
        format!(
            "|b-closed|={:.1e} |F1(b,b)|={res_b:.1e} |F1(a,1/a)|={res_a:.1e} eig err (b,b)={err_b:.1e} (a,1/a)={err_a:.1e}",
            (b - closed).abs()
        ),
    )
}

fn least_squares_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    sxy / sxx
}

fn transience_bound() -> Outcome {
    let (alpha, l0, l1) = (3.0, 1.0, 4.0);
    let spec = radulescu_diagonal(alpha, l0, l1).unwrap();
    let c = 3.0 * 3f64.sqrt() / 8.0;
    let bound = -(l1 - (c * alpha - 1.0) * l0) / (l0 + l1) + 0.1;
    // (x, y) = (2.5, 0.5) in diagonal coordinates
    let start = [1.5, 1.0];
    let mut slopes = Vec::new();
    for seed in 0..20 {
        let mut rng = StreamRng::new(seed, 0);
        let path = sample_path(&spec.system, &start, 0, 500.0, 0.5, &mut rng, DEFAULT_STEP).unwrap();
        let dense = path.dense().unwrap();
        let (mut ts, mut ys) = (Vec::new(), Vec::new());
        for k in 0..dense.len() {
            let t = dense.time(k);
            if !dense.is_jump(k) && (50.0..=500.0).contains(&t) {
                ts.push(t);
                ys.push((2.0 * dense.position(k)[1]).ln());
            }
        }
        slopes.push(least_squares_slope(&ts, &ys));
    }
    let ok = slopes.iter().filter(|&&s| s <= bound).count();
    let worst = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        ok >= 18,
        format!("{ok}/20 slopes <= {bound:.4}; median {:.4}, max {worst:.4}", median(slopes.clone())),
    )
}

fn recurrence() -> Outcome {
    let alpha: f64 = 3.0;
    let spec = radulescu(alpha, 1.0, 0.05).unwrap();
    let a = (alpha + (alpha * alpha - 4.0).sqrt()) / 2.0;
    let target = [a, 1.0 / a];
    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = StreamRng::new(seed, 0);
        let path = sample_path(&spec.system, &[2.5, 0.5], 0, 500.0, 0.05, &mut rng, DEFAULT_STEP).unwrap();
        let dense = path.dense().unwrap();
        let hit = (0..dense.len()).any(|k| {
            let p = dense.position(k);
            (p[0] - target[0]).hypot(p[1] - target[1]) < 0.2
        });
        hits += hit as usize;
    }
    outcome(hits >= 18, format!("{hits}/20 runs entered the 0.2-ball around (a, 1/a)"))
}

fn bracket_verdicts() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for d in [2, 3] {
        let sys = torus(d).unwrap().system;
        let pts = if d == 2 {
            grid_points(sys.domain(), 5)
        } else {
            halton_points(sys.domain(), 25)
        };
        let ok = pts.iter().all(|x| {
            let w = check_condition(&sys, x, ConditionKind::Weak, 4, 1e-8).unwrap();
            let s = check_condition(&sys, x, ConditionKind::Strong, 4, 1e-8).unwrap();
            w.order_achieved == Some(0) && !s.satisfied && s.k_explored == 4
        });
        pass &= ok;
        notes.push(format!("torus d={d} {}", if ok { "ok" } else { "wrong" }));
    }
    let ex = planar_linear([[-1.0, -1.0], [1.0, -1.0]], [1.0, 0.0], 1.0, 1.0).unwrap().system;
    let ok = grid_points(ex.domain(), 5)
        .iter()
        .all(|x| check_condition(&ex, x, ConditionKind::Strong, 4, 1e-8).unwrap().order_achieved == Some(1));
    pass &= ok;
    notes.push(format!("rotation-contraction strong at k=1 {}", if ok { "ok" } else { "wrong" }));
    let eig = planar_linear([[-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0], 1.0, 1.0).unwrap().system;
    let ok = grid_points(eig.domain(), 5)
        .iter()
        .all(|x| !check_condition(&eig, x, ConditionKind::Strong, 4, 1e-8).unwrap().satisfied);
    pass &= ok;
    notes.push(format!("A=-I strong never {}", if ok { "ok" } else { "wrong" }));
    outcome(pass, notes.join(", "))
}

type Field = Box<dyn Fn(&[f64]) -> [f64; 2]>;

/// `[F, G](x) = DG(x) F(x) - DF(x) G(x)` with central differences.
fn fd_bracket(f: &dyn Fn(&[f64]) -> [f64; 2], g: &dyn Fn(&[f64]) -> [f64; 2], x: &[f64], h: f64) -> [f64; 2] {
    let (fx, gx) = (f(x), g(x));
    // step of length h along v, rescaled by |v|
    let dir = |field: &dyn Fn(&[f64]) -> [f64; 2], v: [f64; 2]| {
        let n = v[0].hypot(v[1]);
        if n == 0.0 {
            return [0.0, 0.0];
        }
        let s = h / n;
        let p = [x[0] + s * v[0], x[1] + s * v[1]];
        let m = [x[0] - s * v[0], x[1] - s * v[1]];
        let (a, b) = (field(&p), field(&m));
        [(a[0] - b[0]) / (2.0 * s), (a[1] - b[1]) / (2.0 * s)]
    };
    let dg = dir(g, fx);
    let df = dir(f, gx);
    [dg[0] - df[0], dg[1] - df[1]]
}

fn bracket_oracle() -> Outcome {
    let sys = radulescu(3.0, 1.0, 4.0).unwrap().system;
    let f0 = BracketField::from_field(sys.field(0), "F0");
    let f1 = BracketField::from_field(sys.field(1), "F1");
    let b1 = lie_bracket(&f0, &f1);
    let b2 = lie_bracket(&f0, &b1);
    let s0 = sys.clone();
    let s1 = sys.clone();
    let g0: Field = Box::new(move |x| {
        let v = s0.field(0).eval(x).unwrap();
        [v[0], v[1]]
    });
    let g1: Field = Box::new(move |x| {
        let v = s1.field(1).eval(x).unwrap();
        [v[0], v[1]]
    });
    let mut rng = StreamRng::new(6, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = [0.5 + 3.0 * rng.uniform(), 0.5 + 3.0 * rng.uniform()];
        let sym1 = b1.eval(&x).unwrap();
        let num1 = fd_bracket(&*g0, &*g1, &x, 1e-5);
        let inner = |y: &[f64]| fd_bracket(&*g0, &*g1, y, 1e-4);
        let sym2 = b2.eval(&x).unwrap();
        let num2 = fd_bracket(&*g0, &inner, &x, 1e-4);
        for (s, n) in [(sym1, num1), (sym2, num2)] {
            let err = (s[0] - n[0]).hypot(s[1] - n[1]);
            let scale = s[0].hypot(s[1]).max(1.0);
            worst = worst.max(err / scale);
        }
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} (<= 1e-6)"))
}

fn segment_check(grid: &pdmp_core::ReachGrid, from: [f64; 2], to: [f64; 2]) -> (bool, String) {
    let seg = pdmp_core::examples::Segment {
        from: from.to_vec(),
        to: to.to_vec(),
    };
    let cell = grid.cell_width(0).max(grid.cell_width(1));
    let occupied: Vec<usize> = (0..grid.cells()).filter(|&c| grid.is_occupied(c)).collect();
    let far = occupied
        .iter()
        .map(|&c| seg.distance(&grid.center(c)) / cell)
        .fold(0.0, f64::max);
    let samples = seg.sample(400);
    let covered = samples
        .iter()
        .filter(|p| grid.neighborhood(grid.cell_of(p)).iter().any(|&n| grid.is_occupied(n)))
        .count() as f64
        / samples.len() as f64;
    (
        far <= 2.0 && covered >= 0.9,
        format!("{} cells, max distance {far:.2} cells, coverage {:.1}%", occupied.len(), 100.0 * covered),
    )
}

fn accessible_sets() -> Outcome {
    let opts = ReachOptions::with_resolution(128);
    let case1 = planar_linear([[-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0], 1.0, 1.0).unwrap().system;
    let g1 = accessible_set(&case1, &halton_points(case1.domain(), 32), &opts).unwrap();
    let (p1, d1) = segment_check(&g1, [0.0, 0.0], [1.0, 0.0]);
    let rad = radulescu(3.0, 1.0, 4.0).unwrap();
    let b = rad.reference("b").unwrap();
    let g2 = accessible_set(&rad.system, &halton_points(rad.system.domain(), 32), &opts).unwrap();
    let (p2, d2) = segment_check(&g2, [b, b], [3.0, 3.0]);
    outcome(p1 && p2, format!("segment [0,a]: {d1}; diagonal [b,3]: {d2}"))
}

fn correspondence() -> Outcome {
    let spec = interval_beta(2.0).unwrap();
    let quad = GaussLaguerre::new(32).unwrap().truncated(1e-15);
    let f = |x: &[f64], _: usize| x[0];
    let h = 0.05;
    let mut late = Vec::new();
    let mut early = Vec::new();
    for seed in 0..20 {
        let mut rng = StreamRng::new(1000 + seed, 0);
        let path = sample_path(&spec.system, &[0.5], 0, 1e4, 0.05, &mut rng, h).unwrap();
        early.push(correspondence_gap(&spec.system, &path, &f, 1e2, &quad, h).unwrap().gap);
        late.push(correspondence_gap(&spec.system, &path, &f, 1e4, &quad, h).unwrap().gap);
    }
    let (me, ml) = (median(early), median(late));
    outcome(ml < 0.01 && ml < me, format!("median gap t=1e2 {me:.2e}, t=1e4 {ml:.2e} (< 0.01 and decreasing)"))
}

fn thinning() -> Outcome {
    // constant rates, sojourns in regime 0 aggregate phantom jumps
    let sys = SwitchingSystem::builder(StateBox::cube(1, 0.0, 1.0).unwrap())
        .field_exprs(&["0"])
        .unwrap()
        .field_exprs(&["0"])
        .unwrap()
        .constant_rate(0, 1, 1.0)
        .constant_rate(1, 0, 2.0)
        .lambda_bar(5.0)
        .build()
        .unwrap();
    let mut stepper = Stepper::new(&sys, DEFAULT_STEP).unwrap();
    let mut rng = StreamRng::new(9, 0);
    let (mut x, mut regime) = (vec![0.5], 0usize);
    let mut sojourns = Vec::with_capacity(100_000);
    let mut current = 0.0;
    while sojourns.len() < 100_000 {
        let before = regime;
        let u = stepper.step(&mut x, &mut regime, &mut rng).unwrap();
        if before == 0 {
            current += u;
            if regime != 0 {
                sojourns.push(current);
                current = 0.0;
            }
        }
    }
    let ks = ks_distance(&sojourns, |t| 1.0 - (-t).exp()).unwrap();

    // rate x out of regime 0, frozen flow
    let frozen = SwitchingSystem::builder(StateBox::cube(1, 0.0, 1.5).unwrap())
        .field_exprs(&["0"])
        .unwrap()
        .field_exprs(&["0"])
        .unwrap()
        .rate(0, 1, "x1")
        .unwrap()
        .constant_rate(1, 0, 1.0)
        .lambda_bar(2.0)
        .build()
        .unwrap();
    let mut stepper = Stepper::new(&frozen, DEFAULT_STEP).unwrap();
    let mut worst = 0.0f64;
    for (k, x0) in [0.25, 0.75, 1.25].into_iter().enumerate() {
        let mut rng = StreamRng::new(10, k as u64);
        let n = 20_000;
        let times: Vec<f64> = (0..n)
            .map(|_| {
                let (mut x, mut regime, mut t) = (vec![x0], 0usize, 0.0);
                while regime == 0 {
                    t += stepper.step(&mut x, &mut regime, &mut rng).unwrap();
                }
                t
            })
            .collect();
        for t in [0.5, 1.0, 2.0] {
            let emp = times.iter().filter(|&&s| s > t).count() as f64 / n as f64;
            worst = worst.max((emp - (-x0 * t).exp()).abs());
        }
    }
    outcome(
        ks < 0.01 && worst <= 0.02,
        format!("sojourn ks={ks:.4} (< 0.01), survival max error {worst:.4} (<= 0.02)"),
    )
}

fn determinism() -> Outcome {
    let spec = radulescu(3.0, 1.0, 4.0).unwrap();
    let run_path = || {
        let mut rng = StreamRng::new(77, 3);
        let p = sample_path(&spec.system, &[2.5, 0.5], 0, 50.0, 0.1, &mut rng, DEFAULT_STEP).unwrap();
        let mut out = Vec::new();
        p.dense().unwrap().write_csv(&mut out).unwrap();
        p.write_skeleton_json(&mut out).unwrap();
        out
    };
    let run_reach = || {
        let g = reachable(&spec.system, &[2.5, 0.5], &ReachOptions::with_resolution(64)).unwrap();
        let mut out = Vec::new();
        g.write_csv(&mut out).unwrap();
        g.write_pgm(&mut out).unwrap();
        out
    };
    let same_path = run_path() == run_path();
    let same_reach = run_reach() == run_reach();
    outcome(
        same_path && same_reach,
        format!("path bytes identical: {same_path}, reach bytes identical: {same_reach}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 beta invariant law", beta_invariant_law),
        ("2 radulescu fixed-point algebra", radulescu_fixed_points),
        ("3 transience bound", transience_bound),
        ("4 recurrence", recurrence),
        ("5 bracket verdicts", bracket_verdicts),
        ("6 bracket oracle equivalence", bracket_oracle),
        ("7 accessible sets", accessible_sets),
        ("8 correspondence gap", correspondence),
        ("9 thinning distribution", thinning),
        ("10 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
