//! Subcommand drivers over the core library.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;

use pdmp_core::brackets::{scan_region, ConditionKind};
use pdmp_core::examples::{from_params, interval_beta_cdf};
use pdmp_core::flow::DEFAULT_STEP;
use pdmp_core::measure::{
    continuous_occupation, correspondence_gap, default_bins, discrete_occupation, ks_distance_1d, GaussLaguerre,
    Histogram,
};
use pdmp_core::reach::{accessible_set, halton_points, omega_limit, reachable, ReachOptions};
use pdmp_core::rng::RNG_SCHEME;
use pdmp_core::simulate::{ensemble, sample_embedded, sample_path};
use pdmp_core::{parse, BracketReport, EmpiricalMeasure, ExampleSpec, ReachGrid, StateBox, StreamRng, SwitchingSystem};

use crate::config::{ModelConfig, ModelSource, RunConfig};
use crate::failure::Failure;
use crate::output::{sha256_hex, Manifest, OutputDir};

/// Cap on bracket grid points over all axes.
pub const MAX_BRACKET_POINTS: usize = 1_000_000;

/// Horizon of the Beta-law check in `verify interval_beta`.
pub const VERIFY_BETA_HORIZON: f64 = 5e4;
/// Output spacing of the Beta-law check.
pub const VERIFY_BETA_DT: f64 = 0.05;
/// KS threshold of the Beta-law check.
pub const VERIFY_BETA_KS: f64 = 0.02;

pub fn build_system(model: &ModelConfig) -> Result<SwitchingSystem, Failure> {
    match &model.source {
        ModelSource::Example { name, params } => {
            let spec = from_params(name, params)?;
            Ok(match model.lambda_bar {
                Some(l) => spec.system.with_lambda_bar(l)?,
                None => spec.system,
            })
        }
        ModelSource::Inline {
            lower,
            upper,
            wrap,
            fields,
            rates,
        } => {
            let domain = StateBox::with_wrap(lower.clone(), upper.clone(), wrap.clone())?;
            let mut b = SwitchingSystem::builder(domain);
            for comps in fields {
                let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
                b = b.field_exprs(&refs)?;
            }
            for (i, j, text) in rates {
                b = b.rate(*i, *j, text)?;
            }
            b = b.lambda_bar(model.lambda_bar.expect("inline models carry lambda_bar"));
            if let Some(m) = model.clamp_margin {
                b = b.clamp_margin(m);
            }
            Ok(b.build()?)
        }
    }
}

fn require_valid(sys: &SwitchingSystem) -> Result<(), Failure> {
    let report = sys.validate();
    if report.is_valid() {
        return Ok(());
    }
    let details: Vec<String> = report.violations.iter().map(|v| v.detail.clone()).collect();
    Err(Failure::invalid(format!("model failed validation: {}", details.join("; "))))
}

fn start_point(cfg: &RunConfig, sys: &SwitchingSystem) -> Result<(Vec<f64>, usize), Failure> {
    let d = sys.dim();
    let dom = sys.domain();
    let x0 = match &cfg.simulation.x0 {
        Some(x) => {
            if x.len() != d {
                return Err(Failure::invalid(format!("x0 needs {d} numbers, got {}", x.len())));
            }
            if !dom.contains(x, 0.0) {
                return Err(Failure::invalid(format!("x0 = {x:?} lies outside the box")));
            }
            x.clone()
        }
        None => (0..d).map(|k| 0.5 * (dom.lower()[k] + dom.upper()[k])).collect(),
    };
    let i0 = cfg.simulation.regime0;
    if i0 >= sys.regimes() {
        return Err(Failure::invalid(format!(
            "regime0 = {i0} but the model has {} regimes",
            sys.regimes()
        )));
    }
    Ok((x0, i0))
}

fn replica_name(prefix: &str, k: usize, n: usize, ext: &str) -> String {
    let width = (n.saturating_sub(1)).to_string().len().max(3);
    format!("{prefix}_{k:0width$}.{ext}")
}

fn manifest(command: &str, cfg_text: Option<&str>, seed: Option<u64>, arguments: serde_json::Value) -> Manifest {
    Manifest {
        tool: "pdmp",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        rng_scheme: RNG_SCHEME,
        seed,
        config_sha256: cfg_text.map(|t| sha256_hex(t.as_bytes())),
        config: cfg_text.map(str::to_string),
        arguments,
        outputs: Vec::new(),
    }
}

/// A parsed config together with its exact source text.
pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub text: &'a str,
}

impl Run<'_> {
    fn manifest(&self, command: &str) -> Manifest {
        manifest(command, Some(self.text), Some(self.cfg.simulation.seed), json!({}))
    }
}

#[derive(Serialize)]
struct ValidationOutput<'a> {
    valid: bool,
    dim: usize,
    regimes: usize,
    report: &'a pdmp_core::system::ValidationReport,
}

/// Returns whether the model is valid; the report is written either way.
pub fn validate(run: &Run, out: &mut OutputDir) -> Result<bool, Failure> {
    let sys = build_system(&run.cfg.model)?;
    let report = sys.validate();
    out.write_json(
        "validation.json",
        &ValidationOutput {
            valid: report.is_valid(),
            dim: sys.dim(),
            regimes: sys.regimes(),
            report: &report,
        },
    )?;
    Ok(report.is_valid())
}

pub fn finish(run: &Run, out: OutputDir, command: &str) -> Result<(), Failure> {
    out.finish(run.manifest(command))
}

#[derive(Serialize)]
struct ReplicaSummary {
    replica: usize,
    stream: u64,
    horizon: f64,
    jumps: usize,
    true_switches: usize,
    clamps: usize,
}

fn sample_replicas(
    cfg: &RunConfig,
    sys: &SwitchingSystem,
    x0: &[f64],
    i0: usize,
) -> Result<Vec<pdmp_core::HybridPath>, Failure> {
    let s = &cfg.simulation;
    let h = cfg.analysis.h;
    Ok(ensemble(s.replicas, s.seed, |_, rng| match s.n_steps {
        Some(n) => sample_embedded(sys, x0, i0, n, rng, h),
        None => sample_path(sys, x0, i0, s.horizon, s.output_dt, rng, h),
    })?)
}

pub fn simulate(run: &Run, out: &mut OutputDir) -> Result<(), Failure> {
    let cfg = run.cfg;
    let sys = build_system(&cfg.model)?;
    require_valid(&sys)?;
    let (x0, i0) = start_point(cfg, &sys)?;
    let paths = sample_replicas(cfg, &sys, &x0, i0)?;
    let n = paths.len();
    let mut summary = Vec::with_capacity(n);
    for (k, path) in paths.iter().enumerate() {
        let rows = path.dense().unwrap_or(path.skeleton());
        out.write_with(&replica_name("path", k, n, "csv"), |buf| rows.write_csv(buf))?;
        out.write_with(&replica_name("skeleton", k, n, "json"), |buf| {
            path.write_skeleton_json(&mut *buf)?;
            buf.push(b'\n');
            Ok(())
        })?;
        let sk = path.skeleton();
        summary.push(ReplicaSummary {
            replica: k,
            stream: path.stream(),
            horizon: path.horizon(),
            jumps: path.jumps(),
            true_switches: (0..sk.len()).filter(|&r| sk.is_true_switch(r)).count(),
            clamps: path.clamps(),
        });
    }
    out.write_json("simulate.json", &summary)
}

fn write_measure(
    out: &mut OutputDir,
    stem: &str,
    k: usize,
    n: usize,
    m: &EmpiricalMeasure,
    sys: &SwitchingSystem,
    bins: Option<usize>,
) -> Result<(), Failure> {
    out.write_with(&replica_name(&format!("occupation_{stem}"), k, n, "csv"), |buf| m.write_csv(buf))?;
    if let Some(b) = bins {
        let hist = Histogram::new(m, sys.domain(), sys.regimes(), b)?;
        out.write_with(&replica_name(&format!("histogram_{stem}"), k, n, "csv"), |buf| hist.write_csv(buf))?;
    }
    Ok(())
}

pub fn occupation(run: &Run, out: &mut OutputDir) -> Result<(), Failure> {
    let cfg = run.cfg;
    let a = &cfg.analysis;
    let sys = build_system(&cfg.model)?;
    require_valid(&sys)?;
    let (x0, i0) = start_point(cfg, &sys)?;
    let bins = match a.bins {
        Some(b) if sys.dim() > 3 => {
            return Err(Failure::invalid(format!("bins = {b} but histograms need dimension at most 3")))
        }
        Some(b) => Some(b),
        None => default_bins(sys.dim()),
    };
    let observable = parse(&a.observable, sys.dim()).map_err(|e| Failure::invalid(format!("observable: {e}")))?;
    let compiled = observable.compile();
    let f = |x: &[f64], _: usize| compiled.eval(x).unwrap_or(f64::NAN);
    let quad = GaussLaguerre::new(a.quadrature_order)?;
    let paths = sample_replicas(cfg, &sys, &x0, i0)?;
    let n = paths.len();
    let mut gaps = Vec::new();
    for (k, path) in paths.iter().enumerate() {
        let disc = discrete_occupation(path, path.jumps())?;
        write_measure(out, "discrete", k, n, &disc, &sys, bins)?;
        if path.dense().is_some() {
            let cont = continuous_occupation(path, path.horizon())?;
            write_measure(out, "continuous", k, n, &cont, &sys, bins)?;
            gaps.push(correspondence_gap(&sys, path, &f, path.horizon(), &quad, a.h)?);
        }
    }
    if cfg.simulation.n_steps.is_none() {
        out.write_json(
            "gap.json",
            &json!({
                "observable": a.observable,
                "quadrature_order": a.quadrature_order,
                "h": a.h,
                "replicas": gaps,
            }),
        )?;
    }
    Ok(())
}

fn bracket_row(buf: &mut Vec<u8>, w: &BracketReport, s: &BracketReport) -> std::io::Result<()> {
    use std::io::Write;
    for v in &w.point {
        write!(buf, "{v},")?;
    }
    let order = |r: &BracketReport| r.order_achieved.map(|k| k.to_string()).unwrap_or_default();
    let rank = |r: &BracketReport| r.ranks.last().copied().unwrap_or(0);
    writeln!(
        buf,
        "{},{},{},{},{},{},{}",
        w.satisfied,
        order(w),
        rank(w),
        s.satisfied,
        order(s),
        rank(s),
        w.low_confidence || s.low_confidence
    )
}

pub fn brackets(run: &Run, out: &mut OutputDir) -> Result<(), Failure> {
    use std::io::Write;
    let cfg = run.cfg;
    let a = &cfg.analysis;
    let sys = build_system(&cfg.model)?;
    require_valid(&sys)?;
    let total = (a.grid_points as f64).powi(sys.dim() as i32);
    if total > MAX_BRACKET_POINTS as f64 {
        return Err(Failure::invalid(format!(
            "grid_points^dim = {total} exceeds {MAX_BRACKET_POINTS} points"
        )));
    }
    let weak = scan_region(&sys, ConditionKind::Weak, a.k_max, a.rank_tol, a.grid_points)?;
    let strong = scan_region(&sys, ConditionKind::Strong, a.k_max, a.rank_tol, a.grid_points)?;
    out.write_with("brackets.csv", |buf| {
        let mut header: Vec<String> = (1..=sys.dim()).map(|k| format!("x{k}")).collect();
        header.extend(
            ["weak", "weak_order", "weak_rank", "strong", "strong_order", "strong_rank", "low_confidence"]
                .map(String::from),
        );
        writeln!(buf, "{}", header.join(","))?;
        for (w, s) in weak.iter().zip(&strong) {
            bracket_row(buf, w, s)?;
        }
        Ok(())
    })?;
    out.write_json("brackets.json", &json!({ "weak": weak, "strong": strong }))
}

#[derive(Serialize)]
struct GridSummary {
    name: &'static str,
    occupied: usize,
    cells: usize,
    resolution: usize,
    tau: f64,
    iterations: usize,
    converged: bool,
}

fn write_grid(out: &mut OutputDir, name: &'static str, g: &ReachGrid) -> Result<GridSummary, Failure> {
    out.write_with(&format!("{name}.csv"), |buf| g.write_csv(buf))?;
    if g.dim() <= 2 {
        let mut buf = Vec::new();
        g.write_pgm(&mut buf)?;
        out.write_bytes(&format!("{name}.pgm"), &buf)?;
    }
    Ok(GridSummary {
        name,
        occupied: g.count(),
        cells: g.cells(),
        resolution: g.resolution(),
        tau: g.tau(),
        iterations: g.iterations(),
        converged: g.converged(),
    })
}

pub fn reach(run: &Run, out: &mut OutputDir) -> Result<(), Failure> {
    let cfg = run.cfg;
    let a = &cfg.analysis;
    let sys = build_system(&cfg.model)?;
    require_valid(&sys)?;
    let (x0, _) = start_point(cfg, &sys)?;
    let opts = ReachOptions {
        resolution: a.resolution,
        tau: a.tau,
        max_iters: a.max_iters,
        h: a.h,
        dilation: a.dilation,
    };
    let mut summary = Vec::new();
    let r = reachable(&sys, &x0, &opts)?;
    summary.push(write_grid(out, "reachable", &r)?);
    let g = accessible_set(&sys, &halton_points(sys.domain(), a.starts), &opts)?;
    summary.push(write_grid(out, "accessible", &g)?);
    if let Some(burn_in) = a.burn_in {
        let w = omega_limit(&sys, &x0, burn_in, &opts)?;
        summary.push(write_grid(out, "omega", &w)?);
    }
    out.write_json("reach.json", &json!({ "x0": x0, "options": opts, "grids": summary }))
}

/// Flags accepted by `verify`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyArgs {
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda0: Option<f64>,
    pub lambda1: Option<f64>,
    pub d: Option<usize>,
    pub seed: Option<u64>,
}

impl VerifyArgs {
    fn params(&self) -> BTreeMap<String, String> {
        let mut p = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.insert(k.to_string(), v);
            }
        };
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("lambda0", self.lambda0.map(|v| v.to_string()));
        put("lambda1", self.lambda1.map(|v| v.to_string()));
        put("d", self.d.map(|v| v.to_string()));
        p
    }
}

fn beta_ks(spec: &ExampleSpec, lambda: f64, seed: u64) -> Result<f64, Failure> {
    let mut rng = StreamRng::new(seed, 0);
    let path = sample_path(&spec.system, &[0.5], 0, VERIFY_BETA_HORIZON, VERIFY_BETA_DT, &mut rng, DEFAULT_STEP)?;
    let occ = continuous_occupation(&path, VERIFY_BETA_HORIZON)?;
    Ok(ks_distance_1d(&occ.marginal(0, Some(0)), |x| interval_beta_cdf(lambda, 0, x))?)
}

/// Reference checks of one example plus, for `interval_beta`, the Beta-law
/// KS test. Returns the JSON report and its verdict.
pub fn verify(example: &str, args: &VerifyArgs) -> Result<(serde_json::Value, bool), Failure> {
    let params = args.params();
    let spec = from_params(example, &params)?;
    require_valid(&spec.system)?;
    let checks = spec.verify();
    let mut pass = checks.iter().all(|c| c.pass);
    let mut report = json!({
        "example": example,
        "params": params,
        "checks": checks,
    });
    if example == "interval_beta" {
        let seed = args
            .seed
            .ok_or_else(|| Failure::invalid("verify interval_beta needs --seed"))?;
        let lambda = args.lambda.unwrap_or(2.0);
        let ks = beta_ks(&spec, lambda, seed)?;
        pass &= ks < VERIFY_BETA_KS;
        report["seed"] = json!(seed);
        report["horizon"] = json!(VERIFY_BETA_HORIZON);
        report["ks"] = json!(ks);
        report["ks_threshold"] = json!(VERIFY_BETA_KS);
    }
    report["pass"] = json!(pass);
    Ok((report, pass))
}

pub fn verify_manifest(example: &str, args: &VerifyArgs) -> Manifest {
    manifest(
        "verify",
        None,
        args.seed,
        json!({ "example": example, "flags": args }),
    )
}
