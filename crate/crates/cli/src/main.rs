//! `pdmp`: configuration-driven front end for simulating and analysing
//! switching processes.
//!
//! Exit codes: 0 success, 1 rejected input (config, model validation, failed
//! `verify`), 2 runtime failure.

mod commands;
mod config;
mod failure;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Run, VerifyArgs};
use crate::config::RunConfig;
use crate::failure::Failure;
use crate::output::{write_error, OutputDir};

#[derive(Parser)]
#[command(name = "pdmp", version, about = "Simulate and analyse switching piecewise deterministic Markov processes")]
struct Cli {
    /// Worker threads; falls back to PDMP_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file.
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model and write validation.json.
    Validate(ConfigArgs),
    /// Sample paths and write one CSV and one skeleton JSON per replica.
    Simulate(ConfigArgs),
    /// Occupation measures, histograms and the correspondence gap.
    Occupation(ConfigArgs),
    /// Weak and strong bracket verdicts on a grid.
    Brackets(ConfigArgs),
    /// Reachable, accessible and (with burn_in) omega-limit grids.
    Reach(ConfigArgs),
    /// Check a catalog example against its reference values.
    Verify {
        /// torus, planar_linear, interval_beta, radulescu or radulescu_diagonal.
        example: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lambda0: Option<f64>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write verify.json and manifest.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("PDMP_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::invalid(format!("PDMP_THREADS must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::invalid("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(e.to_string()))?;
    }
    Ok(())
}

type Driver = fn(&Run, &mut OutputDir) -> Result<(), Failure>;

fn run_config(name: &str, args: &ConfigArgs, driver: Driver) -> Result<(), (Option<PathBuf>, Failure)> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| (None, Failure::invalid(format!("cannot read {}: {e}", args.config.display()))))?;
    let cfg = RunConfig::parse(&text).map_err(|e| (args.out.clone(), e.into()))?;
    let dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let fail = |f: Failure| (Some(dir.clone()), f);
    let mut out = OutputDir::create(&dir).map_err(fail)?;
    let run = Run { cfg: &cfg, text: &text };
    driver(&run, &mut out).map_err(fail)?;
    commands::finish(&run, out, name).map_err(fail)
}

fn validate_driver(run: &Run, out: &mut OutputDir) -> Result<(), Failure> {
    if commands::validate(run, out)? {
        Ok(())
    } else {
        Err(Failure::invalid("model failed validation; see validation.json"))
    }
}

fn run_verify(example: &str, args: &VerifyArgs, out: Option<&Path>) -> Result<(), (Option<PathBuf>, Failure)> {
    let fail = |f: Failure| (out.map(Path::to_path_buf), f);
    let (report, pass) = commands::verify(example, args).map_err(fail)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(dir) = out {
        let mut o = OutputDir::create(dir).map_err(fail)?;
        o.write_json("verify.json", &report).map_err(fail)?;
        o.finish(commands::verify_manifest(example, args)).map_err(fail)?;
    }
    if pass {
        Ok(())
    } else {
        Err(fail(Failure::invalid(format!("{example}: verification failed"))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(f) = init_threads(cli.threads) {
        eprintln!("pdmp: {f}");
        return ExitCode::from(f.exit_code());
    }
    let (name, result) = match &cli.command {
        Command::Validate(a) => ("validate", run_config("validate", a, validate_driver)),
        Command::Simulate(a) => ("simulate", run_config("simulate", a, commands::simulate)),
        Command::Occupation(a) => ("occupation", run_config("occupation", a, commands::occupation)),
        Command::Brackets(a) => ("brackets", run_config("brackets", a, commands::brackets)),
        Command::Reach(a) => ("reach", run_config("reach", a, commands::reach)),
        Command::Verify {
            example,
            lambda,
            alpha,
            lambda0,
            lambda1,
            d,
            seed,
            out,
        } => {
            let args = VerifyArgs {
                lambda: *lambda,
                alpha: *alpha,
                lambda0: *lambda0,
                lambda1: *lambda1,
                d: *d,
                seed: *seed,
            };
            ("verify", run_verify(example, &args, out.as_deref()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((dir, f)) => {
            eprintln!("pdmp {name}: {f}");
            if let Some(dir) = dir {
                write_error(&dir, name, &f);
            }
            ExitCode::from(f.exit_code())
        }
    }
}
