//! Argument parsing, dispatch and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::{builtin_config, Budget, ExperimentConfig};
use crate::error::CliError;
use crate::exec::Rayon;
use crate::output::{sha256_hex, Outputs};
use crate::pipeline::Run;

#[derive(Debug, Parser)]
#[command(name = "homog", version, about = "Monte Carlo periodic homogenization experiments")]
pub struct Args {
    /// Experiment configuration (TOML). `example2d` falls back to its
    /// built-in configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per CPU).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; overrides the configuration (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run size; overrides the configuration (default `desk`).
    #[arg(long, global = true, value_enum)]
    pub budget: Option<Budget>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the standing assumptions on a sampling grid.
    Validate,
    /// Simulate and dump paths.
    Simulate,
    /// Estimate the invariant measure.
    Invariant,
    /// Estimate the exponential mixing rate.
    Mixing,
    /// Solve the cell problem.
    Corrector,
    /// Compute the effective covariance and drift.
    Effective,
    /// Check the central limit behaviour of the rescaled process.
    Clt,
    /// Solve the elliptic Dirichlet problem.
    Elliptic,
    /// Solve the parabolic Cauchy problem.
    Parabolic,
    /// Compare epsilon-problems with their homogenized limit.
    Study,
    /// Run the degenerate 2D example end to end.
    Example2d,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Invariant => "invariant",
            Command::Mixing => "mixing",
            Command::Corrector => "corrector",
            Command::Effective => "effective",
            Command::Clt => "clt",
            Command::Elliptic => "elliptic",
            Command::Parabolic => "parabolic",
            Command::Study => "study",
            Command::Example2d => "example2d",
        }
    }
}

fn load_config(args: &Args) -> Result<(ExperimentConfig, String), CliError> {
    match &args.config {
        Some(p) => Ok((ExperimentConfig::load(p)?, p.display().to_string())),
        None if args.command == Command::Example2d => {
            let text = builtin_config("example2d").expect("shipped configuration");
            Ok((ExperimentConfig::from_toml(text, Path::new("."))?, "builtin:example2d".into()))
        }
        None => Err(CliError::Config(format!("`{}` needs --config", args.command.name()))),
    }
}

fn dispatch(run: &mut Run, command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate => run.validate().map(|_| ()),
        Command::Simulate => run.simulate(),
        Command::Invariant => run.invariant().map(|_| ()),
        Command::Mixing => run.mixing().map(|_| ()),
        Command::Corrector => run.corrector().map(|_| ()),
        Command::Effective => run.effective().map(|_| ()),
        Command::Clt => run.clt().map(|_| ()),
        Command::Elliptic => run.elliptic(),
        Command::Parabolic => run.parabolic(),
        Command::Study => run.study(),
        Command::Example2d => run.example2d(),
    }
}

/// Runs one invocation and returns the process exit code. Every run that gets
/// as far as an output directory leaves a `manifest.json` there, including
/// failed ones.
pub fn run(args: Args) -> i32 {
    let started = Instant::now();
    let report = |e: &CliError| {
        eprintln!("homog: {} error: {e}", e.kind());
        e.exit_code()
    };
    let (cfg, config_source) = match load_config(&args) {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    let exec = match Rayon::new(args.threads) {
        Ok(x) => x,
        Err(e) => return report(&CliError::Config(format!("thread pool: {e}"))),
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let budget = args.budget.or(cfg.budget).unwrap_or_default();
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut run = match Run::new(&cfg, budget, seed, &exec, &out_dir) {
        Ok(r) => r,
        Err(e) => {
            let code = report(&e);
            if let Ok(mut out) = Outputs::new(&out_dir) {
                let _ = write_manifest(&mut out, &args, &cfg, &config_source, seed, budget, &exec, None, started, Some(&e));
            }
            return code;
        }
    };
    let result = dispatch(&mut run, args.command);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => report(e),
    };
    let info = run_info(&run);
    let manifest = write_manifest(&mut run.out, &args, &cfg, &config_source, seed, budget, &exec, Some(&info), started, result.as_ref().err());
    match manifest {
        Ok(()) => code,
        Err(e) if code == 0 => report(&e),
        Err(_) => code,
    }
}

struct RunInfo {
    coefficients: serde_json::Value,
    seeds: serde_json::Value,
    cache: serde_json::Value,
}

fn run_info(run: &Run) -> RunInfo {
    RunInfo {
        coefficients: json!({ "label": run.set.label(), "fingerprint": run.coefficient_fingerprint }),
        seeds: json!(run.stage_seeds()),
        cache: json!(run.cache_events()),
    }
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    out: &mut Outputs,
    args: &Args,
    cfg: &ExperimentConfig,
    config_source: &str,
    seed: u64,
    budget: Budget,
    exec: &Rayon,
    info: Option<&RunInfo>,
    started: Instant,
    error: Option<&CliError>,
) -> Result<(), CliError> {
    let artifacts: Vec<_> = out.artifacts().iter().filter(|a| a.path != "manifest.json").cloned().collect();
    let config_echo = serde_json::to_value(cfg).expect("serializable configuration");
    let manifest = json!({
        "tool": "homog",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": args.command.name(),
        "config_source": config_source,
        "config_sha256": sha256_hex(config_echo.to_string().as_bytes()),
        "config": config_echo,
        "global_seed": seed,
        "seed_derivation": "u64_le(sha256(\"homog/v1\" || global_seed_le || stage || salt_le)[0..8])",
        "stage_seeds": info.map(|i| i.seeds.clone()),
        "budget": budget,
        "threads": exec.threads(),
        "coefficients": info.map(|i| i.coefficients.clone()),
        "cache": info.map(|i| i.cache.clone()),
        "artifacts": artifacts,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "status": if error.is_some() { "error" } else { "ok" },
        "error": error.map(|e| json!({ "kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() })),
    });
    out.write_json("manifest.json", &manifest)
}
