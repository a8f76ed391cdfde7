//! Command-line front end: `neutral-spde-lab <command> --config path`.
//!
//! Every command writes `<command>.json` into the output directory. The
//! report embeds the resolved configuration, so feeding its `config` member
//! back in reproduces the report byte for byte.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{project_noise, KernelSpec, RunConfig};

use crate::certify::certify;
use crate::charfn::NeutralSystem;
use crate::error::{Error, Result};
use crate::picard::{fitted_order, picard_solve, resolvent_check, stepper_agreement};
use crate::simulate::{
    grid_intervals, init_history, reconstruct_field, restart_check, run_replicas, SimConfig,
    Stepper, Trajectory,
};
use crate::spectrum::system_abscissa;
use crate::stationary::{
    default_burn_in, empirical_report, monte_carlo, oracle_covariance, OracleOptions, TestVerdict,
};

/// Exit code for invalid input and failed computations.
pub const EXIT_ERROR: i32 = 2;
/// Exit code when a stationarity or validation check fails.
pub const EXIT_CHECK_FAILED: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Certify,
    Spectrum,
    Simulate,
    Variance,
    Stationarity,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Spectrum => "spectrum",
            Command::Simulate => "simulate",
            Command::Variance => "variance",
            Command::Stationarity => "stationarity",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "neutral-spde-lab", version, about = "Neutral stochastic heat equations with distributed delay")]
pub struct Args {
    pub command: Command,
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory for reports and trajectories.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Also write the field `y(t, ξ)` on `n` interior points of `(0, π)`.
    #[arg(long)]
    pub field_grid: Option<usize>,
}

/// Result of one command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    /// Pretty-printed report, as written to disk.
    pub report: String,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    tool: &'static str,
    version: &'static str,
    command: Command,
    config: &'a RunConfig,
    result: Value,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    RunConfig::from_json(&text)
}

/// Runs `command` and writes its outputs below `out`.
pub fn execute(
    command: Command,
    cfg: &RunConfig,
    out: &Path,
    field_grid: Option<usize>,
) -> Result<Outcome> {
    let sys = cfg.system.build()?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let mut files = Vec::new();
    let (result, exit_code) = match command {
        Command::Certify => {
            let cert = certify(&sys, cfg.certify.numeric, &cfg.spectrum.options()?)?;
            let code = cert.verdict.exit_code();
            (json!({"certificate": cert, "exit_code": code}), code)
        }
        Command::Spectrum => (to_value(&system_abscissa(&sys, &cfg.spectrum.options()?)?), 0),
        Command::Simulate => (simulate(&sys, cfg, out, field_grid, &mut files)?, 0),
        Command::Variance => {
            let opts = OracleOptions {
                omega_cutoff: cfg.variance.omega_cutoff,
                ..OracleOptions::new(cfg.variance.tol)
            };
            (to_value(&oracle_covariance(&sys, &opts)?), 0)
        }
        Command::Stationarity => stationarity(&sys, cfg)?,
        Command::Validate => validate(&sys, cfg)?,
    };
    let envelope = Envelope {
        tool: "neutral-spde-lab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        result,
    };
    let report = serde_json::to_string_pretty(&envelope).expect("report serializes") + "\n";
    let path = out.join(format!("{}.json", command.name()));
    fs::write(&path, &report).map_err(|e| io_error(&path, e))?;
    files.insert(0, path);
    Ok(Outcome {
        exit_code,
        report,
        files,
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

fn write_field(traj: &Trajectory, n: usize, path: &Path) -> Result<()> {
    let xi: Vec<f64> = (1..=n)
        .map(|i| i as f64 * std::f64::consts::PI / (n + 1) as f64)
        .collect();
    write_file(path, |w| {
        write!(w, "t")?;
        for x in &xi {
            write!(w, ",xi={x}")?;
        }
        writeln!(w)?;
        for (row, t) in traj.times().iter().enumerate() {
            write!(w, "{t}")?;
            for v in reconstruct_field(traj.y_row(row), &xi) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

fn simulate(
    sys: &NeutralSystem,
    cfg: &RunConfig,
    out: &Path,
    field_grid: Option<usize>,
    files: &mut Vec<PathBuf>,
) -> Result<Value> {
    let sim = cfg.sim()?;
    sim.validate(sys.horizon())?;
    if field_grid == Some(0) {
        return Err(Error::Config("--field-grid must be positive".into()));
    }
    let init = init_history(sys, &cfg.initial, sim.h)?;
    let trajs = run_replicas(sys, sim, &init)?;
    let mut names = Vec::new();
    for (p, traj) in trajs.iter().enumerate() {
        let name = if trajs.len() == 1 {
            "trajectory.csv".to_string()
        } else {
            format!("trajectory_{p}.csv")
        };
        let path = out.join(&name);
        write_file(&path, |w| traj.write_csv(w))?;
        files.push(path);
        names.push(name);
    }
    let field_file = match field_grid {
        Some(n) => {
            let path = out.join("field.csv");
            write_field(&trajs[0], n, &path)?;
            files.push(path);
            Some("field.csv")
        }
        None => None,
    };
    let terminal: Vec<&[f64]> = trajs.iter().map(|t| t.y_row(t.len() - 1)).collect();
    Ok(json!({
        "steps": sim.steps()?,
        "recorded_rows": trajs[0].len(),
        "trajectory_files": names,
        "field_file": field_file,
        "terminal_y": terminal,
    }))
}

fn stationarity(sys: &NeutralSystem, cfg: &RunConfig) -> Result<(Value, i32)> {
    let sim = cfg.sim()?;
    sim.validate(sys.horizon())?;
    let mut notes = Vec::new();
    let (burn_in, source) = match cfg.stationarity.burn_in {
        Some(b) => (b, "stationarity.burn_in".to_string()),
        None if sim.burn_in > 0.0 => (sim.burn_in, "sim.burn_in".to_string()),
        None => {
            let spec = system_abscissa(sys, &cfg.spectrum.options()?)?;
            let b = default_burn_in(spec.system_abscissa).ok_or_else(|| {
                Error::Precondition(format!(
                    "spectral abscissa {} is not negative; set stationarity.burn_in",
                    spec.system_abscissa
                ))
            })?;
            (b, format!("50/|abscissa| with abscissa {}", spec.system_abscissa))
        }
    };
    let oracle = if cfg.stationarity.oracle {
        let opts = OracleOptions {
            omega_cutoff: cfg.variance.omega_cutoff,
            ..OracleOptions::new(cfg.variance.tol)
        };
        match oracle_covariance(sys, &opts) {
            Ok(c) => Some(c.variances),
            Err(e) => {
                notes.push(format!("oracle unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    let init = init_history(sys, &cfg.initial, sim.h)?;
    let single = SimConfig {
        replicas: 1,
        ..sim.clone()
    };
    let traj = &run_replicas(sys, &single, &init)?[0];
    let report = empirical_report(traj, burn_in, sys.horizon(), oracle.as_deref())?;
    let mc = if sim.replicas > 1 {
        let mc_cfg = SimConfig {
            burn_in,
            record_every: 1,
            ..sim.clone()
        };
        Some(monte_carlo(sys, &mc_cfg, &init, oracle.as_deref())?)
    } else {
        None
    };
    let passed = report.verdict.passed()
        && report.oracle_verdict != Some(TestVerdict::Fail)
        && mc.as_ref().and_then(|m| m.oracle_verdict) != Some(TestVerdict::Fail);
    let result = json!({
        "burn_in_source": source,
        "report": report,
        "monte_carlo": mc,
        "notes": notes,
        "passed": passed,
    });
    Ok((result, if passed { 0 } else { EXIT_CHECK_FAILED }))
}

#[derive(Debug, Clone, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    value: f64,
    threshold: f64,
    detail: Value,
}

fn check(name: &'static str, value: f64, threshold: f64, ok: bool, detail: Value) -> Check {
    Check {
        name,
        passed: ok && value.is_finite(),
        value,
        threshold,
        detail,
    }
}

fn validate(sys: &NeutralSystem, cfg: &RunConfig) -> Result<(Value, i32)> {
    let v = &cfg.validate;
    let t_end = v.t_end.expect("resolved config sets validate.T");
    let scheme = cfg.sim.as_ref().map(|s| s.scheme).unwrap_or_default();
    let m = v.agreement_modes.clamp(1, sys.modes());
    let mut checks = Vec::new();

    let coarse = stepper_agreement(sys, &cfg.initial, t_end, v.h, scheme, v.picard_tol)?;
    let fine = stepper_agreement(sys, &cfg.initial, t_end, 0.5 * v.h, scheme, v.picard_tol)?;
    let worst = coarse.relative_error[..m].iter().copied().fold(0.0, f64::max);
    checks.push(check(
        "picard_vs_stepper",
        worst,
        v.agreement_tol,
        worst <= v.agreement_tol,
        to_value(&coarse),
    ));
    let ratios: Vec<f64> = (0..m)
        .map(|i| coarse.relative_error[i] / fine.relative_error[i])
        .collect();
    let off = ratios.iter().map(|r| (r - 2.0).abs()).fold(0.0, f64::max);
    checks.push(check(
        "first_order_convergence",
        off,
        0.4,
        off <= 0.4,
        json!({"error_ratios": ratios, "fine": fine}),
    ));

    let det = sys.clone().with_noise(vec![0.0; sys.modes()])?;
    let picard = picard_solve(&det, &cfg.initial, t_end, v.picard_tol, v.h)?;
    let excess = picard
        .windows
        .iter()
        .flatten()
        .map(|w| w.max_contraction - w.delta)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(check(
        "picard_contraction",
        picard.max_contraction(),
        0.5,
        excess <= 0.1 && picard.max_contraction() < 1.0,
        json!({"windows": picard.windows.iter().map(Vec::len).collect::<Vec<_>>(),
               "max_excess_over_delta": excess}),
    ));

    let sim = SimConfig::new(v.h, 0.0)
        .with_scheme(scheme)
        .with_seed(cfg.sim.as_ref().map_or(0, |s| s.seed));
    let n = grid_intervals(sys.horizon(), v.h)? as u64;
    let init = init_history(sys, &cfg.initial, v.h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut pairs = Vec::new();
    let mut restart = 0.0f64;
    for _ in 0..v.restart_pairs {
        let s = (1 + rng.next_u64() % (2 * n)) as f64 * v.h;
        let t = (1 + rng.next_u64() % (2 * n)) as f64 * v.h;
        restart = restart.max(restart_check(sys, &sim, &init, s, t)?);
        pairs.push([s, t]);
    }
    checks.push(check(
        "restart",
        restart,
        1e-12,
        restart <= 1e-12,
        json!({"pairs": pairs}),
    ));

    let stepper = Stepper::new(sys, scheme, v.h)?;
    let mut state = init.clone();
    let (mut recovery, mut scale) = (stepper.recovery_residual(&state), 1.0f64);
    let steps = (t_end / v.h).round() as u64;
    stepper.evolve(&mut state, steps, sim.seed, 0, |s| {
        recovery = recovery.max(stepper.recovery_residual(s));
        scale = scale.max(s.current().iter().fold(0.0, |a, x| a.max(x.abs())));
    })?;
    checks.push(check(
        "recovery_invariant",
        recovery,
        1e-12 * scale,
        recovery <= 1e-12 * scale,
        json!({"state_scale": scale}),
    ));

    let lambda = Complex64::new(v.lambda[0], v.lambda[1]);
    let r = sys.horizon();
    let psi = |th: f64| Complex64::new(th.cos(), (2.0 * th).sin());
    let residuals = v
        .resolvent_grids
        .iter()
        .map(|&g| {
            let h = r / g as f64;
            let psi1: Vec<Complex64> = (0..=g).map(|i| psi(-r + i as f64 * h)).collect();
            resolvent_check(sys, 1, lambda, Complex64::new(1.0, 0.0), &psi1)
        })
        .collect::<Result<Vec<_>>>()?;
    let order = if residuals.len() >= 2 {
        fitted_order(
            &v.resolvent_grids,
            &residuals.iter().map(|x| x.residual).collect::<Vec<_>>(),
        )
    } else {
        f64::NAN
    };
    checks.push(check(
        "resolvent_order",
        order,
        v.min_order,
        order >= v.min_order,
        to_value(&residuals),
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok((
        json!({"scheme": scheme, "checks": checks, "passed": passed}),
        if passed { 0 } else { EXIT_CHECK_FAILED },
    ))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = || -> Result<Outcome> {
        let cfg = load_config(&args.config)?;
        execute(args.command, &cfg, &args.out, args.field_grid)
    };
    let outcome = match args.threads {
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("--threads: {e}")))
            .and_then(|pool| pool.install(run)),
        None => run(),
    };
    match outcome {
        Ok(o) => {
            print!("{}", o.report);
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
