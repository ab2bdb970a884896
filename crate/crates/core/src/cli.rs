//! The `msb` command line.
//!
//! ```text
//! msb <subcommand> --config <path> --out <dir> [--epsilon F] [--tol F] [--seed U64] [--threads N]
//! ```
//!
//! Exit codes: 0 success, 2 validation error, 3 non-convergence, 4 capacity
//! error. Every run that gets as far as an output directory leaves a
//! `manifest.json` there.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barycenter::compute_barycenter;
use crate::error::{MsbError, Result};
use crate::exact::{exact_barycenter, exact_mot, LpSolveReport, LpStatus};
use crate::experiments::{
    barycenter_rate_experiment, concentration_suite, cost_rate_experiment, gamma_experiment,
    stability_experiment, ExperimentConfig, Observable, RateResult,
};
use crate::fmt_float;
use crate::measures::{DiscreteMeasure, Problem, RawMeasure};
use crate::solver::{sinkhorn_solve_with, Solution, SolverOptions};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "msb", version, about = "Entropic multimarginal barycenters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Solve the entropic problem; writes solution.json, potentials.csv.
    Solve(RunArgs),
    /// Solve and push forward; adds barycenter.json, barycenter.csv.
    Barycenter(RunArgs),
    /// Unregularized LP; writes exact.json, coupling.csv, exact_barycenter.csv.
    Exact(RunArgs),
    /// Entropic cost MSE rate; writes rate.csv, summary.csv, slope.csv, result.json.
    RateCost(RunArgs),
    /// Barycenter W_p rate; same files as rate-cost.
    RateBary(RunArgs),
    /// Test-function concentration; writes {rate,summary,quantiles}_{barycenter,coupling}.csv, result.json.
    Concentration(RunArgs),
    /// Vanishing regularization; writes gamma.csv, result.json.
    Gamma(RunArgs),
    /// Perturbation stability; writes stability.csv, result.json.
    Stability(RunArgs),
    /// Check a config; writes validation.json.
    Validate(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `output` field.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Barycenter(_) => "barycenter",
            Command::Exact(_) => "exact",
            Command::RateCost(_) => "rate-cost",
            Command::RateBary(_) => "rate-bary",
            Command::Concentration(_) => "concentration",
            Command::Gamma(_) => "gamma",
            Command::Stability(_) => "stability",
            Command::Validate(_) => "validate",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Solve(a)
            | Command::Barycenter(a)
            | Command::Exact(a)
            | Command::RateCost(a)
            | Command::RateBary(a)
            | Command::Concentration(a)
            | Command::Gamma(a)
            | Command::Stability(a)
            | Command::Validate(a) => a,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Config of the single-instance subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub marginals: Vec<RawMeasure>,
    pub alpha: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Merge coincident barycenter atoms.
    #[serde(default = "default_true")]
    pub consolidate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl ProblemConfig {
    pub fn problem(&self) -> Result<Problem> {
        let marginals = self
            .marginals
            .iter()
            .cloned()
            .map(DiscreteMeasure::try_from)
            .collect::<Result<Vec<_>>>()?;
        Problem::new(marginals, self.alpha.clone(), self.epsilon)
    }
}

/// Either config schema, told apart by `marginals` versus `populations`.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyConfig {
    Problem(ProblemConfig),
    Experiment(ExperimentConfig),
}

impl AnyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("populations").is_some() {
            let cfg: ExperimentConfig = serde_json::from_value(value)?;
            Ok(AnyConfig::Experiment(cfg))
        } else if value.get("marginals").is_some() {
            let cfg: ProblemConfig = serde_json::from_value(value)?;
            Ok(AnyConfig::Problem(cfg))
        } else {
            Err(MsbError::validation(
                "config must have either a `marginals` or a `populations` field",
            ))
        }
    }

    fn apply_overrides(&mut self, args: &RunArgs) {
        match self {
            AnyConfig::Problem(c) => {
                if let Some(e) = args.epsilon {
                    c.epsilon = e;
                }
                if let Some(t) = args.tol {
                    c.solver.tol = t;
                }
            }
            AnyConfig::Experiment(c) => {
                if let Some(e) = args.epsilon {
                    c.epsilon = e;
                }
                if let Some(t) = args.tol {
                    c.solver.tol = t;
                }
                if let Some(s) = args.seed {
                    c.seed = s;
                }
            }
        }
    }

    fn output(&self) -> Option<&str> {
        match self {
            AnyConfig::Problem(c) => c.output.as_deref(),
            AnyConfig::Experiment(c) => c.output.as_deref(),
        }
    }

    fn to_value(&self) -> serde_json::Value {
        match self {
            AnyConfig::Problem(c) => serde_json::to_value(c),
            AnyConfig::Experiment(c) => serde_json::to_value(c),
        }
        .unwrap_or(serde_json::Value::Null)
    }

    fn seed(&self) -> Option<u64> {
        match self {
            AnyConfig::Problem(_) => None,
            AnyConfig::Experiment(c) => Some(c.seed),
        }
    }

    /// The instance and solver options for the single-instance commands;
    /// experiment configs contribute their population problem.
    fn instance(&self) -> Result<(Problem, SolverOptions, bool)> {
        match self {
            AnyConfig::Problem(c) => Ok((c.problem()?, c.solver, c.consolidate)),
            AnyConfig::Experiment(c) => {
                c.validate()?;
                Ok((c.population_problem()?, c.solver, true))
            }
        }
    }

    fn experiment(&self, command: &str) -> Result<&ExperimentConfig> {
        match self {
            AnyConfig::Experiment(c) => {
                c.validate()?;
                Ok(c)
            }
            AnyConfig::Problem(_) => Err(MsbError::validation(format!(
                "`{command}` needs an experiment config with `populations`"
            ))),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    artifact_version: &'static str,
    subcommand: &'a str,
    config_path: String,
    config_sha256: Option<String>,
    effective_config: serde_json::Value,
    seed: Option<u64>,
    threads: Option<usize>,
    started_unix_seconds: u64,
    wall_time_seconds: f64,
    exit_code: i32,
    error: Option<String>,
    files: &'a [String],
}

/// Output directory plus the files written into it so far.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn create(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| MsbError::io(dir.display().to_string(), e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let io_err = |e| MsbError::io(path.display().to_string(), e);
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_str(&mut self, name: &str, text: &str) -> Result<()> {
        self.write(name, |w| {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")
        })
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_str(name, &text)
    }

    fn write_rate(&mut self, suffix: &str, rate: &RateResult) -> Result<()> {
        self.write(&format!("rate{suffix}.csv"), |w| rate.write_rate_csv(w))?;
        self.write(&format!("summary{suffix}.csv"), |w| rate.write_summary_csv(w))?;
        self.write(&format!("slope{suffix}.csv"), |w| rate.write_slope_csv(w))
    }
}

fn solve_instance(art: &mut Artifacts, problem: &Problem, opts: &SolverOptions) -> Result<Solution> {
    let sol = sinkhorn_solve_with(problem, opts, None)?;
    art.write_str("solution.json", &sol.to_json()?)?;
    art.write("potentials.csv", |w| {
        writeln!(w, "marginal,index,potential")?;
        for (j, &n) in problem.sizes().iter().enumerate() {
            for i in 0..n {
                let v = sol.potential_at(j, i).unwrap_or(f64::NAN);
                writeln!(w, "{j},{i},{}", fmt_float(v))?;
            }
        }
        Ok(())
    })?;
    Ok(sol)
}

fn require_converged(sol: &Solution) -> Result<()> {
    if sol.converged {
        Ok(())
    } else {
        Err(MsbError::NotConverged(format!(
            "residual {:e} after {} sweeps (tol {:e})",
            sol.marginal_residual, sol.iterations, sol.tol
        )))
    }
}

fn write_measure_csv<W: Write>(w: &mut W, mu: &DiscreteMeasure) -> std::io::Result<()> {
    let header: Vec<String> = (1..=mu.dim()).map(|c| format!("x_{c}")).collect();
    writeln!(w, "{},weight", header.join(","))?;
    for (x, &p) in mu.points().iter().zip(mu.weights()) {
        let coords: Vec<String> = x.iter().map(|&v| fmt_float(v)).collect();
        writeln!(w, "{},{}", coords.join(","), fmt_float(p))?;
    }
    Ok(())
}

fn dispatch(command: &Command, config: &AnyConfig, art: &mut Artifacts) -> Result<()> {
    let name = command.name();
    match command {
        Command::Solve(_) => {
            let (problem, opts, _) = config.instance()?;
            let sol = solve_instance(art, &problem, &opts)?;
            require_converged(&sol)
        }
        Command::Barycenter(_) => {
            let (problem, opts, consolidate) = config.instance()?;
            let sol = solve_instance(art, &problem, &opts)?;
            require_converged(&sol)?;
            let bary = compute_barycenter(&sol, consolidate)?;
            art.write_str("barycenter.json", &bary.to_json()?)?;
            art.write("barycenter.csv", |w| write_measure_csv(w, bary.measure()))
        }
        Command::Exact(_) => {
            let (problem, _, _) = config.instance()?;
            let report = match exact_mot(&problem) {
                Ok(r) => r,
                Err(e @ MsbError::Capacity { .. }) => {
                    art.write_str("exact.json", &LpSolveReport::cap_exceeded(problem.sizes()).to_json()?)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            art.write_str("exact.json", &report.to_json()?)?;
            if report.status != LpStatus::Optimal {
                return Err(MsbError::validation("multimarginal LP is infeasible"));
            }
            art.write("coupling.csv", |w| report.write_coupling_csv(w))?;
            let bary = exact_barycenter(&problem, &report)?;
            art.write("exact_barycenter.csv", |w| write_measure_csv(w, &bary))
        }
        Command::RateCost(_) => {
            let cfg = config.experiment(name)?;
            let rate = cost_rate_experiment(cfg)?;
            art.write_rate("", &rate)?;
            art.write_json("result.json", &rate)?;
            rate.check_exclusions()
        }
        Command::RateBary(_) => {
            let cfg = config.experiment(name)?;
            let res = barycenter_rate_experiment(cfg, cfg.p)?;
            art.write_rate("", &res.rate)?;
            art.write_json("result.json", &res)?;
            res.rate.check_exclusions()
        }
        Command::Concentration(_) => {
            let cfg = config.experiment(name)?;
            let observables = [
                Observable::Barycenter {
                    h: cfg.test_function.clone(),
                },
                Observable::Coupling {
                    g: cfg.coupling_function.clone(),
                },
            ];
            let results = concentration_suite(cfg, &observables)?;
            for r in &results {
                let suffix = format!("_{}", r.observable.name());
                art.write_rate(&suffix, &r.rate)?;
                art.write(&format!("quantiles{suffix}.csv"), |w| r.write_quantile_csv(w))?;
            }
            art.write_json("result.json", &results)?;
            results.iter().try_for_each(|r| r.rate.check_exclusions())
        }
        Command::Gamma(_) => {
            let cfg = config.experiment(name)?;
            let res = gamma_experiment(cfg, &cfg.epsilon_grid)?;
            art.write("gamma.csv", |w| res.write_csv(w))?;
            art.write_json("result.json", &res)?;
            if !res.passed() {
                eprintln!("msb gamma: sandwich or monotonicity check failed, see result.json");
            }
            Ok(())
        }
        Command::Stability(_) => {
            let cfg = config.experiment(name)?;
            let res = stability_experiment(cfg, &cfg.perturbations)?;
            art.write("stability.csv", |w| res.write_csv(w))?;
            art.write_json("result.json", &res)?;
            if !res.passed() {
                eprintln!("msb stability: trend check failed, see result.json");
            }
            Ok(())
        }
        Command::Validate(_) => {
            let (kind, hash) = match config {
                AnyConfig::Problem(c) => ("problem", c.problem()?.content_hash()),
                AnyConfig::Experiment(c) => {
                    c.validate()?;
                    ("experiment", c.population_problem()?.content_hash())
                }
            };
            art.write_json(
                "validation.json",
                &serde_json::json!({ "kind": kind, "valid": true, "problem_hash": hash }),
            )
        }
    }
}

/// Runs one parsed command and returns the process exit code.
pub fn run(command: &Command) -> i32 {
    let start = Instant::now();
    let started_unix_seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let args = command.args();
    let config_path = args.config.display().to_string();

    let bytes = std::fs::read(&args.config).map_err(|e| MsbError::io(config_path.clone(), e));
    let config_sha256 = bytes.as_ref().ok().map(|b| hex::encode(Sha256::digest(b)));
    let config = bytes.and_then(|b| {
        let text = String::from_utf8(b).map_err(|_| MsbError::validation("config is not UTF-8"))?;
        let mut cfg = AnyConfig::parse(&text)?;
        cfg.apply_overrides(args);
        Ok(cfg)
    });

    let out_dir = args
        .out
        .clone()
        .or_else(|| config.as_ref().ok().and_then(|c| c.output().map(PathBuf::from)));
    let Some(out_dir) = out_dir else {
        let err = config
            .err()
            .unwrap_or_else(|| MsbError::validation("no output directory: pass --out or set `output`"));
        return report_error(&err);
    };
    let mut art = match Artifacts::create(out_dir) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };

    let outcome = config.as_ref().map_err(clone_error).and_then(|cfg| match args.threads {
        Some(0) => Err(MsbError::validation("--threads must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| MsbError::validation(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(command, cfg, &mut art))),
        None => dispatch(command, cfg, &mut art),
    });
    let exit_code = outcome.as_ref().map_or_else(MsbError::exit_code, |_| 0);

    let manifest = Manifest {
        artifact: "msb",
        artifact_version: ARTIFACT_VERSION,
        subcommand: command.name(),
        config_path,
        config_sha256,
        effective_config: config.as_ref().map_or(serde_json::Value::Null, AnyConfig::to_value),
        seed: config.as_ref().ok().and_then(AnyConfig::seed),
        threads: args.threads,
        started_unix_seconds,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        exit_code,
        error: outcome.as_ref().err().map(ToString::to_string),
        files: &art.files,
    };
    if let Err(e) = write_manifest(&art.dir, &manifest) {
        return report_error(&e);
    }
    match outcome {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest<'_>) -> Result<()> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| MsbError::io(path.display().to_string(), e))
}

/// Errors are not `Clone`; the copy keeps variant and message.
fn clone_error(e: &MsbError) -> MsbError {
    match e {
        MsbError::Capacity { what, needed, cap } => MsbError::Capacity {
            what: what.clone(),
            needed: *needed,
            cap: *cap,
        },
        MsbError::NotConverged(m) => MsbError::NotConverged(m.clone()),
        other => MsbError::Validation(other.to_string()),
    }
}

fn report_error(e: &MsbError) -> i32 {
    eprintln!("msb: {e}");
    e.exit_code()
}

/// Parses `args` (including the program name) and runs them.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli.command),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}
