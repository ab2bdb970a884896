//! Monte Carlo harness for the sampling behaviour of the entropic cost and
//! barycenter, plus the deterministic `ε → 0` and perturbation studies.
//!
//! Ground truth always comes from solving on the exact population atoms.
//! Randomness enters only through [`rep_seed`] and [`marginal_seed`], so
//! every experiment is a pure function of its config.

use std::io::Write;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{
    compute_barycenter, coupling_expectation_of, integrate, CouplingFunction, TestFunction,
};
use crate::error::{MsbError, Result};
use crate::exact::{
    block_approximation, exact_barycenter, exact_mot_with_cap, wasserstein_p, wasserstein_pow,
    LpStatus, WassersteinOrder,
};
use crate::measures::{sample_from_measure, DiscreteMeasure, Duplicates, PopulationSpec, Problem};
use crate::solver::{sinkhorn_solve_with, PotentialVector, Solution, SolverOptions};
use crate::{fmt_float, DEFAULT_LP_CAP};

/// Fraction of non-converged inner solves above which a run fails.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;
/// Largest max/min ratio of scaled 90% quantiles still called bounded.
pub const BOUNDED_RATIO: f64 = 3.0;
/// Additive slack for the sandwich and monotonicity checks.
pub const GAMMA_SLACK: f64 = 1e-9;
/// Additive slack for the stability checks.
pub const STABILITY_SLACK: f64 = 1e-12;

fn default_reps() -> usize {
    100
}

fn default_p() -> u32 {
    1
}

/// Configuration shared by all experiments. Fields unused by a given
/// experiment are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub populations: Vec<PopulationSpec>,
    pub alpha: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub test_function: TestFunction,
    #[serde(default)]
    pub coupling_function: CouplingFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Wasserstein order for the barycenter rate.
    #[serde(default = "default_p")]
    pub p: u32,
    /// Strictly decreasing regularizations for the `ε → 0` study.
    #[serde(default)]
    pub epsilon_grid: Vec<f64>,
    /// Shift sizes `δ ≥ 0` for the stability study.
    #[serde(default)]
    pub perturbations: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn population_measures(&self) -> Result<Vec<DiscreteMeasure>> {
        self.populations.iter().map(PopulationSpec::measure).collect()
    }

    pub fn population_problem(&self) -> Result<Problem> {
        Problem::new(self.population_measures()?, self.alpha.clone(), self.epsilon)
    }

    /// Checks every invariant that does not depend on the experiment kind.
    pub fn validate(&self) -> Result<()> {
        if self.populations.is_empty() {
            return Err(MsbError::validation("populations must be nonempty"));
        }
        if self.populations.len() != self.alpha.len() {
            return Err(MsbError::validation(format!(
                "{} populations but {} alpha weights",
                self.populations.len(),
                self.alpha.len()
            )));
        }
        let problem = self.population_problem()?;
        if self.reps == 0 {
            return Err(MsbError::validation("reps must be >= 1"));
        }
        if self.n_grid.iter().any(|&n| n == 0) {
            return Err(MsbError::validation("n_grid entries must be >= 1"));
        }
        if let Some(w) = self.n_grid.windows(2).find(|w| w[0] >= w[1]) {
            return Err(MsbError::validation(format!(
                "n_grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        self.test_function.validate(problem.dim())?;
        if let CouplingFunction::Pushforward { h } = &self.coupling_function {
            h.validate(problem.dim())?;
        }
        WassersteinOrder::from_p(self.p)?;
        if self.epsilon_grid.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(MsbError::validation("epsilon_grid entries must be positive"));
        }
        if self.epsilon_grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(MsbError::validation("epsilon_grid must be strictly decreasing"));
        }
        if self.perturbations.iter().any(|&d| !(d.is_finite() && d >= 0.0)) {
            return Err(MsbError::validation("perturbations must be finite and >= 0"));
        }
        self.solver.check()
    }

    fn require_n_grid(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(MsbError::validation("n_grid must be nonempty"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Seeds

/// One output of a SplitMix64 generator started at state `x`.
pub fn splitmix64(x: u64) -> u64 {
    SplitMix64::seed_from_u64(x).next_u64()
}

/// Seed of repetition `rep` at sample size `n`:
/// `s(s(s(master) ^ n) ^ rep)` with `s` = [`splitmix64`].
pub fn rep_seed(master: u64, n: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ n as u64) ^ rep as u64)
}

/// Sampling seed of marginal `j` (zero-based) within a repetition.
pub fn marginal_seed(rep_seed: u64, j: usize) -> u64 {
    splitmix64(rep_seed.wrapping_add(j as u64 + 1))
}

/// The empirical marginals of one repetition.
pub fn draw_marginals(populations: &[DiscreteMeasure], n: usize, seed: u64) -> Result<Vec<DiscreteMeasure>> {
    populations
        .iter()
        .enumerate()
        .map(|(j, pop)| sample_from_measure(pop, n, marginal_seed(seed, j), Duplicates::Consolidate))
        .collect()
}

// ---------------------------------------------------------------------------
// Population reference

/// The entropic problem solved on the exact population atoms.
#[derive(Debug, Clone)]
pub struct PopulationReference {
    pub problem: Problem,
    pub solution: Solution,
    /// Consolidated `ν̄_ε` of the population.
    pub barycenter: DiscreteMeasure,
}

impl PopulationReference {
    /// `S_{α,ε}` of the population.
    pub fn value(&self) -> f64 {
        self.solution.primal_value
    }

    pub fn potentials(&self) -> &PotentialVector {
        &self.solution.potentials
    }
}

fn converged_solve(problem: &Problem, opts: &SolverOptions, init: Option<&PotentialVector>, what: &str) -> Result<Solution> {
    let sol = sinkhorn_solve_with(problem, opts, init)?;
    if !sol.converged {
        return Err(MsbError::NotConverged(format!(
            "{what}: residual {:e} after {} sweeps (tol {:e})",
            sol.marginal_residual, sol.iterations, opts.tol
        )));
    }
    Ok(sol)
}

fn reference_for(problem: Problem, opts: &SolverOptions, what: &str) -> Result<PopulationReference> {
    let solution = converged_solve(&problem, opts, None, what)?;
    let barycenter = compute_barycenter(&solution, true)?.into_measure();
    Ok(PopulationReference {
        problem,
        solution,
        barycenter,
    })
}

pub fn population_reference(config: &ExperimentConfig) -> Result<PopulationReference> {
    config.validate()?;
    reference_for(config.population_problem()?, &config.solver, "population reference")
}

// ---------------------------------------------------------------------------
// Rate bookkeeping

/// One inner solve of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    /// `NaN` when the solve did not converge.
    pub statistic: f64,
    pub converged: bool,
}

/// Which per-N summary the log-log fit runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    /// Mean of the squared statistic.
    Mse,
    /// Mean of the statistic.
    Mean,
}

/// Summary over the converged reps at one sample size. `variance` is the
/// unbiased sample variance of the statistic; `stderr` is the Monte Carlo
/// standard error of the fitted quantity. Both are 0 for a single rep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub mse: f64,
    pub stderr: f64,
    pub n_reps: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateResult {
    pub target: FitTarget,
    pub reps: usize,
    pub records: Vec<RepRecord>,
    pub summary: Vec<NSummary>,
    /// `None` when the fit is undefined; see `fit_note`.
    pub fit: Option<LogLogFit>,
    pub fit_note: Option<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

impl RateResult {
    pub fn from_records(records: Vec<RepRecord>, n_grid: &[usize], reps: usize, target: FitTarget) -> Self {
        let summary: Vec<NSummary> = n_grid
            .iter()
            .map(|&n| {
                let stats: Vec<f64> = records
                    .iter()
                    .filter(|r| r.n == n && r.converged)
                    .map(|r| r.statistic)
                    .collect();
                let total = records.iter().filter(|r| r.n == n).count();
                let squares: Vec<f64> = stats.iter().map(|s| s * s).collect();
                let k = stats.len();
                let (mu, var, mse, se) = if k == 0 {
                    (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
                } else {
                    let fitted = match target {
                        FitTarget::Mse => &squares,
                        FitTarget::Mean => &stats,
                    };
                    (
                        mean(&stats),
                        sample_variance(&stats),
                        mean(&squares),
                        (sample_variance(fitted) / k as f64).sqrt(),
                    )
                };
                NSummary {
                    n,
                    mean: mu,
                    variance: var,
                    mse,
                    stderr: se,
                    n_reps: k,
                    n_excluded: total - k,
                }
            })
            .collect();

        let pairs: Vec<(f64, f64)> = summary
            .iter()
            .filter(|s| s.n_reps > 0)
            .map(|s| {
                let y = match target {
                    FitTarget::Mse => s.mse,
                    FitTarget::Mean => s.mean,
                };
                (s.n as f64, y)
            })
            .collect();
        let (fit, fit_note) = match fit_loglog_slope(&pairs) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            target,
            reps,
            records,
            summary,
            fit,
            fit_note,
        }
    }

    pub fn excluded(&self) -> impl Iterator<Item = &RepRecord> {
        self.records.iter().filter(|r| !r.converged)
    }

    pub fn excluded_fraction(&self) -> f64 {
        self.excluded().count() as f64 / self.records.len().max(1) as f64
    }

    /// Fails when more than [`MAX_EXCLUDED_FRACTION`] of the solves were
    /// excluded, listing their seeds.
    pub fn check_exclusions(&self) -> Result<()> {
        if self.excluded_fraction() <= MAX_EXCLUDED_FRACTION {
            return Ok(());
        }
        let list: Vec<String> = self
            .excluded()
            .map(|r| format!("(N={}, rep={}, seed={})", r.n, r.rep, r.seed))
            .collect();
        Err(MsbError::NotConverged(format!(
            "{} of {} inner solves excluded: {}",
            list.len(),
            self.records.len(),
            list.join(", ")
        )))
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    /// `N,rep,statistic,converged,seed`
    pub fn write_rate_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "N,rep,statistic,converged,seed")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.n, r.rep, fmt_float(r.statistic), r.converged, r.seed)?;
        }
        Ok(())
    }

    /// `N,mean,variance,mse,stderr,n_reps`
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "N,mean,variance,mse,stderr,n_reps")?;
        for s in &self.summary {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.n,
                fmt_float(s.mean),
                fmt_float(s.variance),
                fmt_float(s.mse),
                fmt_float(s.stderr),
                s.n_reps
            )?;
        }
        Ok(())
    }

    /// `slope,intercept,r2,n_points`; an undefined fit is written as `NaN`s
    /// with the number of usable sample sizes.
    pub fn write_slope_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "slope,intercept,r2,n_points")?;
        match self.fit {
            Some(f) => writeln!(
                out,
                "{},{},{},{}",
                fmt_float(f.slope),
                fmt_float(f.intercept),
                fmt_float(f.r2),
                f.n_points
            ),
            None => {
                let n = self.summary.iter().filter(|s| s.n_reps > 0).count();
                let nan = fmt_float(f64::NAN);
                writeln!(out, "{nan},{nan},{nan},{n}")
            }
        }
    }
}

/// Ordinary least squares of `log y` on `log N`. Needs at least three
/// pairs with positive `N` and `y`. `R² = 1` when `log y` is constant.
pub fn fit_loglog_slope(pairs: &[(f64, f64)]) -> Result<LogLogFit> {
    if pairs.len() < 3 {
        return Err(MsbError::validation(format!(
            "log-log fit needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    if let Some(&(n, y)) = pairs.iter().find(|&&(n, y)| !(n > 0.0 && y > 0.0 && y.is_finite())) {
        return Err(MsbError::validation(format!(
            "nonpositive statistic {y} at N = {n} cannot be log-fitted"
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MsbError::validation("log-log fit needs at least two distinct N"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LogLogFit {
        slope,
        intercept,
        r2,
        n_points: pairs.len(),
    })
}

/// Runs `task(n, rep, seed)` for every grid point and repetition in
/// parallel, returning results in `(N, rep)` order.
fn run_reps<T, F>(config: &ExperimentConfig, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, usize, u64) -> Result<T> + Sync,
{
    let jobs: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.reps).map(move |rep| (n, rep)))
        .collect();
    jobs.into_par_iter()
        .map(|(n, rep)| task(n, rep, rep_seed(config.seed, n, rep)))
        .collect()
}

fn empirical_problem(
    populations: &[DiscreteMeasure],
    config: &ExperimentConfig,
    n: usize,
    seed: u64,
) -> Result<(Vec<DiscreteMeasure>, Problem)> {
    let marginals = draw_marginals(populations, n, seed)?;
    let problem = Problem::new(marginals.clone(), config.alpha.clone(), config.epsilon)?;
    Ok((marginals, problem))
}

// ---------------------------------------------------------------------------
// Cost rate

/// Signed error `Ŝ_N − S_pop` of the empirical entropic cost per rep; the
/// fit runs on its mean square.
pub fn cost_rate_experiment(config: &ExperimentConfig) -> Result<RateResult> {
    config.validate()?;
    config.require_n_grid()?;
    let reference = population_reference(config)?;
    let s_pop = reference.value();
    let populations = config.population_measures()?;
    let records = run_reps(config, |n, rep, seed| {
        let (_, problem) = empirical_problem(&populations, config, n, seed)?;
        let sol = sinkhorn_solve_with(&problem, &config.solver, None)?;
        Ok(RepRecord {
            n,
            rep,
            seed,
            statistic: if sol.converged { sol.primal_value - s_pop } else { f64::NAN },
            converged: sol.converged,
        })
    })?;
    Ok(RateResult::from_records(records, &config.n_grid, config.reps, FitTarget::Mse))
}

// ---------------------------------------------------------------------------
// Concentration

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "on", rename_all = "snake_case")]
pub enum Observable {
    /// `h` integrated against the barycenter.
    Barycenter { h: TestFunction },
    /// `g` integrated against the coupling.
    Coupling { g: CouplingFunction },
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::Barycenter { .. } => "barycenter",
            Observable::Coupling { .. } => "coupling",
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Observable::Barycenter { h } => h.validate(dim),
            Observable::Coupling {
                g: CouplingFunction::Pushforward { h },
            } => h.validate(dim),
            Observable::Coupling { .. } => Ok(()),
        }
    }

    fn evaluate(&self, sol: &Solution) -> Result<f64> {
        match self {
            Observable::Barycenter { h } => Ok(integrate(compute_barycenter(sol, false)?.measure(), h)),
            Observable::Coupling { g } => coupling_expectation_of(sol, g),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileRow {
    pub n: usize,
    pub q50: f64,
    pub q90: f64,
}

/// Scaled deviations `√N · |ν̄_ε(h) − ν̂_ε^N(h)|` (or the coupling analog)
/// with their per-N quantiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationResult {
    pub observable: Observable,
    pub reference_value: f64,
    pub rate: RateResult,
    pub quantiles: Vec<QuantileRow>,
    /// `max / min` of the 90% quantiles over the grid.
    pub ratio: f64,
    pub bounded: bool,
}

impl ConcentrationResult {
    /// `N,q50,q90`
    pub fn write_quantile_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "N,q50,q90")?;
        for q in &self.quantiles {
            writeln!(out, "{},{},{}", q.n, fmt_float(q.q50), fmt_float(q.q90))?;
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of the sorted sample (type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantile_ratio(q90: &[f64]) -> f64 {
    let max = q90.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = q90.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

pub fn test_function_concentration(config: &ExperimentConfig, observable: &Observable) -> Result<ConcentrationResult> {
    Ok(concentration_suite(config, std::slice::from_ref(observable))?.remove(0))
}

/// Several observables evaluated on the same inner solves.
pub fn concentration_suite(config: &ExperimentConfig, observables: &[Observable]) -> Result<Vec<ConcentrationResult>> {
    config.validate()?;
    config.require_n_grid()?;
    let reference = population_reference(config)?;
    for obs in observables {
        obs.validate(reference.problem.dim())?;
    }
    let refs: Vec<f64> = observables
        .iter()
        .map(|o| o.evaluate(&reference.solution))
        .collect::<Result<_>>()?;
    let populations = config.population_measures()?;
    let per_rep: Vec<(usize, usize, u64, Option<Vec<f64>>)> = run_reps(config, |n, rep, seed| {
        let (_, problem) = empirical_problem(&populations, config, n, seed)?;
        let sol = sinkhorn_solve_with(&problem, &config.solver, None)?;
        if !sol.converged {
            return Ok((n, rep, seed, None));
        }
        let scale = (n as f64).sqrt();
        let stats = observables
            .iter()
            .zip(&refs)
            .map(|(o, r)| Ok(scale * (r - o.evaluate(&sol)?).abs()))
            .collect::<Result<Vec<f64>>>()?;
        Ok((n, rep, seed, Some(stats)))
    })?;

    let results = observables
        .iter()
        .enumerate()
        .map(|(k, obs)| {
            let records: Vec<RepRecord> = per_rep
                .iter()
                .map(|(n, rep, seed, stats)| RepRecord {
                    n: *n,
                    rep: *rep,
                    seed: *seed,
                    statistic: stats.as_ref().map_or(f64::NAN, |s| s[k]),
                    converged: stats.is_some(),
                })
                .collect();
            let quantiles: Vec<QuantileRow> = config
                .n_grid
                .iter()
                .map(|&n| {
                    let mut xs: Vec<f64> = records
                        .iter()
                        .filter(|r| r.n == n && r.converged)
                        .map(|r| r.statistic)
                        .collect();
                    xs.sort_by(f64::total_cmp);
                    QuantileRow {
                        n,
                        q50: quantile(&xs, 0.5),
                        q90: quantile(&xs, 0.9),
                    }
                })
                .collect();
            let q90: Vec<f64> = quantiles.iter().map(|q| q.q90).collect();
            let ratio = quantile_ratio(&q90);
            ConcentrationResult {
                observable: obs.clone(),
                reference_value: refs[k],
                rate: RateResult::from_records(records, &config.n_grid, config.reps, FitTarget::Mean),
                quantiles,
                ratio,
                bounded: ratio <= BOUNDED_RATIO,
            }
        })
        .collect();
    Ok(results)
}

// ---------------------------------------------------------------------------
// Barycenter rate

/// Per-rep comparison with the direct empirical rate when `α` is a vertex
/// of the simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionCheck {
    pub marginal: usize,
    /// `|W_p^p(ν̄, ν̂^N) − W_p^p(ν_j, ν̂_j^N)|` per converged rep.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarycenterRate {
    pub p: u32,
    /// Statistic is `W_p^p(ν̄_ε, ν̂_ε^N)`; the fit runs on its mean.
    pub rate: RateResult,
    pub reduction: Option<ReductionCheck>,
}

fn one_hot(alpha: &[f64]) -> Option<usize> {
    let j = alpha.iter().position(|&a| a == 1.0)?;
    alpha
        .iter()
        .enumerate()
        .all(|(k, &a)| k == j || a == 0.0)
        .then_some(j)
}

fn with_n(err: MsbError, n: usize) -> MsbError {
    match err {
        MsbError::Capacity { what, needed, cap } => MsbError::Capacity {
            what: format!("{what} at N = {n}"),
            needed,
            cap,
        },
        other => other,
    }
}

pub fn barycenter_rate_experiment(config: &ExperimentConfig, p: u32) -> Result<BarycenterRate> {
    config.validate()?;
    config.require_n_grid()?;
    let order = WassersteinOrder::from_p(p)?;
    let populations = config.population_measures()?;
    if populations[0].dim() > 1 {
        let pop_support: usize = populations.iter().map(DiscreteMeasure::len).product();
        for &n in &config.n_grid {
            let emp_support: usize = populations.iter().map(|mu| mu.len().min(n)).product();
            let vars = pop_support.saturating_mul(emp_support);
            if vars > DEFAULT_LP_CAP {
                return Err(MsbError::Capacity {
                    what: format!("Wasserstein LP at N = {n}"),
                    needed: vars,
                    cap: DEFAULT_LP_CAP,
                });
            }
        }
    }
    let reference = population_reference(config)?;
    let vertex = one_hot(&config.alpha);

    let per_rep: Vec<(RepRecord, Option<f64>)> = run_reps(config, |n, rep, seed| {
        let (marginals, problem) = empirical_problem(&populations, config, n, seed)?;
        let sol = sinkhorn_solve_with(&problem, &config.solver, None)?;
        if !sol.converged {
            let record = RepRecord {
                n,
                rep,
                seed,
                statistic: f64::NAN,
                converged: false,
            };
            return Ok((record, None));
        }
        let bary = compute_barycenter(&sol, true)?.into_measure();
        let stat = wasserstein_pow(&reference.barycenter, &bary, order).map_err(|e| with_n(e, n))?;
        let gap = match vertex {
            Some(j) => {
                let direct = wasserstein_pow(&populations[j], &marginals[j], order).map_err(|e| with_n(e, n))?;
                Some((stat - direct).abs())
            }
            None => None,
        };
        let record = RepRecord {
            n,
            rep,
            seed,
            statistic: stat,
            converged: true,
        };
        Ok((record, gap))
    })?;

    let reduction = vertex.map(|j| {
        let gaps: Vec<f64> = per_rep.iter().filter_map(|(_, g)| *g).collect();
        let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
        ReductionCheck {
            marginal: j,
            gaps,
            max_gap,
        }
    });
    let records = per_rep.into_iter().map(|(r, _)| r).collect();
    Ok(BarycenterRate {
        p,
        rate: RateResult::from_records(records, &config.n_grid, config.reps, FitTarget::Mean),
        reduction,
    })
}

// ---------------------------------------------------------------------------
// ε → 0

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaRow {
    pub epsilon: f64,
    /// `S_{α,ε}`, the entropic primal value.
    pub s_eps: f64,
    pub dual_value: f64,
    /// `S_exact + ε (m − 1) log max_j N_j`.
    pub upper_bound: f64,
    /// `S_exact + ε KL(π̃ ‖ ⊗ν)` for the block approximation `π̃` of the
    /// exact coupling.
    pub block_bound: f64,
    /// `W_2(ν̄_ε, ν̄_exact)`.
    pub w2: f64,
    pub iterations: usize,
    pub sandwich_ok: bool,
    /// `S_ε ≤ S_{ε'}` for the previous (larger) grid value `ε'`.
    pub monotone_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaResult {
    pub s_exact: f64,
    pub rows: Vec<GammaRow>,
    /// Block side used for the approximation of the exact coupling.
    pub block_width: f64,
    pub block_kl: f64,
    pub block_kl_bound: f64,
    pub sandwich_holds: bool,
    pub monotone: bool,
    /// Final `W_2` at most the first one.
    pub w2_trend_ok: bool,
}

impl GammaResult {
    pub fn passed(&self) -> bool {
        self.sandwich_holds && self.monotone && self.w2_trend_ok
    }

    /// `epsilon,s_eps,dual_value,s_exact,upper_bound,block_bound,w2,iterations,sandwich_ok,monotone_ok`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "epsilon,s_eps,dual_value,s_exact,upper_bound,block_bound,w2,iterations,sandwich_ok,monotone_ok"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_float(r.epsilon),
                fmt_float(r.s_eps),
                fmt_float(r.dual_value),
                fmt_float(self.s_exact),
                fmt_float(r.upper_bound),
                fmt_float(r.block_bound),
                fmt_float(r.w2),
                r.iterations,
                r.sandwich_ok,
                r.monotone_ok
            )?;
        }
        Ok(())
    }
}

/// Half the smallest positive gap between coordinate values of any
/// marginal: blocks this wide hold at most one atom each.
fn separating_width(marginals: &[DiscreteMeasure]) -> f64 {
    let mut gap = f64::INFINITY;
    for mu in marginals {
        for c in 0..mu.dim() {
            let mut vals: Vec<f64> = mu.points().iter().map(|x| x[c]).collect();
            vals.sort_by(f64::total_cmp);
            for w in vals.windows(2) {
                if w[1] > w[0] {
                    gap = gap.min(w[1] - w[0]);
                }
            }
        }
    }
    if gap.is_finite() {
        gap / 2.0
    } else {
        2.0
    }
}

/// Solves along a strictly decreasing `ε` grid, each solve warm-started
/// from the previous potentials, and compares against the exact LP.
pub fn gamma_experiment(config: &ExperimentConfig, epsilon_grid: &[f64]) -> Result<GammaResult> {
    config.validate()?;
    if epsilon_grid.is_empty() {
        return Err(MsbError::validation("epsilon_grid must be nonempty"));
    }
    if epsilon_grid.iter().any(|&e| !(e.is_finite() && e > 0.0)) || epsilon_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(MsbError::validation("epsilon_grid must be positive and strictly decreasing"));
    }
    let base = config.population_problem()?;
    let lp = exact_mot_with_cap(&base, DEFAULT_LP_CAP)?;
    if lp.status != LpStatus::Optimal {
        return Err(MsbError::validation("exact multimarginal LP is infeasible"));
    }
    let s_exact = lp.value;
    let bary_exact = exact_barycenter(&base, &lp)?;

    let width = separating_width(base.marginals());
    let block = block_approximation(&lp.to_coupling(), base.marginals(), width)?;
    let m = base.m();
    let max_n = base.sizes().into_iter().max().unwrap_or(1) as f64;

    let mut rows: Vec<GammaRow> = Vec::with_capacity(epsilon_grid.len());
    let mut warm: Option<PotentialVector> = None;
    for &eps in epsilon_grid {
        let problem = base.with_epsilon(eps)?;
        let sol = converged_solve(&problem, &config.solver, warm.as_ref(), &format!("epsilon = {eps}"))?;
        let bary = compute_barycenter(&sol, true)?.into_measure();
        let w2 = wasserstein_p(&bary, &bary_exact, 2)?;
        let s_eps = sol.primal_value;
        let upper_bound = s_exact + eps * (m - 1) as f64 * max_n.ln();
        let monotone_ok = rows.last().map_or(true, |prev| s_eps <= prev.s_eps + GAMMA_SLACK);
        rows.push(GammaRow {
            epsilon: eps,
            s_eps,
            dual_value: sol.dual_value,
            upper_bound,
            block_bound: s_exact + eps * block.kl,
            w2,
            iterations: sol.iterations,
            sandwich_ok: s_exact - GAMMA_SLACK <= s_eps && s_eps <= upper_bound + GAMMA_SLACK,
            monotone_ok,
        });
        warm = Some(sol.potentials);
    }
    let w2_trend_ok = rows.last().unwrap().w2 <= rows[0].w2 + GAMMA_SLACK;
    Ok(GammaResult {
        s_exact,
        sandwich_holds: rows.iter().all(|r| r.sandwich_ok),
        monotone: rows.iter().all(|r| r.monotone_ok),
        w2_trend_ok,
        rows,
        block_width: width,
        block_kl: block.kl,
        block_kl_bound: block.kl_bound,
    })
}

// ---------------------------------------------------------------------------
// Stability

/// Shifts atom `i` of marginal `j` by `δ` in every coordinate, upwards when
/// `i + j` is even and downwards otherwise.
pub fn perturb_population(mu: &DiscreteMeasure, j: usize, delta: f64) -> Result<DiscreteMeasure> {
    let mut points = Vec::with_capacity(mu.len());
    for (i, x) in mu.points().iter().enumerate() {
        let s = if (i + j) % 2 == 0 { delta } else { -delta };
        let y: Vec<f64> = x.iter().map(|v| v + s).collect();
        if y.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(MsbError::validation(format!(
                "perturbation delta = {delta} moves atom {i} of marginal {j} outside [-1, 1]^d"
            )));
        }
        points.push(y);
    }
    DiscreteMeasure::new(points, mu.weights().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub delta: f64,
    /// `(Σ_j W_2(ν_j, ν̃_j)²)^{1/2}`.
    pub aggregate_w2: f64,
    /// `W_1(ν̄_ε, ν̃_ε)`.
    pub w1: f64,
    /// `√m Δ + C √Δ` with the fitted `C`.
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityResult {
    /// Rows in order of increasing `δ`.
    pub rows: Vec<StabilityRow>,
    /// `C` fitted from the largest `δ`, clamped at 0.
    pub fitted_c: f64,
    /// Smallest `δ` satisfies `W_1 ≤ rhs`.
    pub smallest_ok: bool,
    /// `W_1` nondecreasing in `δ`.
    pub trend_ok: bool,
    /// `W_1 = 0` at `δ = 0`, vacuous when 0 is not on the grid.
    pub zero_ok: bool,
}

impl StabilityResult {
    pub fn passed(&self) -> bool {
        self.smallest_ok && self.trend_ok && self.zero_ok
    }

    /// `delta,aggregate_w2,w1,rhs`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "delta,aggregate_w2,w1,rhs")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_float(r.delta),
                fmt_float(r.aggregate_w2),
                fmt_float(r.w1),
                fmt_float(r.rhs)
            )?;
        }
        Ok(())
    }
}

pub fn stability_experiment(config: &ExperimentConfig, deltas: &[f64]) -> Result<StabilityResult> {
    config.validate()?;
    if deltas.is_empty() {
        return Err(MsbError::validation("perturbations must be nonempty"));
    }
    if deltas.iter().any(|&d| !(d.is_finite() && d >= 0.0)) {
        return Err(MsbError::validation("perturbations must be finite and >= 0"));
    }
    let mut deltas = deltas.to_vec();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();

    let base = population_reference(config)?;
    let pops = config.population_measures()?;
    let m = pops.len();
    let sqrt_m = (m as f64).sqrt();

    let mut raw: Vec<(f64, f64, f64)> = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let perturbed = pops
            .iter()
            .enumerate()
            .map(|(j, mu)| perturb_population(mu, j, delta))
            .collect::<Result<Vec<_>>>()?;
        let aggregate = pops
            .iter()
            .zip(&perturbed)
            .map(|(a, b)| wasserstein_p(a, b, 2).map(|w| w * w))
            .sum::<Result<f64>>()?
            .sqrt();
        let problem = Problem::new(perturbed, config.alpha.clone(), config.epsilon)?;
        let other = reference_for(problem, &config.solver, &format!("perturbation delta = {delta}"))?;
        let w1 = wasserstein_p(&base.barycenter, &other.barycenter, 1)?;
        raw.push((delta, aggregate, w1));
    }

    let &(_, big_delta, big_w1) = raw.last().unwrap();
    let fitted_c = if big_delta > 0.0 {
        ((big_w1 - sqrt_m * big_delta) / big_delta.sqrt()).max(0.0)
    } else {
        0.0
    };
    let rows: Vec<StabilityRow> = raw
        .into_iter()
        .map(|(delta, aggregate_w2, w1)| StabilityRow {
            delta,
            aggregate_w2,
            w1,
            rhs: sqrt_m * aggregate_w2 + fitted_c * aggregate_w2.sqrt(),
        })
        .collect();
    let smallest_ok = rows[0].w1 <= rows[0].rhs + STABILITY_SLACK;
    let trend_ok = rows.windows(2).all(|w| w[0].w1 <= w[1].w1 + STABILITY_SLACK);
    let zero_ok = rows
        .iter()
        .filter(|r| r.delta == 0.0)
        .all(|r| r.w1 <= STABILITY_SLACK);
    Ok(StabilityResult {
        rows,
        fitted_c,
        smallest_ok,
        trend_ok,
        zero_ok,
    })
}
