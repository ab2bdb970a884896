//! Multimarginal Sinkhorn solver for the entropic dual
//!
//! ```text
//! Φ(f) = Σ_j ∫ f_j dν_j − ε ∫ exp((Σ_j f_j − c_α)/ε) d(⊗ν_k)
//! ```
//!
//! Blocks are updated cyclically, `j = 1..m`, each update solving its
//! Schrödinger equation `f_j = −ε log ∫ exp((Σ_{i≠j} f_i − c_α)/ε) d⊗_{i≠j}ν_i`
//! exactly. Every marginalization is a per-slice max-shifted log-sum-exp
//! evaluated over the flat tensor order (marginal 1 slowest), so results do
//! not depend on thread count.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_sup_bound, CostAccessor, ProductShape};
use crate::error::{MsbError, Result};
use crate::measures::Problem;
use crate::{DEFAULT_MAX_SWEEPS, DEFAULT_TENSOR_CAP, DEFAULT_TOL};

/// Dual potentials `(f_1, .., f_m)`, one value per atom of each marginal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialVector(Vec<Vec<f64>>);

impl PotentialVector {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self(sizes.iter().map(|&n| vec![0.0; n]).collect())
    }

    pub fn from_vecs(values: Vec<Vec<f64>>) -> Self {
        Self(values)
    }

    pub fn m(&self) -> usize {
        self.0.len()
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.0[j]
    }

    pub fn component_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.0[j]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.0
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.0.iter().map(Vec::len).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    fn check_shape(&self, problem: &Problem) -> Result<()> {
        if self.sizes() != problem.sizes() {
            return Err(MsbError::ShapeMismatch(format!(
                "potential sizes {:?} vs marginal sizes {:?}",
                self.sizes(),
                problem.sizes()
            )));
        }
        Ok(())
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &PotentialVector) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + t * y).collect())
                .collect(),
        )
    }

    /// `⟨self, other⟩ = Σ_j ∫ self_j other_j dν_j`.
    pub fn inner(&self, other: &PotentialVector, problem: &Problem) -> f64 {
        let mut acc = 0.0;
        for (j, (a, b)) in self.0.iter().zip(&other.0).enumerate() {
            for ((x, y), w) in a.iter().zip(b).zip(problem.marginal(j).weights()) {
                acc += w * x * y;
            }
        }
        acc
    }

    pub fn norm(&self, problem: &Problem) -> f64 {
        self.inner(self, problem).sqrt()
    }

    /// `ν_j(f_j)` for every block.
    pub fn means(&self, problem: &Problem) -> Vec<f64> {
        self.0
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.iter()
                    .zip(problem.marginal(j).weights())
                    .map(|(x, w)| w * x)
                    .sum()
            })
            .collect()
    }

    /// Re-centres `f_1..f_{m−1}` to `ν_k(f_k) = 0` and moves the total shift
    /// onto `f_m`, which leaves `Σ f_j` and hence the coupling unchanged.
    pub fn normalize(&mut self, problem: &Problem) {
        let m = self.0.len();
        if m < 2 {
            return;
        }
        let means = self.means(problem);
        let mut moved = 0.0;
        for k in 0..m - 1 {
            self.0[k].iter_mut().for_each(|v| *v -= means[k]);
            moved += means[k];
        }
        self.0[m - 1].iter_mut().for_each(|v| *v += moved);
    }

    pub fn is_normalized(&self, problem: &Problem, tol: f64) -> bool {
        let means = self.means(problem);
        means[..means.len().saturating_sub(1)]
            .iter()
            .all(|v| v.abs() <= tol)
    }

    /// `max_j ‖f_j‖_∞` over atoms of positive weight.
    pub fn max_sup_norm(&self, problem: &Problem) -> f64 {
        let mut best = 0.0f64;
        for (j, f) in self.0.iter().enumerate() {
            for (v, w) in f.iter().zip(problem.marginal(j).weights()) {
                if *w > 0.0 {
                    best = best.max(v.abs());
                }
            }
        }
        best
    }

    /// `‖Σ_j f_j‖_∞` over the product of positive-weight supports.
    pub fn sum_sup_norm(&self, problem: &Problem) -> f64 {
        let shape = ProductShape::new(&self.sizes());
        let mut best = 0.0f64;
        shape.for_each(|_, idx| {
            let mut s = 0.0;
            for (j, &i) in idx.iter().enumerate() {
                if problem.marginal(j).weights()[i] <= 0.0 {
                    return;
                }
                s += self.0[j][i];
            }
            best = best.max(s.abs());
        });
        best
    }
}

#[inline]
fn lse_finish(max: f64, sum: f64) -> f64 {
    if max == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        max + sum.ln()
    }
}

/// Log-domain evaluation of the Gibbs integrals of one problem.
#[derive(Debug, Clone)]
pub struct Kernel {
    cost: CostAccessor,
    log_weights: Vec<Vec<f64>>,
    epsilon: f64,
}

impl Kernel {
    pub fn new(problem: &Problem) -> Self {
        Self::with_cap(problem, DEFAULT_TENSOR_CAP)
    }

    pub fn with_cap(problem: &Problem, tensor_cap: usize) -> Self {
        Self {
            cost: CostAccessor::with_cap(problem, tensor_cap),
            log_weights: problem
                .marginals()
                .iter()
                .map(|mu| mu.weights().iter().map(|w| w.ln()).collect())
                .collect(),
            epsilon: problem.epsilon(),
        }
    }

    pub fn cost(&self) -> &CostAccessor {
        &self.cost
    }

    pub fn shape(&self) -> &ProductShape {
        self.cost.shape()
    }

    /// `f_k/ε + log w_k` per block.
    fn scaled(&self, f: &PotentialVector) -> Vec<Vec<f64>> {
        f.0.iter()
            .zip(&self.log_weights)
            .map(|(fk, lw)| fk.iter().zip(lw).map(|(v, l)| v / self.epsilon + l).collect())
            .collect()
    }

    /// Log-term at every flat index, skipping block `skip` when given:
    /// `Σ_{k≠skip} (f_k/ε + log w_k) − c/ε`.
    fn terms(&self, f: &PotentialVector, skip: Option<usize>) -> Vec<f64> {
        let scaled = self.scaled(f);
        let shape = self.shape();
        let mut out = Vec::with_capacity(shape.total());
        shape.for_each(|flat, idx| {
            let mut t = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                if Some(k) != skip {
                    t += scaled[k][i];
                }
            }
            out.push(t - self.cost.get(flat, idx) / self.epsilon);
        });
        out
    }

    /// For each atom `a` of marginal `j`:
    /// `log ∫ exp((Σ_{k≠j} f_k − c)/ε) d⊗_{k≠j}ν_k` on the slice `i_j = a`.
    pub fn slice_log_integral(&self, f: &PotentialVector, j: usize) -> Vec<f64> {
        let terms = self.terms(f, Some(j));
        let shape = self.shape();
        let n = shape.dims()[j];
        let mut max = vec![f64::NEG_INFINITY; n];
        shape.for_each(|flat, idx| {
            let a = idx[j];
            if terms[flat] > max[a] {
                max[a] = terms[flat];
            }
        });
        let mut sum = vec![0.0; n];
        shape.for_each(|flat, idx| {
            let a = idx[j];
            if max[a] != f64::NEG_INFINITY {
                sum[a] += (terms[flat] - max[a]).exp();
            }
        });
        max.iter().zip(&sum).map(|(&mx, &s)| lse_finish(mx, s)).collect()
    }

    /// `log ∫ exp((Σ f_k − c)/ε) d⊗ν_k`.
    pub fn total_log_integral(&self, f: &PotentialVector) -> f64 {
        let terms = self.terms(f, None);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        lse_finish(max, sum)
    }

    /// `log p(i) = (Σ f_k(i_k) − c(i))/ε` at every flat index.
    pub fn log_density(&self, f: &PotentialVector) -> Vec<f64> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(shape.total());
        shape.for_each(|flat, idx| {
            let mut s = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                s += f.0[k][i];
            }
            out.push((s - self.cost.get(flat, idx)) / self.epsilon);
        });
        out
    }

    /// Product weights `Π_k w_k(i_k)` in flat order.
    pub fn product_weights(&self) -> Vec<f64> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(shape.total());
        shape.for_each(|_, idx| {
            let mut lw = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                lw += self.log_weights[k][i];
            }
            out.push(lw.exp());
        });
        out
    }

    pub fn dual_objective(&self, f: &PotentialVector, problem: &Problem) -> f64 {
        let linear: f64 = f.means(problem).iter().sum();
        linear - self.epsilon * self.total_log_integral(f).exp()
    }

    pub fn gradient(&self, f: &PotentialVector) -> PotentialVector {
        PotentialVector(
            (0..f.m())
                .map(|j| {
                    self.slice_log_integral(f, j)
                        .iter()
                        .zip(&f.0[j])
                        .map(|(l, v)| 1.0 - (v / self.epsilon + l).exp())
                        .collect()
                })
                .collect(),
        )
    }
}

/// `Φ_{α,ε}(f)`; stabilized, summed in flat tensor order.
pub fn dual_objective(f: &PotentialVector, problem: &Problem) -> Result<f64> {
    f.check_shape(problem)?;
    Ok(Kernel::new(problem).dual_objective(f, problem))
}

/// Per-atom gradient components
/// `g_j(x_j) = ∫ (1 − p) d⊗_{k≠j}ν_k` with `p = exp((Σf − c)/ε)`.
/// The Riesz representative in `(L²(ν_1), .., L²(ν_m))`, so
/// `⟨∇Φ(f), h⟩ = Σ_j ∫ g_j h_j dν_j`.
pub fn gradient(f: &PotentialVector, problem: &Problem) -> Result<PotentialVector> {
    f.check_shape(problem)?;
    Ok(Kernel::new(problem).gradient(f))
}

/// `‖∇Φ(f)‖ = (Σ_j ∫ g_j² dν_j)^{1/2}`.
pub fn gradient_norm(f: &PotentialVector, problem: &Problem) -> Result<f64> {
    Ok(gradient(f, problem)?.norm(problem))
}

/// Sup-norm of the gradient over positive-weight atoms: the marginal
/// feasibility violation `max_j max_a |∫ p d⊗_{i≠j}ν_i − 1|`.
fn sup_residual(g: &PotentialVector, problem: &Problem) -> f64 {
    g.max_sup_norm(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub tensor_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            tensor_cap: DEFAULT_TENSOR_CAP,
        }
    }
}

impl SolverOptions {
    pub fn new(tol: f64, max_sweeps: usize) -> Self {
        Self {
            tol,
            max_sweeps,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(MsbError::validation(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_sweeps == 0 {
            return Err(MsbError::validation("max_sweeps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub dual_value: f64,
    pub residual: f64,
}

/// Stateful cyclic solver; [`sinkhorn_solve`] drives it to convergence.
/// Exposed so single block updates can be inspected.
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    problem: Problem,
    kept: Vec<Vec<usize>>,
    original_sizes: Vec<usize>,
    kernel: Kernel,
    f: PotentialVector,
}

impl SinkhornSolver {
    /// Zero-weight atoms are removed first; `init`, when given, is indexed
    /// over the remaining atoms.
    pub fn new(problem: &Problem, init: Option<&PotentialVector>, tensor_cap: usize) -> Result<Self> {
        let (reduced, kept) = problem.strip_zero_atoms();
        let f = match init {
            Some(f0) => {
                f0.check_shape(&reduced)?;
                if !f0.is_finite() {
                    return Err(MsbError::validation("initial potentials must be finite"));
                }
                f0.clone()
            }
            None => PotentialVector::zeros(&reduced.sizes()),
        };
        Ok(Self {
            kernel: Kernel::with_cap(&reduced, tensor_cap),
            original_sizes: problem.sizes(),
            problem: reduced,
            kept,
            f,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn potentials(&self) -> &PotentialVector {
        &self.f
    }

    pub fn dual_value(&self) -> f64 {
        self.kernel.dual_objective(&self.f, &self.problem)
    }

    /// Solves block `j` of the Schrödinger system given the other blocks.
    pub fn update_block(&mut self, j: usize) {
        let eps = self.problem.epsilon();
        let logs = self.kernel.slice_log_integral(&self.f, j);
        for (v, l) in self.f.0[j].iter_mut().zip(logs) {
            *v = -eps * l;
        }
    }

    /// One Gauss–Seidel pass over all blocks followed by normalization.
    pub fn sweep(&mut self) {
        for j in 0..self.problem.m() {
            self.update_block(j);
        }
        self.f.normalize(&self.problem);
    }

    pub fn residual(&self) -> f64 {
        sup_residual(&self.kernel.gradient(&self.f), &self.problem)
    }

    pub fn run(mut self, opts: &SolverOptions) -> Result<Solution> {
        opts.check()?;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < opts.max_sweeps {
            self.sweep();
            iterations += 1;
            if !self.f.is_finite() {
                break;
            }
            residual = self.residual();
            trace.push(TraceEntry {
                dual_value: self.dual_value(),
                residual,
            });
            if residual <= opts.tol {
                converged = true;
                break;
            }
        }
        Ok(self.finish(converged, iterations, residual, opts.tol, trace))
    }

    fn finish(
        self,
        converged: bool,
        iterations: usize,
        marginal_residual: f64,
        tol: f64,
        trace: Vec<TraceEntry>,
    ) -> Solution {
        let dual_value = self.kernel.dual_objective(&self.f, &self.problem);
        let gradient_norm = self.kernel.gradient(&self.f).norm(&self.problem);
        let (transport_cost, kl) = primal_parts(&self.kernel, &self.f);
        Solution {
            epsilon: self.problem.epsilon(),
            primal_value: transport_cost + self.problem.epsilon() * kl,
            transport_cost,
            kl_divergence: kl,
            dual_value,
            marginal_residual,
            gradient_norm,
            iterations,
            converged,
            tol,
            trace,
            potentials: self.f,
            problem: self.problem,
            kept: self.kept,
            original_sizes: self.original_sizes,
            kernel: self.kernel,
        }
    }
}

/// `(∫ c dπ, KL(π ‖ ⊗ν))` from the coupling weights `π = p · Π w`.
fn primal_parts(kernel: &Kernel, f: &PotentialVector) -> (f64, f64) {
    let log_p = kernel.log_density(f);
    let prod = kernel.product_weights();
    let shape = kernel.shape();
    let mut cost = 0.0;
    let mut kl = 0.0;
    shape.for_each(|flat, idx| {
        let pi = log_p[flat].exp() * prod[flat];
        if pi > 0.0 {
            cost += pi * kernel.cost().get(flat, idx);
            kl += pi * log_p[flat];
        }
    });
    (cost, kl)
}

/// Runs cyclic Sinkhorn sweeps until the sup-norm marginal residual is at
/// most `tol` or `max_sweeps` is spent. Non-convergence is reported through
/// [`Solution::converged`], not as an error.
pub fn sinkhorn_solve(
    problem: &Problem,
    tol: f64,
    max_sweeps: usize,
    init: Option<&PotentialVector>,
) -> Result<Solution> {
    sinkhorn_solve_with(problem, &SolverOptions::new(tol, max_sweeps), init)
}

pub fn sinkhorn_solve_with(
    problem: &Problem,
    opts: &SolverOptions,
    init: Option<&PotentialVector>,
) -> Result<Solution> {
    opts.check()?;
    SinkhornSolver::new(problem, init, opts.tensor_cap)?.run(opts)
}

/// Output of [`sinkhorn_solve`]. All per-atom data refers to the solved
/// problem, i.e. after zero-weight atoms were dropped; [`Solution::kept`]
/// maps back to the caller's indexing.
#[derive(Debug, Clone)]
pub struct Solution {
    pub potentials: PotentialVector,
    pub dual_value: f64,
    pub primal_value: f64,
    pub transport_cost: f64,
    pub kl_divergence: f64,
    pub marginal_residual: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: f64,
    pub tol: f64,
    pub trace: Vec<TraceEntry>,
    problem: Problem,
    kept: Vec<Vec<usize>>,
    original_sizes: Vec<usize>,
    kernel: Kernel,
}

#[derive(Serialize)]
struct SolutionJson<'a> {
    epsilon: f64,
    converged: bool,
    iterations: usize,
    tol: f64,
    dual_value: f64,
    primal_value: f64,
    transport_cost: f64,
    kl_divergence: f64,
    marginal_residual: f64,
    gradient_norm: f64,
    /// Indexed like the input marginals; `null` at dropped zero-weight atoms.
    potentials: Vec<Vec<Option<f64>>>,
    trace: &'a [TraceEntry],
}

impl Solution {
    /// The problem actually solved (zero-weight atoms removed).
    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Atom counts of the caller's marginals, zero-weight atoms included.
    pub fn original_sizes(&self) -> &[usize] {
        &self.original_sizes
    }

    pub fn kept(&self) -> &[Vec<usize>] {
        &self.kept
    }

    /// Potential at an atom of the original marginal; `None` for atoms that
    /// carried no mass.
    pub fn potential_at(&self, j: usize, original_index: usize) -> Option<f64> {
        let pos = self.kept.get(j)?.iter().position(|&i| i == original_index)?;
        Some(self.potentials.component(j)[pos])
    }

    /// `p(i) = exp((Σ f_j(x_{i_j}) − c_α)/ε)` at one multi-index.
    pub fn coupling_density(&self, idx: &[usize]) -> Result<f64> {
        let shape = self.kernel.shape();
        if idx.len() != shape.m() || idx.iter().zip(shape.dims()).any(|(i, n)| i >= n) {
            return Err(MsbError::IndexOutOfRange(format!(
                "{idx:?} for shape {:?}",
                shape.dims()
            )));
        }
        let flat = shape.ravel(idx);
        let s: f64 = idx
            .iter()
            .enumerate()
            .map(|(k, &i)| self.potentials.component(k)[i])
            .sum();
        Ok(((s - self.kernel.cost().get(flat, idx)) / self.epsilon).exp())
    }

    /// Densities at every multi-index, flat order.
    pub fn coupling_densities(&self) -> Vec<f64> {
        coupling_density_tensor(&self.kernel, &self.potentials)
    }

    /// Coupling weights `p · Π w` at every multi-index, flat order.
    pub fn coupling_weights(&self) -> Vec<f64> {
        let prod = self.kernel.product_weights();
        self.coupling_densities()
            .into_iter()
            .zip(prod)
            .map(|(p, w)| p * w)
            .collect()
    }

    /// Streams `(flat, idx, p · Π w)` over every multi-index without
    /// materializing the coupling.
    pub fn for_each_weight<F: FnMut(usize, &[usize], f64)>(&self, mut visit: F) {
        let f = &self.potentials;
        let lw = &self.kernel.log_weights;
        let cost = self.kernel.cost();
        self.kernel.shape().for_each(|flat, idx| {
            let mut s = 0.0;
            let mut w = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                s += f.0[k][i];
                w += lw[k][i];
            }
            let log_p = (s - cost.get(flat, idx)) / self.epsilon;
            visit(flat, idx, log_p.exp() * w.exp());
        });
    }

    /// `∫ c dπ + ε KL(π‖⊗ν)` recomputed from the coupling weights.
    pub fn primal_value(&self) -> f64 {
        let (c, kl) = primal_parts(&self.kernel, &self.potentials);
        c + self.epsilon * kl
    }

    pub fn to_json(&self) -> Result<String> {
        let potentials = self
            .original_sizes
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                let mut col = vec![None; n];
                for (pos, &orig) in self.kept[j].iter().enumerate() {
                    col[orig] = Some(self.potentials.component(j)[pos]);
                }
                col
            })
            .collect();
        let doc = SolutionJson {
            epsilon: self.epsilon,
            converged: self.converged,
            iterations: self.iterations,
            tol: self.tol,
            dual_value: self.dual_value,
            primal_value: self.primal_value,
            transport_cost: self.transport_cost,
            kl_divergence: self.kl_divergence,
            marginal_residual: self.marginal_residual,
            gradient_norm: self.gradient_norm,
            potentials,
            trace: &self.trace,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Densities for arbitrary potentials on a kernel's problem.
pub fn coupling_density_tensor(kernel: &Kernel, f: &PotentialVector) -> Vec<f64> {
    kernel.log_density(f).into_iter().map(f64::exp).collect()
}

/// One (f, g) pair that broke an inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeViolation {
    pub trial: usize,
    pub inequality: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcavityReport {
    pub beta: f64,
    pub cost_bound: f64,
    pub radius: f64,
    pub trials: usize,
    pub optimal_dual: f64,
    /// Smallest `lhs − rhs` seen for each inequality (`≥ 0` means no
    /// violation).
    pub min_concavity_margin: f64,
    pub min_pl_margin: f64,
    pub violations: Vec<ProbeViolation>,
}

/// Strong-concavity constant on the sum-bounded set with radius `l`:
/// `β = exp(−(l + cost_bound)/ε) / ε`.
pub fn concavity_beta(epsilon: f64, l: f64, cost_bound: f64) -> f64 {
    (-(l + cost_bound) / epsilon).exp() / epsilon
}

/// Draws a normalized potential vector with `‖Σ f_j‖_∞ ≤ radius`.
pub fn sample_sum_bounded(
    problem: &Problem,
    radius: f64,
    rng: &mut Xoshiro256PlusPlus,
) -> PotentialVector {
    let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut f = PotentialVector(
        problem
            .sizes()
            .iter()
            .map(|&n| (0..n).map(|_| 2.0 * unit() - 1.0).collect())
            .collect(),
    );
    // Centre every block but the last.
    let means = f.means(problem);
    let m = f.m();
    for (k, mean) in means.iter().enumerate().take(m.saturating_sub(1)) {
        f.0[k].iter_mut().for_each(|v| *v -= mean);
    }
    let target = radius * unit();
    let s = f.sum_sup_norm(problem);
    if s > 0.0 {
        let scale = target / s;
        f.0.iter_mut().flatten().for_each(|v| *v *= scale);
    }
    f
}

/// Samples `trials` random pairs from the sum-bounded normalized set of
/// radius `l` and checks both the strong-concavity inequality
/// `Φ(f) − Φ(g) ≥ ⟨∇Φ(f), f − g⟩ + β/2 ‖f − g‖²` and the
/// Polyak–Łojasiewicz bound `Φ(f*) − Φ(f) ≤ ‖∇Φ(f)‖² / (2β)`, with `‖c‖_∞`
/// replaced by [`cost_sup_bound`].
pub fn concavity_probe(problem: &Problem, l: f64, trials: usize, seed: u64) -> Result<ConcavityReport> {
    if !(l >= 0.0) {
        return Err(MsbError::validation(format!("radius L = {l} must be >= 0")));
    }
    let (reduced, _) = problem.strip_zero_atoms();
    let kernel = Kernel::new(&reduced);
    let cost_bound = cost_sup_bound(reduced.alpha(), reduced.dim());
    let eps = reduced.epsilon();
    let beta = concavity_beta(eps, l, cost_bound);
    let optimum = sinkhorn_solve_with(&reduced, &SolverOptions::new(1e-12, 100_000), None)?;
    let optimal_dual = optimum.dual_value;

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut min_conc = f64::INFINITY;
    let mut min_pl = f64::INFINITY;
    for trial in 0..trials {
        let f = sample_sum_bounded(&reduced, l, &mut rng);
        let g = sample_sum_bounded(&reduced, l, &mut rng);
        let phi_f = kernel.dual_objective(&f, &reduced);
        let phi_g = kernel.dual_objective(&g, &reduced);
        let grad = kernel.gradient(&f);
        let diff = f.axpy(-1.0, &g);
        let scale = 1e-12 * phi_f.abs().max(phi_g.abs()).max(1.0);

        let lhs = phi_f - phi_g;
        let rhs = grad.inner(&diff, &reduced) + 0.5 * beta * diff.inner(&diff, &reduced);
        min_conc = min_conc.min(lhs - rhs);
        if lhs < rhs - scale {
            violations.push(ProbeViolation {
                trial,
                inequality: "strong_concavity",
                lhs,
                rhs,
            });
        }

        let gap = optimal_dual - phi_f;
        let bound = grad.inner(&grad, &reduced) / (2.0 * beta);
        min_pl = min_pl.min(bound - gap);
        if gap > bound + scale {
            violations.push(ProbeViolation {
                trial,
                inequality: "polyak_lojasiewicz",
                lhs: gap,
                rhs: bound,
            });
        }
    }
    Ok(ConcavityReport {
        beta,
        cost_bound,
        radius: l,
        trials,
        optimal_dual,
        min_concavity_margin: min_conc,
        min_pl_margin: min_pl,
        violations,
    })
}
