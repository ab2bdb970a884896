//! Unregularized references: multimarginal OT by linear programming, exact
//! discrete `W_1`/`W_2`, and the block approximation of a coupling.

mod block;
mod simplex;
mod wasserstein;

pub use block::{block_approximation, block_index, BlockApproximation};
pub use wasserstein::{
    wasserstein_p, wasserstein_pow, wasserstein_pow_lp, wasserstein_pow_quantile, WassersteinOrder,
};

use serde::Serialize;
use std::io::Write;

use crate::cost::{CostAccessor, ProductShape};
use crate::error::{MsbError, Result};
use crate::measures::{DiscreteMeasure, Problem};
use crate::{fmt_float, DEFAULT_LP_CAP};

use simplex::{Outcome, StandardLp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    CapExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingEntry {
    pub indices: Vec<usize>,
    pub weight: f64,
}

/// Result of an exact transport LP. Coupling indices refer to the caller's
/// atoms (zero-weight atoms never carry mass).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolveReport {
    pub status: LpStatus,
    pub value: f64,
    pub dual_value: f64,
    pub min_reduced_cost: f64,
    /// Equality multipliers, one per retained constraint row.
    pub dual_multipliers: Vec<f64>,
    pub pivots: usize,
    pub sizes: Vec<usize>,
    pub coupling: Vec<CouplingEntry>,
}

impl LpSolveReport {
    /// Report written when an instance is refused for size.
    pub fn cap_exceeded(sizes: Vec<usize>) -> Self {
        Self {
            status: LpStatus::CapExceeded,
            value: f64::NAN,
            dual_value: f64::NAN,
            min_reduced_cost: f64::NAN,
            dual_multipliers: Vec::new(),
            pivots: 0,
            sizes,
            coupling: Vec::new(),
        }
    }

    pub fn to_coupling(&self) -> Coupling {
        Coupling::from_sparse(&self.sizes, &self.coupling)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Nonzeros as CSV: `i_1,..,i_m,weight`.
    pub fn write_coupling_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.sizes.len()).map(|j| format!("i_{j}")).collect();
        writeln!(out, "{},weight", header.join(","))?;
        for e in &self.coupling {
            let cols: Vec<String> = e.indices.iter().map(usize::to_string).collect();
            writeln!(out, "{},{}", cols.join(","), fmt_float(e.weight))?;
        }
        Ok(())
    }
}

/// A coupling stored densely in flat tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    shape: ProductShape,
    weights: Vec<f64>,
}

impl Coupling {
    pub fn new(sizes: &[usize], weights: Vec<f64>) -> Result<Self> {
        let shape = ProductShape::new(sizes);
        if weights.len() != shape.total() {
            return Err(MsbError::ShapeMismatch(format!(
                "{} weights for shape {sizes:?}",
                weights.len()
            )));
        }
        Ok(Self { shape, weights })
    }

    pub fn from_sparse(sizes: &[usize], entries: &[CouplingEntry]) -> Self {
        let shape = ProductShape::new(sizes);
        let mut weights = vec![0.0; shape.total()];
        for e in entries {
            weights[shape.ravel(&e.indices)] += e.weight;
        }
        Self { shape, weights }
    }

    /// The product coupling `⊗ν_j`.
    pub fn product(marginals: &[DiscreteMeasure]) -> Self {
        let sizes: Vec<usize> = marginals.iter().map(DiscreteMeasure::len).collect();
        let shape = ProductShape::new(&sizes);
        let mut weights = Vec::with_capacity(shape.total());
        shape.for_each(|_, idx| {
            weights.push(idx.iter().enumerate().map(|(j, &i)| marginals[j].weights()[i]).product());
        });
        Self { shape, weights }
    }

    pub fn shape(&self) -> &ProductShape {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Marginal sums along every axis.
    pub fn marginal_sums(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.shape.dims().iter().map(|&n| vec![0.0; n]).collect();
        self.shape.for_each(|flat, idx| {
            for (j, &i) in idx.iter().enumerate() {
                out[j][i] += self.weights[flat];
            }
        });
        out
    }

    /// `KL(self ‖ ⊗ν_j)`.
    pub fn kl_to_product(&self, marginals: &[DiscreteMeasure]) -> f64 {
        let mut kl = 0.0;
        self.shape.for_each(|flat, idx| {
            let w = self.weights[flat];
            if w > 0.0 {
                let q: f64 = idx.iter().enumerate().map(|(j, &i)| marginals[j].weights()[i]).product();
                kl += w * (w / q).ln();
            }
        });
        kl
    }
}

/// Transport LP over the product of the marginal supports with the given
/// flat cost vector. The last constraint of every block after the first is
/// redundant and omitted, so the row count is `Σ N_j − m + 1`.
pub(crate) fn transport_lp(weights: &[&[f64]], cost: Vec<f64>) -> simplex::LpSolution {
    let sizes: Vec<usize> = weights.iter().map(|w| w.len()).collect();
    let shape = ProductShape::new(&sizes);
    let mut row_of: Vec<Vec<Option<usize>>> = Vec::with_capacity(sizes.len());
    let mut b = Vec::new();
    for (j, w) in weights.iter().enumerate() {
        let keep = if j == 0 { w.len() } else { w.len() - 1 };
        let mut rows = vec![None; w.len()];
        for (i, r) in rows.iter_mut().enumerate().take(keep) {
            *r = Some(b.len());
            b.push(w[i]);
        }
        row_of.push(rows);
    }
    let rows = b.len();
    let cols = shape.total();
    let mut a = vec![0.0; rows * cols];
    shape.for_each(|flat, idx| {
        for (j, &i) in idx.iter().enumerate() {
            if let Some(r) = row_of[j][i] {
                a[r * cols + flat] = 1.0;
            }
        }
    });
    simplex::solve(&StandardLp { rows, cols, a, b, c: cost })
}

/// Exact multimarginal OT `min ⟨c_α, π⟩` over couplings of the problem's
/// marginals (`ε` is ignored), within [`DEFAULT_LP_CAP`] variables.
pub fn exact_mot(problem: &Problem) -> Result<LpSolveReport> {
    exact_mot_with_cap(problem, DEFAULT_LP_CAP)
}

pub fn exact_mot_with_cap(problem: &Problem, lp_cap: usize) -> Result<LpSolveReport> {
    let (reduced, kept) = problem.strip_zero_atoms();
    let total = ProductShape::new(&reduced.sizes()).total();
    if total > lp_cap {
        return Err(MsbError::Capacity {
            what: "multimarginal LP".into(),
            needed: total,
            cap: lp_cap,
        });
    }
    let accessor = CostAccessor::with_cap(&reduced, usize::MAX);
    let shape = accessor.shape().clone();
    let mut cost = Vec::with_capacity(total);
    shape.for_each(|flat, idx| cost.push(accessor.get(flat, idx)));
    let weights: Vec<&[f64]> = reduced.marginals().iter().map(DiscreteMeasure::weights).collect();
    let sol = transport_lp(&weights, cost);
    let status = match sol.outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Infeasible => LpStatus::Infeasible,
    };
    let mut coupling = Vec::new();
    let mut idx = vec![0; shape.m()];
    for (flat, &x) in sol.x.iter().enumerate() {
        if x > 0.0 {
            shape.unravel(flat, &mut idx);
            coupling.push(CouplingEntry {
                indices: idx.iter().enumerate().map(|(j, &i)| kept[j][i]).collect(),
                weight: x,
            });
        }
    }
    Ok(LpSolveReport {
        status,
        value: sol.value,
        dual_value: sol.dual_value,
        min_reduced_cost: sol.min_reduced_cost,
        dual_multipliers: sol.dual,
        pivots: sol.pivots,
        sizes: problem.sizes(),
        coupling,
    })
}

/// `(T_α)_♯ π` for an LP coupling, consolidated.
pub fn exact_barycenter(problem: &Problem, report: &LpSolveReport) -> Result<DiscreteMeasure> {
    let d = problem.dim();
    let mut points = Vec::with_capacity(report.coupling.len());
    let mut weights = Vec::with_capacity(report.coupling.len());
    for e in &report.coupling {
        let mut y = vec![0.0; d];
        crate::cost::t_alpha_into(|j| problem.marginal(j).point(e.indices[j]), problem.alpha(), &mut y);
        points.push(y);
        weights.push(e.weight);
    }
    let (points, weights) =
        crate::measures::consolidate_atoms(points, weights, crate::barycenter::CONSOLIDATION_TOL);
    DiscreteMeasure::with_mass_tolerance(points, weights, 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::cost_alpha;

    #[test]
    fn dirac_marginals_have_single_index_coupling() {
        let p = Problem::new(
            vec![
                DiscreteMeasure::dirac(vec![0.5]).unwrap(),
                DiscreteMeasure::dirac(vec![-0.2]).unwrap(),
                DiscreteMeasure::dirac(vec![0.9]).unwrap(),
            ],
            vec![0.2, 0.3, 0.5],
            1.0,
        )
        .unwrap();
        let r = exact_mot(&p).unwrap();
        let c = cost_alpha(&[&[0.5], &[-0.2], &[0.9]], p.alpha()).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.value - c).abs() < 1e-15);
        assert_eq!(r.coupling, vec![CouplingEntry { indices: vec![0, 0, 0], weight: 1.0 }]);
    }

    #[test]
    fn identical_marginals_use_identity_coupling() {
        let mu = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let p = Problem::new(vec![mu.clone(), mu], vec![0.5, 0.5], 1.0).unwrap();
        let r = exact_mot(&p).unwrap();
        assert!(r.value.abs() < 1e-15);
        let c = r.to_coupling();
        assert!((c.weights()[0] - 0.5).abs() < 1e-15 && (c.weights()[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn report_invariants_on_random_instance() {
        let a = DiscreteMeasure::new(vec![vec![-0.9], vec![0.2], vec![0.5], vec![0.8]], vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        let b = DiscreteMeasure::new(vec![vec![-0.5], vec![0.0], vec![0.7]], vec![0.3, 0.3, 0.4]).unwrap();
        let c = DiscreteMeasure::new(vec![vec![0.3], vec![-0.1]], vec![0.55, 0.45]).unwrap();
        let p = Problem::new(vec![a, b, c], vec![0.2, 0.5, 0.3], 1.0).unwrap();
        let r = exact_mot(&p).unwrap();
        assert!(r.coupling.len() <= 4 + 3 + 2 - 3 + 1);
        assert!((r.value - r.dual_value).abs() <= 1e-10);
        assert!(r.min_reduced_cost >= -1e-10);
        let sums = r.to_coupling().marginal_sums();
        for (j, s) in sums.iter().enumerate() {
            for (x, w) in s.iter().zip(p.marginal(j).weights()) {
                assert!((x - w).abs() <= 1e-9);
            }
        }
        assert!(r.coupling.iter().all(|e| e.weight >= 0.0));
    }

    #[test]
    fn cap_is_enforced() {
        let mu = DiscreteMeasure::uniform((0..25).map(|i| vec![i as f64 / 25.0]).collect()).unwrap();
        let p = Problem::new(vec![mu.clone(), mu.clone(), mu], vec![0.3, 0.3, 0.4], 1.0).unwrap();
        assert!(matches!(exact_mot(&p), Err(MsbError::Capacity { cap: 10_000, .. })));
    }

    #[test]
    fn zero_weight_atoms_keep_original_indices() {
        let a = DiscreteMeasure::new(vec![vec![-0.5], vec![0.0], vec![0.5]], vec![0.5, 0.0, 0.5]).unwrap();
        let b = DiscreteMeasure::uniform(vec![vec![-0.4], vec![0.6]]).unwrap();
        let p = Problem::new(vec![a, b], vec![0.5, 0.5], 1.0).unwrap();
        let r = exact_mot(&p).unwrap();
        assert!(r.coupling.iter().all(|e| e.indices[0] != 1));
        assert_eq!(r.to_coupling().weights().len(), 6);
        let mut buf = Vec::new();
        r.write_coupling_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("i_1,i_2,weight\n"));
    }
}
