//! Pushforward of the entropic coupling through `T_α` and integration of
//! test functions against barycenters and couplings.

use serde::{Deserialize, Serialize};

use crate::cost::{cost_kernel, t_alpha_into};
use crate::error::{MsbError, Result};
use crate::measures::{consolidate_atoms, DiscreteMeasure, RawMeasure};
use crate::solver::Solution;

/// Atoms closer than this in every coordinate are merged.
pub const CONSOLIDATION_TOL: f64 = 1e-12;

/// Multi-indices enumerated by [`compute_barycenter`] and
/// [`coupling_expectation`] at most.
pub const ENUMERATION_CAP: usize = 20_000_000;

/// Mass tolerance for solver-produced measures.
pub const BARYCENTER_MASS_TOL: f64 = 1e-8;

/// `ν̄_ε = (T_α)_♯ π_ε` together with the instance it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarycenterMeasure {
    #[serde(flatten)]
    measure: RawMeasure,
    pub problem_hash: String,
    pub epsilon: f64,
    #[serde(skip)]
    inner: DiscreteMeasure,
}

impl BarycenterMeasure {
    pub fn measure(&self) -> &DiscreteMeasure {
        &self.inner
    }

    pub fn into_measure(self) -> DiscreteMeasure {
        self.inner
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_enumerable(sol: &Solution) -> Result<()> {
    let total = sol.kernel().shape().total();
    if total > ENUMERATION_CAP {
        return Err(MsbError::Capacity {
            what: "coupling enumeration".into(),
            needed: total,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Places mass `p · Π w` at `T_α(x_{i_1}, .., x_{i_m})` for every
/// multi-index. With `consolidate`, coincident atoms are merged and the
/// output is sorted; otherwise atoms follow flat tensor order.
pub fn compute_barycenter(sol: &Solution, consolidate: bool) -> Result<BarycenterMeasure> {
    if !sol.converged {
        return Err(MsbError::NotConverged(format!(
            "barycenter needs a converged solution (residual {:e})",
            sol.marginal_residual
        )));
    }
    check_enumerable(sol)?;
    let problem = sol.problem();
    let d = problem.dim();
    let alpha = problem.alpha();
    let total = sol.kernel().shape().total();
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut y = vec![0.0; d];
    sol.for_each_weight(|_, idx, w| {
        t_alpha_into(|j| problem.marginal(j).point(idx[j]), alpha, &mut y);
        points.push(y.clone());
        weights.push(w);
    });
    if consolidate {
        (points, weights) = consolidate_atoms(points, weights, CONSOLIDATION_TOL);
    }
    let inner = DiscreteMeasure::with_mass_tolerance(points, weights, BARYCENTER_MASS_TOL)?;
    Ok(BarycenterMeasure {
        measure: RawMeasure::from(inner.clone()),
        problem_hash: problem.content_hash(),
        epsilon: sol.epsilon,
        inner,
    })
}

/// Built-in test functions on `[-1, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    /// `Π_c x_c^{powers[c]}` with total degree at most 3.
    Monomial { powers: Vec<u32> },
    /// `cos(⟨k, x⟩ + b)`.
    Cosine { k: Vec<f64>, b: f64 },
    /// `clamp(slope · (⟨direction, x⟩ − offset), −clip, clip)`.
    Ramp {
        direction: Vec<f64>,
        offset: f64,
        slope: f64,
        clip: f64,
    },
}

impl Default for TestFunction {
    fn default() -> Self {
        TestFunction::Monomial { powers: vec![1] }
    }
}

impl TestFunction {
    /// The first coordinate, `h(x) = x_1`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut powers = vec![0; dim];
        powers[axis] = 1;
        TestFunction::Monomial { powers }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let len = match self {
            TestFunction::Constant { .. } => return Ok(()),
            TestFunction::Monomial { powers } => {
                if powers.iter().sum::<u32>() > 3 {
                    return Err(MsbError::validation("monomial degree must be at most 3"));
                }
                powers.len()
            }
            TestFunction::Cosine { k, .. } => k.len(),
            TestFunction::Ramp { direction, clip, .. } => {
                if !(*clip >= 0.0) {
                    return Err(MsbError::validation("ramp clip must be nonnegative"));
                }
                direction.len()
            }
        };
        if len != dim {
            return Err(MsbError::DimensionMismatch {
                expected: dim,
                got: len,
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::Monomial { powers } => x
                .iter()
                .zip(powers)
                .map(|(v, &k)| v.powi(k as i32))
                .product(),
            TestFunction::Cosine { k, b } => {
                let phase: f64 = k.iter().zip(x).map(|(a, v)| a * v).sum();
                (phase + b).cos()
            }
            TestFunction::Ramp {
                direction,
                offset,
                slope,
                clip,
            } => {
                let s: f64 = direction.iter().zip(x).map(|(a, v)| a * v).sum();
                (slope * (s - offset)).clamp(-clip, *clip)
            }
        }
    }
}

/// Observables of the joint coupling available from configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingFunction {
    /// `g = c_α`.
    #[default]
    Cost,
    /// `g = h ∘ T_α`.
    Pushforward { h: TestFunction },
}

/// `Σ w_i h(x_i)`.
pub fn integrate(measure: &DiscreteMeasure, h: &TestFunction) -> f64 {
    measure.integrate(|x| h.eval(x))
}

/// `∫ g dπ_ε = Σ_i g(x_{i_1}, .., x_{i_m}) · p(i) · Π w`.
pub fn coupling_expectation<G>(sol: &Solution, g: G) -> Result<f64>
where
    G: Fn(&[&[f64]]) -> f64,
{
    check_enumerable(sol)?;
    let problem = sol.problem();
    let m = problem.m();
    let mut acc = 0.0;
    let mut pts: Vec<&[f64]> = Vec::with_capacity(m);
    sol.for_each_weight(|_, idx, w| {
        pts.clear();
        pts.extend((0..m).map(|j| problem.marginal(j).point(idx[j])));
        acc += g(&pts) * w;
    });
    Ok(acc)
}

/// [`coupling_expectation`] for a built-in observable.
pub fn coupling_expectation_of(sol: &Solution, g: &CouplingFunction) -> Result<f64> {
    let alpha = sol.problem().alpha().to_vec();
    let d = sol.problem().dim();
    match g {
        CouplingFunction::Cost => coupling_expectation(sol, |x| cost_kernel(|j| x[j], &alpha)),
        CouplingFunction::Pushforward { h } => {
            h.validate(d)?;
            coupling_expectation(sol, |x| {
                let mut y = vec![0.0; d];
                t_alpha_into(|j| x[j], &alpha, &mut y);
                h.eval(&y)
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Problem;
    use crate::solver::sinkhorn_solve;
    use std::collections::BTreeMap;

    fn dirac_problem() -> Problem {
        Problem::new(
            vec![
                DiscreteMeasure::dirac(vec![0.8]).unwrap(),
                DiscreteMeasure::dirac(vec![-0.4]).unwrap(),
            ],
            vec![0.25, 0.75],
            0.5,
        )
        .unwrap()
    }

    fn small_problem(alpha: Vec<f64>, eps: f64) -> Problem {
        let a = DiscreteMeasure::new(vec![vec![-0.7], vec![0.1], vec![0.6]], vec![0.2, 0.5, 0.3]).unwrap();
        let b = DiscreteMeasure::new(vec![vec![-0.3], vec![0.4], vec![0.9]], vec![0.4, 0.35, 0.25]).unwrap();
        Problem::new(vec![a, b], alpha, eps).unwrap()
    }

    #[test]
    fn dirac_barycenter_is_dirac_at_weighted_mean() {
        let sol = sinkhorn_solve(&dirac_problem(), 1e-9, 10, None).unwrap();
        let bar = compute_barycenter(&sol, true).unwrap();
        let mean = 0.25 * 0.8 + 0.75 * -0.4;
        assert_eq!(bar.measure().len(), 1);
        assert!((bar.measure().point(0)[0] - mean).abs() < 1e-15);
        let sq = TestFunction::Monomial { powers: vec![2] };
        assert!((integrate(bar.measure(), &sq) - mean * mean).abs() < 1e-12);
    }

    #[test]
    fn integrate_basics() {
        let mu = DiscreteMeasure::dirac(vec![0.4]).unwrap();
        assert_eq!(integrate(&mu, &TestFunction::Constant { value: 1.0 }), 1.0);
        assert_eq!(integrate(&mu, &TestFunction::coordinate(1, 0)), 0.4);
    }

    #[test]
    fn one_hot_alpha_reproduces_marginal() {
        let sol = sinkhorn_solve(&small_problem(vec![1.0, 0.0], 0.5), 1e-12, 10_000, None).unwrap();
        let bar = compute_barycenter(&sol, true).unwrap();
        let marg = sol.problem().marginal(0);
        assert_eq!(bar.measure().points(), marg.points());
        for (a, b) in bar.measure().weights().iter().zip(marg.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_match_brute_force_pushforward() {
        let p = small_problem(vec![0.5, 0.5], 0.3);
        let sol = sinkhorn_solve(&p, 1e-10, 10_000, None).unwrap();
        // Brute force: density from the potentials, grouped by image bits.
        let f = &sol.potentials;
        let mut groups: BTreeMap<u64, f64> = BTreeMap::new();
        for i in 0..3 {
            for k in 0..3 {
                let x = p.marginal(0).point(i)[0];
                let y = p.marginal(1).point(k)[0];
                let c = (0.5 * x - 0.5 * y).powi(2);
                let dens = ((f.component(0)[i] + f.component(1)[k] - c) / 0.3).exp();
                let w = dens * p.marginal(0).weights()[i] * p.marginal(1).weights()[k];
                *groups.entry((0.5 * x + 0.5 * y).to_bits()).or_default() += w;
            }
        }
        let bar = compute_barycenter(&sol, true).unwrap();
        assert_eq!(bar.measure().len(), groups.len());
        for (x, w) in bar.measure().points().iter().zip(bar.measure().weights()) {
            let expect = groups[&x[0].to_bits()];
            assert!((w - expect).abs() < 1e-14);
        }
        let unmerged = compute_barycenter(&sol, false).unwrap();
        assert_eq!(unmerged.measure().len(), 9);
    }

    #[test]
    fn pushforward_identity_for_builtin_functions() {
        let third = 1.0 / 3.0;
        let a = DiscreteMeasure::uniform(vec![vec![-0.5, 0.2], vec![0.3, 0.9]]).unwrap();
        let b = DiscreteMeasure::uniform(vec![vec![0.1, -0.8], vec![0.6, 0.0], vec![-0.9, 0.4]]).unwrap();
        let c = DiscreteMeasure::uniform(vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.7, -0.2]]).unwrap();
        let p = Problem::new(vec![a, b, c], vec![third, third, third], 0.2).unwrap();
        let sol = sinkhorn_solve(&p, 1e-10, 10_000, None).unwrap();
        let bar = compute_barycenter(&sol, true).unwrap();
        let fns = [
            TestFunction::Constant { value: 2.5 },
            TestFunction::Monomial { powers: vec![2, 1] },
            TestFunction::Cosine { k: vec![3.0, -1.0], b: 0.3 },
            TestFunction::Ramp { direction: vec![1.0, 1.0], offset: 0.1, slope: 2.0, clip: 0.5 },
        ];
        for h in fns {
            let via_bar = integrate(bar.measure(), &h);
            let via_pi = coupling_expectation_of(&sol, &CouplingFunction::Pushforward { h: h.clone() }).unwrap();
            assert!((via_bar - via_pi).abs() <= 1e-10, "{h:?}: {via_bar} vs {via_pi}");
        }
        assert!((coupling_expectation(&sol, |_| 1.0).unwrap() - 1.0).abs() <= 1e-8);
        assert!((bar.measure().total_mass() - 1.0).abs() <= 1e-8);
        assert!(bar.measure().points().iter().flatten().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn cost_expectation_matches_primal_decomposition() {
        let sol = sinkhorn_solve(&small_problem(vec![0.3, 0.7], 0.4), 1e-10, 10_000, None).unwrap();
        let cost = coupling_expectation_of(&sol, &CouplingFunction::Cost).unwrap();
        assert!((cost - (sol.primal_value - sol.epsilon * sol.kl_divergence)).abs() < 1e-12);
    }

    #[test]
    fn unconverged_solution_rejected() {
        let sol = sinkhorn_solve(&small_problem(vec![0.5, 0.5], 0.01), 1e-15, 1, None).unwrap();
        assert!(matches!(compute_barycenter(&sol, true), Err(MsbError::NotConverged(_))));
    }

    #[test]
    fn test_function_validation() {
        assert!(TestFunction::Monomial { powers: vec![2, 2] }.validate(2).is_err());
        assert!(TestFunction::coordinate(2, 1).validate(1).is_err());
        assert!(TestFunction::Constant { value: 1.0 }.validate(7).is_ok());
    }

    #[test]
    fn barycenter_json_has_measure_schema_and_provenance() {
        let sol = sinkhorn_solve(&dirac_problem(), 1e-9, 10, None).unwrap();
        let bar = compute_barycenter(&sol, true).unwrap();
        let v: serde_json::Value = serde_json::from_str(&bar.to_json().unwrap()).unwrap();
        assert!(v["points"].is_array() && v["weights"].is_array());
        assert_eq!(v["problem_hash"].as_str().unwrap().len(), 64);
        assert_eq!(v["epsilon"], 0.5);
    }
}
