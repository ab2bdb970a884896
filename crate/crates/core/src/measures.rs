//! Finitely supported probability measures on `[-1, 1]^d`, population
//! descriptions, and reproducible i.i.d. sampling.
//!
//! # Sampling rule
//!
//! [`sample_empirical`] seeds a `Xoshiro256++` generator with
//! `Xoshiro256PlusPlus::seed_from_u64(seed)` (the SplitMix64 state expansion
//! of `rand_xoshiro`). Each draw takes one `u64`, maps it to
//! `u = (x >> 11) * 2^-53` in `[0, 1)`, and returns the first population atom
//! `k` (in input order) whose cumulative probability exceeds `u`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use crate::error::{MsbError, Result};

/// Tolerance on the total mass of a user-supplied measure.
pub const MASS_TOL: f64 = 1e-12;

/// JSON form of a measure: `{"points": [[...]], "weights": [...]}`.
///
/// This is the unvalidated wire type; [`DiscreteMeasure`] is built from it
/// through [`TryFrom`], which runs [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeasure {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// First invariant a candidate measure breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    LengthMismatch { points: usize, weights: usize },
    ZeroDimension,
    RaggedPoint { index: usize, dim: usize, expected: usize },
    NonFinite { index: usize },
    OutOfDomain { index: usize, coord: usize, value: f64 },
    NegativeWeight { index: usize, value: f64 },
    MassNotOne { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "measure has no atoms"),
            Violation::LengthMismatch { points, weights } => {
                write!(f, "{points} points but {weights} weights")
            }
            Violation::ZeroDimension => write!(f, "points have dimension 0"),
            Violation::RaggedPoint {
                index,
                dim,
                expected,
            } => write!(f, "point {index} has dimension {dim}, expected {expected}"),
            Violation::NonFinite { index } => write!(f, "atom {index} has a NaN or infinite value"),
            Violation::OutOfDomain { index, coord, value } => write!(
                f,
                "point {index} coordinate {coord} = {value} is outside [-1, 1]"
            ),
            Violation::NegativeWeight { index, value } => {
                write!(f, "weight {index} = {value} is negative")
            }
            Violation::MassNotOne { sum } => write!(f, "weights sum to {sum}, not 1"),
        }
    }
}

/// Checks every measure invariant with the default mass tolerance and reports
/// the first violation.
pub fn validate(raw: &RawMeasure) -> std::result::Result<(), Violation> {
    validate_parts(&raw.points, &raw.weights, MASS_TOL)
}

fn validate_parts(
    points: &[Vec<f64>],
    weights: &[f64],
    mass_tol: f64,
) -> std::result::Result<(), Violation> {
    if points.is_empty() {
        return Err(Violation::Empty);
    }
    if points.len() != weights.len() {
        return Err(Violation::LengthMismatch {
            points: points.len(),
            weights: weights.len(),
        });
    }
    let d = points[0].len();
    if d == 0 {
        return Err(Violation::ZeroDimension);
    }
    for (i, (x, &w)) in points.iter().zip(weights).enumerate() {
        if x.len() != d {
            return Err(Violation::RaggedPoint {
                index: i,
                dim: x.len(),
                expected: d,
            });
        }
        if !w.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Violation::NonFinite { index: i });
        }
        if let Some((c, &v)) = x.iter().enumerate().find(|(_, v)| v.abs() > 1.0) {
            return Err(Violation::OutOfDomain {
                index: i,
                coord: c,
                value: v,
            });
        }
        if w < 0.0 {
            return Err(Violation::NegativeWeight { index: i, value: w });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > mass_tol {
        return Err(Violation::MassNotOne { sum });
    }
    Ok(())
}

/// A weighted point cloud in `[-1, 1]^d` with total mass one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::with_mass_tolerance(points, weights, MASS_TOL)
    }

    /// Like [`DiscreteMeasure::new`] but with a looser mass check, for
    /// measures produced by an iterative solver.
    pub fn with_mass_tolerance(
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
        mass_tol: f64,
    ) -> Result<Self> {
        validate_parts(&points, &weights, mass_tol).map_err(|v| MsbError::Validation(v.to_string()))?;
        Ok(Self { points, weights })
    }

    /// Dirac mass at `x`.
    pub fn dirac(x: Vec<f64>) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    /// Uniform weights on the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        let w = vec![1.0 / n as f64; points.len()];
        Self::with_mass_tolerance(points, w, 1e-12)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `∫ h dμ = Σ w_i h(x_i)`.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, h: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, &w)| w * h(x))
            .sum()
    }

    /// Merges atoms whose coordinates agree within `tol`; see
    /// [`consolidate_atoms`] for the ordering rule.
    pub fn consolidated(&self, tol: f64) -> Self {
        let (points, weights) = consolidate_atoms(self.points.clone(), self.weights.clone(), tol);
        Self { points, weights }
    }

    /// Indices of atoms with strictly positive weight.
    pub fn support_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub(crate) fn restrict(&self, keep: &[usize]) -> Self {
        Self {
            points: keep.iter().map(|&i| self.points[i].clone()).collect(),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        Self { points, weights }
    }
}

/// Sorts atoms lexicographically (coordinate-wise `total_cmp`) and merges
/// each atom into the preceding group when every coordinate lies within `tol`
/// of the group's first atom. Output is in sorted order.
pub fn consolidate_atoms(
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    tol: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out_points: Vec<Vec<f64>> = Vec::new();
    let mut out_weights: Vec<f64> = Vec::new();
    for i in order {
        let merge = out_points
            .last()
            .is_some_and(|rep| rep.iter().zip(&points[i]).all(|(a, b)| (a - b).abs() <= tol));
        if merge {
            *out_weights.last_mut().expect("group exists") += weights[i];
        } else {
            out_points.push(points[i].clone());
            out_weights.push(weights[i]);
        }
    }
    (out_points, out_weights)
}

impl TryFrom<RawMeasure> for DiscreteMeasure {
    type Error = MsbError;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        DiscreteMeasure::new(raw.points, raw.weights)
    }
}

impl From<DiscreteMeasure> for RawMeasure {
    fn from(m: DiscreteMeasure) -> Self {
        RawMeasure {
            points: m.points,
            weights: m.weights,
        }
    }
}

/// A finitely supported population distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    /// Explicit atoms with probabilities, using the measure JSON keys.
    FiniteAtoms {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// Uniform law on the tensor grid with `atoms_per_axis` equispaced nodes
    /// per axis spanning `[-1, 1]` (a single node sits at 0). Atoms are
    /// listed with the first axis slowest.
    UniformGrid { dim: usize, atoms_per_axis: usize },
    /// Product of `dim` independent two-point laws on `{low, high}` with
    /// `P(high) = p_high`. Atom `k` has coordinate `c` equal to `high` iff
    /// bit `dim - 1 - c` of `k` is set.
    TwoPoint {
        dim: usize,
        low: f64,
        high: f64,
        p_high: f64,
    },
}

impl PopulationSpec {
    pub fn dim(&self) -> usize {
        match self {
            PopulationSpec::FiniteAtoms { points, .. } => points.first().map_or(0, Vec::len),
            PopulationSpec::UniformGrid { dim, .. } | PopulationSpec::TwoPoint { dim, .. } => *dim,
        }
    }

    /// The population as an explicit measure; fails if the description is invalid.
    pub fn measure(&self) -> Result<DiscreteMeasure> {
        match self {
            PopulationSpec::FiniteAtoms { points, weights } => {
                DiscreteMeasure::new(points.clone(), weights.clone())
            }
            &PopulationSpec::UniformGrid {
                dim,
                atoms_per_axis,
            } => {
                if dim == 0 || atoms_per_axis == 0 {
                    return Err(MsbError::validation(
                        "uniform grid needs dim >= 1 and atoms_per_axis >= 1",
                    ));
                }
                let nodes: Vec<f64> = if atoms_per_axis == 1 {
                    vec![0.0]
                } else {
                    let step = 2.0 / (atoms_per_axis - 1) as f64;
                    (0..atoms_per_axis).map(|i| -1.0 + step * i as f64).collect()
                };
                let total = atoms_per_axis.checked_pow(dim as u32).ok_or(MsbError::Capacity {
                    what: "uniform grid".into(),
                    needed: usize::MAX,
                    cap: crate::DEFAULT_TENSOR_CAP,
                })?;
                let points = (0..total)
                    .map(|mut k| {
                        let mut x = vec![0.0; dim];
                        for c in (0..dim).rev() {
                            x[c] = nodes[k % atoms_per_axis];
                            k /= atoms_per_axis;
                        }
                        x
                    })
                    .collect();
                DiscreteMeasure::uniform(points)
            }
            &PopulationSpec::TwoPoint {
                dim,
                low,
                high,
                p_high,
            } => {
                if dim == 0 || dim > 16 {
                    return Err(MsbError::validation("two-point product needs 1 <= dim <= 16"));
                }
                if !(0.0..=1.0).contains(&p_high) {
                    return Err(MsbError::validation(format!("p_high = {p_high} not in [0, 1]")));
                }
                let mut points = Vec::with_capacity(1 << dim);
                let mut weights = Vec::with_capacity(1 << dim);
                for k in 0..(1usize << dim) {
                    let mut x = vec![0.0; dim];
                    let mut w = 1.0;
                    for (c, xc) in x.iter_mut().enumerate() {
                        if k >> (dim - 1 - c) & 1 == 1 {
                            *xc = high;
                            w *= p_high;
                        } else {
                            *xc = low;
                            w *= 1.0 - p_high;
                        }
                    }
                    points.push(x);
                    weights.push(w);
                }
                DiscreteMeasure::with_mass_tolerance(points, weights, 1e-12)
            }
        }
    }
}

/// How repeated draws of the same atom are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Duplicates {
    /// One atom per distinct population atom, weight `count / N`, in
    /// population order.
    #[default]
    Consolidate,
    /// One atom per draw, weight `1 / N`, in draw order.
    Keep,
}

/// Draws `n` i.i.d. samples from `pop` and returns their empirical measure
/// with duplicates consolidated.
pub fn sample_empirical(pop: &PopulationSpec, n: usize, seed: u64) -> Result<DiscreteMeasure> {
    sample_empirical_with(pop, n, seed, Duplicates::Consolidate)
}

pub fn sample_empirical_with(
    pop: &PopulationSpec,
    n: usize,
    seed: u64,
    duplicates: Duplicates,
) -> Result<DiscreteMeasure> {
    let population = pop.measure()?;
    sample_from_measure(&population, n, seed, duplicates)
}

/// Sampling core shared with the experiments, which hold the population as
/// an explicit measure.
pub fn sample_from_measure(
    population: &DiscreteMeasure,
    n: usize,
    seed: u64,
    duplicates: Duplicates,
) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(MsbError::validation("sample size N must be >= 1"));
    }
    let mut cdf = Vec::with_capacity(population.len());
    let mut acc = 0.0;
    for &w in population.weights() {
        acc += w;
        cdf.push(acc);
    }
    let last_positive = population
        .weights()
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("validated measure has positive mass");

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let k = cdf.iter().position(|&c| u < c).unwrap_or(last_positive);
        draws.push(k);
    }

    let inv_n = 1.0 / n as f64;
    let measure = match duplicates {
        Duplicates::Keep => DiscreteMeasure::from_parts_unchecked(
            draws.iter().map(|&k| population.point(k).to_vec()).collect(),
            vec![inv_n; n],
        ),
        Duplicates::Consolidate => {
            let mut counts = vec![0usize; population.len()];
            for &k in &draws {
                counts[k] += 1;
            }
            let keep: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
            DiscreteMeasure::from_parts_unchecked(
                keep.iter().map(|&k| population.point(k).to_vec()).collect(),
                keep.iter().map(|&k| counts[k] as f64 * inv_n).collect(),
            )
        }
    };
    Ok(measure)
}

/// JSON form of a [`Problem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawProblem {
    pub marginals: Vec<RawMeasure>,
    pub alpha: Vec<f64>,
    pub epsilon: f64,
}

/// An entropic multimarginal barycenter instance: `m` marginals, barycentric
/// weights `alpha` and regularization `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct Problem {
    marginals: Vec<DiscreteMeasure>,
    alpha: Vec<f64>,
    epsilon: f64,
}

impl Problem {
    pub fn new(marginals: Vec<DiscreteMeasure>, alpha: Vec<f64>, epsilon: f64) -> Result<Self> {
        if marginals.is_empty() {
            return Err(MsbError::validation("problem needs at least one marginal"));
        }
        if alpha.len() != marginals.len() {
            return Err(MsbError::validation(format!(
                "{} marginals but {} alpha weights",
                marginals.len(),
                alpha.len()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(MsbError::validation("alpha weights must be finite and nonnegative"));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(MsbError::validation(format!("alpha sums to {sum}, not 1")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(MsbError::validation(format!("epsilon = {epsilon} must be positive")));
        }
        let d = marginals[0].dim();
        if let Some(bad) = marginals.iter().find(|mu| mu.dim() != d) {
            return Err(MsbError::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self {
            marginals,
            alpha,
            epsilon,
        })
    }

    pub fn marginals(&self) -> &[DiscreteMeasure] {
        &self.marginals
    }

    pub fn marginal(&self, j: usize) -> &DiscreteMeasure {
        &self.marginals[j]
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn m(&self) -> usize {
        self.marginals.len()
    }

    pub fn dim(&self) -> usize {
        self.marginals[0].dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.marginals.iter().map(DiscreteMeasure::len).collect()
    }

    /// Same marginals and weights at a different regularization.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.marginals.clone(), self.alpha.clone(), epsilon)
    }

    /// Drops zero-weight atoms. Returns the reduced problem and, per
    /// marginal, the original index of every kept atom.
    pub fn strip_zero_atoms(&self) -> (Problem, Vec<Vec<usize>>) {
        let kept: Vec<Vec<usize>> = self.marginals.iter().map(|mu| mu.support_indices()).collect();
        let marginals = self
            .marginals
            .iter()
            .zip(&kept)
            .map(|(mu, keep)| mu.restrict(keep))
            .collect();
        (
            Problem {
                marginals,
                alpha: self.alpha.clone(),
                epsilon: self.epsilon,
            },
            kept,
        )
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("problem serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

impl TryFrom<RawProblem> for Problem {
    type Error = MsbError;

    fn try_from(raw: RawProblem) -> Result<Self> {
        let marginals = raw
            .marginals
            .into_iter()
            .enumerate()
            .map(|(j, r)| {
                DiscreteMeasure::try_from(r)
                    .map_err(|e| MsbError::validation(format!("marginal {j}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Problem::new(marginals, raw.alpha, raw.epsilon)
    }
}

impl From<Problem> for RawProblem {
    fn from(p: Problem) -> Self {
        RawProblem {
            marginals: p.marginals.into_iter().map(RawMeasure::from).collect(),
            alpha: p.alpha,
            epsilon: p.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_atoms() -> PopulationSpec {
        PopulationSpec::FiniteAtoms {
            points: vec![vec![-1.0], vec![1.0]],
            weights: vec![0.5, 0.5],
        }
    }

    #[test]
    fn validate_reports_first_violation() {
        let ok = RawMeasure {
            points: vec![vec![0.1], vec![-0.2]],
            weights: vec![0.5, 0.5],
        };
        assert_eq!(validate(&ok), Ok(()));

        let heavy = RawMeasure {
            weights: vec![0.6, 0.6],
            ..ok.clone()
        };
        assert!(matches!(validate(&heavy), Err(Violation::MassNotOne { .. })));

        let outside = RawMeasure {
            points: vec![vec![1.5], vec![0.0]],
            ..ok.clone()
        };
        assert!(matches!(
            validate(&outside),
            Err(Violation::OutOfDomain { index: 0, .. })
        ));

        let nan = RawMeasure {
            points: vec![vec![f64::NAN], vec![0.0]],
            ..ok.clone()
        };
        assert!(matches!(validate(&nan), Err(Violation::NonFinite { index: 0 })));

        let empty = RawMeasure {
            points: vec![],
            weights: vec![],
        };
        assert_eq!(validate(&empty), Err(Violation::Empty));
    }

    #[test]
    fn single_atom_population_consolidates_to_dirac() {
        let pop = PopulationSpec::FiniteAtoms {
            points: vec![vec![0.3]],
            weights: vec![1.0],
        };
        let mu = sample_empirical(&pop, 5, 11).unwrap();
        assert_eq!(mu.points(), &[vec![0.3]]);
        assert_eq!(mu.weights(), &[1.0]);
    }

    #[test]
    fn two_point_weights_concentrate() {
        let n = 10_000;
        let mu = sample_empirical(&two_atoms(), n, 2024).unwrap();
        let band = 4.0 * (0.25 / n as f64).sqrt();
        assert_eq!(mu.len(), 2);
        for &w in mu.weights() {
            assert!((w - 0.5).abs() <= band, "weight {w} outside 0.5 ± {band}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_empirical_with(&two_atoms(), 64, 7, Duplicates::Keep).unwrap();
        let b = sample_empirical_with(&two_atoms(), 64, 7, Duplicates::Keep).unwrap();
        let c = sample_empirical_with(&two_atoms(), 64, 8, Duplicates::Keep).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(sample_empirical(&two_atoms(), 0, 1).is_err());
    }

    #[test]
    fn uniform_grid_and_two_point_populations() {
        let grid = PopulationSpec::UniformGrid {
            dim: 2,
            atoms_per_axis: 3,
        }
        .measure()
        .unwrap();
        assert_eq!(grid.len(), 9);
        assert_eq!(grid.point(0), &[-1.0, -1.0]);
        assert_eq!(grid.point(5), &[0.0, 1.0]);

        let tp = PopulationSpec::TwoPoint {
            dim: 2,
            low: -0.5,
            high: 0.5,
            p_high: 0.25,
        }
        .measure()
        .unwrap();
        assert_eq!(tp.point(1), &[-0.5, 0.5]);
        assert!((tp.weights()[3] - 0.0625).abs() < 1e-15);
        assert!((tp.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn population_json_schema() {
        let json = r#"{"kind":"finite_atoms","points":[[0.0],[0.5]],"weights":[0.25,0.75]}"#;
        let pop: PopulationSpec = serde_json::from_str(json).unwrap();
        assert_eq!(pop.measure().unwrap().weights(), &[0.25, 0.75]);
        let mu: DiscreteMeasure = serde_json::from_str(r#"{"points":[[0.5]],"weights":[1.0]}"#).unwrap();
        assert_eq!(serde_json::to_string(&mu).unwrap(), r#"{"points":[[0.5]],"weights":[1.0]}"#);
        assert!(serde_json::from_str::<DiscreteMeasure>(r#"{"points":[[2.0]],"weights":[1.0]}"#).is_err());
    }

    #[test]
    fn problem_rejects_bad_alpha_and_epsilon() {
        let mu = DiscreteMeasure::dirac(vec![0.0]).unwrap();
        assert!(Problem::new(vec![mu.clone(), mu.clone()], vec![0.5, 0.6], 1.0).is_err());
        assert!(Problem::new(vec![mu.clone(), mu.clone()], vec![0.5, 0.5], 0.0).is_err());
        assert!(Problem::new(vec![mu.clone()], vec![0.5, 0.5], 1.0).is_err());
        let mu2 = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            Problem::new(vec![mu, mu2], vec![0.5, 0.5], 1.0),
            Err(MsbError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn strip_zero_atoms_keeps_index_map() {
        let mu = DiscreteMeasure::new(vec![vec![0.0], vec![0.5], vec![1.0]], vec![0.5, 0.0, 0.5]).unwrap();
        let p = Problem::new(vec![mu.clone(), mu], vec![0.5, 0.5], 1.0).unwrap();
        let (q, kept) = p.strip_zero_atoms();
        assert_eq!(kept, vec![vec![0, 2], vec![0, 2]]);
        assert_eq!(q.sizes(), vec![2, 2]);
    }

    proptest! {
        #[test]
        fn sampled_mass_is_one(n in 1usize..500, seed in any::<u64>(), k in 1usize..6) {
            let pop = PopulationSpec::UniformGrid { dim: 1, atoms_per_axis: k };
            for dup in [Duplicates::Consolidate, Duplicates::Keep] {
                let mu = sample_empirical_with(&pop, n, seed, dup).unwrap();
                prop_assert!((mu.total_mass() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn consolidation_preserves_integrals(n in 1usize..300, seed in any::<u64>(), freq in -3.0f64..3.0) {
            let pop = PopulationSpec::UniformGrid { dim: 1, atoms_per_axis: 4 };
            let a = sample_empirical_with(&pop, n, seed, Duplicates::Consolidate).unwrap();
            let b = sample_empirical_with(&pop, n, seed, Duplicates::Keep).unwrap();
            let h = |x: &[f64]| (freq * x[0]).cos();
            prop_assert!((a.integrate(h) - b.integrate(h)).abs() <= 1e-12);
        }
    }
}
