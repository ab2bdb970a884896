//! The barycentric cost `c_α(x_1..x_m) = Σ_{i<j} |α_i x_i − α_j x_j|²`, the
//! barycentric map `T_α(x) = Σ α_j x_j`, and cost-tensor materialization.
//!
//! Multi-indices `(i_1, .., i_m)` are flattened row-major with marginal 1
//! slowest; [`ProductShape`] owns that layout.

use std::io::Write;

use crate::error::{MsbError, Result};
use crate::measures::Problem;
use crate::{fmt_float, DEFAULT_TENSOR_CAP};

/// Row-major layout of the product index set `[N_1] × .. × [N_m]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductShape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl ProductShape {
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![0; dims.len()];
        let mut acc: usize = 1;
        for j in (0..dims.len()).rev() {
            strides[j] = acc;
            acc = acc.saturating_mul(dims[j]);
        }
        Self {
            dims: dims.to_vec(),
            strides,
            total: acc,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn m(&self) -> usize {
        self.dims.len()
    }

    /// `Π N_j`, saturating at `usize::MAX`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unravel(&self, mut flat: usize, idx: &mut [usize]) {
        for (j, &s) in self.strides.iter().enumerate() {
            idx[j] = flat / s;
            flat %= s;
        }
    }

    /// Visits every multi-index in flat order.
    pub fn for_each<F: FnMut(usize, &[usize])>(&self, mut visit: F) {
        let m = self.dims.len();
        if self.dims.iter().any(|&n| n == 0) {
            return;
        }
        let mut idx = vec![0usize; m];
        for flat in 0..self.total {
            visit(flat, &idx);
            for j in (0..m).rev() {
                idx[j] += 1;
                if idx[j] < self.dims[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
    }
}

fn check_dims(points: &[&[f64]], alpha: &[f64]) -> Result<()> {
    if points.len() != alpha.len() {
        return Err(MsbError::ShapeMismatch(format!(
            "{} points but {} weights",
            points.len(),
            alpha.len()
        )));
    }
    if let Some(first) = points.first() {
        let d = first.len();
        if let Some(bad) = points.iter().find(|x| x.len() != d) {
            return Err(MsbError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
    }
    Ok(())
}

/// Unchecked cost kernel. Pairs are visited `(0,1), (0,2), .., (m-2,m-1)`,
/// coordinates innermost, into one running sum; every caller goes through
/// here so dense and lazy evaluation agree bit for bit.
#[inline]
pub(crate) fn cost_kernel<'a, P>(points: P, alpha: &[f64]) -> f64
where
    P: Fn(usize) -> &'a [f64],
{
    let m = alpha.len();
    let mut acc = 0.0;
    for i in 0..m {
        let xi = points(i);
        for j in (i + 1)..m {
            let xj = points(j);
            for (a, b) in xi.iter().zip(xj) {
                let diff = alpha[i] * a - alpha[j] * b;
                acc += diff * diff;
            }
        }
    }
    acc
}

pub fn cost_alpha(points: &[&[f64]], alpha: &[f64]) -> Result<f64> {
    check_dims(points, alpha)?;
    Ok(cost_kernel(|i| points[i], alpha))
}

pub fn t_alpha(points: &[&[f64]], alpha: &[f64]) -> Result<Vec<f64>> {
    check_dims(points, alpha)?;
    let d = points.first().map_or(0, |x| x.len());
    let mut out = vec![0.0; d];
    t_alpha_into(|j| points[j], alpha, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn t_alpha_into<'a, P>(points: P, alpha: &[f64], out: &mut [f64])
where
    P: Fn(usize) -> &'a [f64],
{
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &a) in alpha.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(points(j)) {
            *o += a * x;
        }
    }
    // Σα_j = 1 only up to rounding; keep the image inside the domain.
    out.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
}

/// Upper bound on `c_α` over `([-1,1]^d)^m`: `2 d (m − 1) Σ α_i²`.
///
/// Each pair satisfies `|α_i x_i − α_j x_j|² ≤ d (α_i + α_j)² ≤ 2d(α_i² + α_j²)`
/// and every `α_i²` occurs in `m − 1` pairs.
pub fn cost_sup_bound(alpha: &[f64], d: usize) -> f64 {
    let m = alpha.len();
    if m < 2 {
        return 0.0;
    }
    let sq: f64 = alpha.iter().map(|a| a * a).sum();
    2.0 * d as f64 * (m - 1) as f64 * sq
}

/// The bound printed alongside the cost-rate argument, `2 m Σ α_i²`. Kept for
/// reporting only; it drops the dimension factor and is not asserted.
pub fn cost_sup_bound_reported(alpha: &[f64]) -> f64 {
    let sq: f64 = alpha.iter().map(|a| a * a).sum();
    2.0 * alpha.len() as f64 * sq
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Lazy,
}

/// Access to `c_α` on the product of the marginal supports, either as a
/// materialized tensor or recomputed per index.
#[derive(Debug, Clone)]
pub struct CostAccessor {
    points: Vec<Vec<Vec<f64>>>,
    alpha: Vec<f64>,
    shape: ProductShape,
    storage: Storage,
}

impl CostAccessor {
    /// Dense when `Π N_j ≤ DEFAULT_TENSOR_CAP`, lazy otherwise.
    pub fn new(problem: &Problem) -> Self {
        Self::with_cap(problem, DEFAULT_TENSOR_CAP)
    }

    pub fn with_cap(problem: &Problem, tensor_cap: usize) -> Self {
        let mut acc = Self::lazy(problem);
        if acc.shape.total() <= tensor_cap {
            let mut dense = Vec::with_capacity(acc.shape.total());
            acc.shape.for_each(|_, idx| dense.push(acc.eval(idx)));
            acc.storage = Storage::Dense(dense);
        }
        acc
    }

    pub fn lazy(problem: &Problem) -> Self {
        let points = problem
            .marginals()
            .iter()
            .map(|mu| mu.points().to_vec())
            .collect();
        Self {
            points,
            alpha: problem.alpha().to_vec(),
            shape: ProductShape::new(&problem.sizes()),
            storage: Storage::Lazy,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn shape(&self) -> &ProductShape {
        &self.shape
    }

    #[inline]
    fn eval(&self, idx: &[usize]) -> f64 {
        cost_kernel(|j| &self.points[j][idx[j]], &self.alpha)
    }

    /// Cost at a multi-index; `flat` must equal `shape().ravel(idx)`.
    #[inline]
    pub fn get(&self, flat: usize, idx: &[usize]) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[flat],
            Storage::Lazy => self.eval(idx),
        }
    }

    pub fn at(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.shape.m() || idx.iter().zip(self.shape.dims()).any(|(i, n)| i >= n) {
            return Err(MsbError::IndexOutOfRange(format!("{idx:?} for shape {:?}", self.shape.dims())));
        }
        Ok(self.get(self.shape.ravel(idx), idx))
    }

    /// `max c_α` over the product support.
    pub fn sup(&self) -> f64 {
        let mut best = 0.0f64;
        self.shape.for_each(|flat, idx| best = best.max(self.get(flat, idx)));
        best
    }

    /// CSV dump: header `i_1,..,i_m,cost`, one row per multi-index in flat
    /// order, zero-based indices.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.shape.m();
        let header: Vec<String> = (1..=m).map(|j| format!("i_{j}")).collect();
        writeln!(out, "{},cost", header.join(","))?;
        let mut result = Ok(());
        self.shape.for_each(|flat, idx| {
            if result.is_err() {
                return;
            }
            let cols: Vec<String> = idx.iter().map(usize::to_string).collect();
            result = writeln!(out, "{},{}", cols.join(","), fmt_float(self.get(flat, idx)));
        });
        result
    }
}
