use crate::error::{MsbError, Result};
use crate::measures::DiscreteMeasure;
use crate::DEFAULT_LP_CAP;

use super::simplex::Outcome;
use super::transport_lp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WassersteinOrder {
    One,
    Two,
}

impl WassersteinOrder {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(MsbError::validation(format!("p = {p}; only p in {{1, 2}} is supported"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }

    /// `‖x − y‖^p` with the Euclidean norm.
    fn ground_cost(self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            Self::One => sq.sqrt(),
            Self::Two => sq,
        }
    }

    fn root(self, v: f64) -> f64 {
        match self {
            Self::One => v,
            Self::Two => v.max(0.0).sqrt(),
        }
    }
}

fn check_dims(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(MsbError::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

/// Positive-mass atoms with weights rescaled to total one.
fn normalized(mu: &DiscreteMeasure) -> (Vec<&[f64]>, Vec<f64>) {
    let total = mu.total_mass();
    mu.points()
        .iter()
        .zip(mu.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(x, &w)| (x.as_slice(), w / total))
        .unzip()
}

/// `W_p(μ, ν)`. One-dimensional inputs use quantile matching; otherwise the
/// transport LP.
pub fn wasserstein_p(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: u32) -> Result<f64> {
    let order = WassersteinOrder::from_p(p)?;
    Ok(order.root(wasserstein_pow(mu, nu, order)?))
}

/// `W_p^p(μ, ν)`: the optimal value of the transport problem itself.
pub fn wasserstein_pow(mu: &DiscreteMeasure, nu: &DiscreteMeasure, order: WassersteinOrder) -> Result<f64> {
    check_dims(mu, nu)?;
    if mu.dim() == 1 {
        wasserstein_pow_quantile(mu, nu, order)
    } else {
        wasserstein_pow_lp(mu, nu, order)
    }
}

/// LP route, any dimension, `N_μ · N_ν ≤` [`DEFAULT_LP_CAP`].
pub fn wasserstein_pow_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, order: WassersteinOrder) -> Result<f64> {
    check_dims(mu, nu)?;
    let (xs, wx) = normalized(mu);
    let (ys, wy) = normalized(nu);
    let vars = xs.len() * ys.len();
    if vars > DEFAULT_LP_CAP {
        return Err(MsbError::Capacity {
            what: "Wasserstein LP".into(),
            needed: vars,
            cap: DEFAULT_LP_CAP,
        });
    }
    let mut cost = Vec::with_capacity(vars);
    for x in &xs {
        for y in &ys {
            cost.push(order.ground_cost(x, y));
        }
    }
    let sol = transport_lp(&[&wx, &wy], cost);
    match sol.outcome {
        Outcome::Optimal => Ok(sol.value.max(0.0)),
        Outcome::Infeasible => Err(MsbError::validation("Wasserstein LP infeasible")),
    }
}

/// One-dimensional route: match the quantile functions of the two sorted
/// measures, `∫_0^1 |F^{-1}(t) − G^{-1}(t)|^p dt`.
pub fn wasserstein_pow_quantile(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    order: WassersteinOrder,
) -> Result<f64> {
    check_dims(mu, nu)?;
    if mu.dim() != 1 {
        return Err(MsbError::DimensionMismatch {
            expected: 1,
            got: mu.dim(),
        });
    }
    let sorted = |m: &DiscreteMeasure| {
        let (xs, ws) = normalized(m);
        let mut atoms: Vec<(f64, f64)> = xs.iter().map(|x| x[0]).zip(ws).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        atoms
    };
    let a = sorted(mu);
    let b = sorted(nu);
    let (mut i, mut k) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut acc = 0.0;
    while i < a.len() && k < b.len() {
        let t = ra.min(rb);
        acc += t * order.ground_cost(&[a[i].0], &[b[k].0]);
        ra -= t;
        rb -= t;
        if ra <= rb {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        } else {
            k += 1;
            if k < b.len() {
                rb = b[k].1;
            }
        }
    }
    Ok(acc)
}
