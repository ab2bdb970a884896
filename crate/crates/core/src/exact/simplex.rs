//! Dense two-phase primal simplex on `min c·x, A x = b, x ≥ 0` with Bland's
//! rule for both the entering and the leaving variable.

/// Pivot threshold and reduced-cost tolerance.
const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StandardLp {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub outcome: Outcome,
    pub x: Vec<f64>,
    pub value: f64,
    /// Equality multipliers `y = c_B B^{-1}`.
    pub dual: Vec<f64>,
    pub dual_value: f64,
    /// `min_j (c_j − yᵀA_j)`; nonnegative up to rounding at optimality.
    pub min_reduced_cost: f64,
    pub pivots: usize,
}

struct Tableau {
    rows: usize,
    /// Structural columns followed by one artificial per row.
    width: usize,
    structural: usize,
    t: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Reduced costs of the current phase, and the objective value.
    d: Vec<f64>,
    z: f64,
    pivots: usize,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let inv = 1.0 / self.t[r * w + e];
        for j in 0..w {
            self.t[r * w + j] *= inv;
        }
        self.rhs[r] *= inv;
        self.t[r * w + e] = 1.0;
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let factor = self.t[i * w + e];
            if factor != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= factor * self.t[r * w + j];
                }
                self.t[i * w + e] = 0.0;
                self.rhs[i] -= factor * self.rhs[r];
            }
        }
        let factor = self.d[e];
        if factor != 0.0 {
            for j in 0..w {
                self.d[j] -= factor * self.t[r * w + j];
            }
            self.d[e] = 0.0;
            self.z += factor * self.rhs[r];
        }
        self.basis[r] = e;
        self.pivots += 1;
    }

    /// Reduced costs for objective `cost` (defined on all `width` columns).
    fn price(&mut self, cost: &[f64]) {
        self.d = cost.to_vec();
        self.z = 0.0;
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..self.width {
                    self.d[j] -= cb * self.at(i, j);
                }
                self.z += cb * self.rhs[i];
            }
        }
    }

    /// Bland iterations over structural columns until no improving column.
    fn optimize(&mut self) {
        loop {
            let Some(e) = (0..self.structural).find(|&j| self.d[j] < -COST_TOL) else {
                return;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, e);
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - 1e-15 || (ratio <= best + 1e-15 && self.basis[i] < self.basis[r]) {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, e),
                // Transport polytopes are bounded; treat as converged.
                None => return,
            }
        }
    }
}

pub(crate) fn solve(lp: &StandardLp) -> LpSolution {
    let rows = lp.rows;
    let n = lp.cols;
    let width = n + rows;
    let mut t = vec![0.0; rows * width];
    let mut rhs = lp.b.clone();
    for i in 0..rows {
        let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * width + j] = sign * lp.a[i * n + j];
        }
        t[i * width + n + i] = 1.0;
        rhs[i] *= sign;
    }
    let mut tab = Tableau {
        rows,
        width,
        structural: n,
        t,
        rhs,
        basis: (n..n + rows).collect(),
        d: vec![0.0; width],
        z: 0.0,
        pivots: 0,
    };

    // Phase I: minimise the sum of artificials.
    let mut phase1 = vec![0.0; width];
    phase1[n..].iter_mut().for_each(|v| *v = 1.0);
    tab.price(&phase1);
    tab.optimize();
    let scale = lp.b.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let infeasibility: f64 = (0..rows)
        .filter(|&i| tab.basis[i] >= n)
        .map(|i| tab.rhs[i])
        .sum();
    if infeasibility > 1e-9 * scale {
        return LpSolution {
            outcome: Outcome::Infeasible,
            x: vec![0.0; n],
            value: f64::NAN,
            dual: vec![0.0; rows],
            dual_value: f64::NAN,
            min_reduced_cost: f64::NAN,
            pivots: tab.pivots,
        };
    }
    // Drive zero-level artificials out of the basis.
    for r in 0..rows {
        if tab.basis[r] >= n {
            if let Some(e) = (0..n).find(|&j| tab.at(r, j).abs() > 1e-9) {
                tab.pivot(r, e);
            }
        }
    }

    // Phase II.
    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(&lp.c);
    tab.price(&phase2);
    tab.optimize();

    let mut x = vec![0.0; n];
    for i in 0..rows {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs[i].max(0.0);
        }
    }
    let value: f64 = x.iter().zip(&lp.c).map(|(a, b)| a * b).sum();

    // y_k = Σ_i c_{B_i} (B^{-1})_{ik}; B^{-1} sits in the artificial block.
    // Rows flipped for negative b carry the sign into y.
    let mut dual = vec![0.0; rows];
    for (k, yk) in dual.iter_mut().enumerate() {
        let sign = if lp.b[k] < 0.0 { -1.0 } else { 1.0 };
        let mut acc = 0.0;
        for i in 0..rows {
            let bi = tab.basis[i];
            if bi < n {
                acc += lp.c[bi] * tab.at(i, n + k);
            }
        }
        *yk = sign * acc;
    }
    let dual_value: f64 = dual.iter().zip(&lp.b).map(|(y, b)| y * b).sum();
    let mut min_reduced_cost = f64::INFINITY;
    for j in 0..n {
        let mut rc = lp.c[j];
        for i in 0..rows {
            rc -= dual[i] * lp.a[i * n + j];
        }
        min_reduced_cost = min_reduced_cost.min(rc);
    }
    LpSolution {
        outcome: Outcome::Optimal,
        x,
        value,
        dual,
        dual_value,
        min_reduced_cost,
        pivots: tab.pivots,
    }
}
