//! Independent reference implementations and helpers shared by the
//! integration and acceptance tests. Nothing here calls the solver or the
//! LP code under test.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use msb::{DiscreteMeasure, Problem};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub struct Rng(Xoshiro256PlusPlus);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        xs[self.range(0, xs.len() - 1)]
    }

    pub fn measure(&mut self, n: usize, d: usize) -> DiscreteMeasure {
        let points = (0..n).map(|_| (0..d).map(|_| 2.0 * self.unit() - 1.0).collect()).collect();
        let raw: Vec<f64> = (0..n).map(|_| 0.1 + self.unit()).collect();
        let total: f64 = raw.iter().sum();
        DiscreteMeasure::new(points, raw.iter().map(|w| w / total).collect()).unwrap()
    }

    pub fn alpha(&mut self, m: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..m).map(|_| 0.1 + self.unit()).collect();
        let total: f64 = raw.iter().sum();
        let mut a: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let rest: f64 = a[..m - 1].iter().sum();
        a[m - 1] = 1.0 - rest;
        a
    }

    pub fn problem(&mut self, m: usize, sizes: &[usize], d: usize, epsilon: f64) -> Problem {
        let marginals = sizes.iter().map(|&n| self.measure(n, d)).collect();
        Problem::new(marginals, self.alpha(m), epsilon).unwrap()
    }
}

/// `c_α` written out directly: `Σ_{i<j} ‖α_i x_i − α_j x_j‖²`.
pub fn naive_cost(xs: &[&[f64]], alpha: &[f64]) -> f64 {
    let mut c = 0.0;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            for k in 0..xs[i].len() {
                c += (alpha[i] * xs[i][k] - alpha[j] * xs[j][k]).powi(2);
            }
        }
    }
    c
}

/// Textbook two-marginal Sinkhorn by matrix scaling, iterated until the
/// scalings stop moving. Returns `(ε log u, ε log v)` shifted so that the
/// first potential has zero mean under `a`.
pub fn naive_sinkhorn(problem: &Problem) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(problem.m(), 2);
    let (mu, nu) = (problem.marginal(0), problem.marginal(1));
    let eps = problem.epsilon();
    let (a, b) = (mu.weights(), nu.weights());
    let k: Vec<Vec<f64>> = mu
        .points()
        .iter()
        .map(|x| {
            nu.points()
                .iter()
                .map(|y| (-naive_cost(&[x, y], problem.alpha()) / eps).exp())
                .collect()
        })
        .collect();
    let mut u = vec![1.0; a.len()];
    let mut v = vec![1.0; b.len()];
    for _ in 0..200_000 {
        let u_old = u.clone();
        for i in 0..a.len() {
            let s: f64 = (0..b.len()).map(|j| k[i][j] * b[j] * v[j]).sum();
            u[i] = 1.0 / s;
        }
        for j in 0..b.len() {
            let s: f64 = (0..a.len()).map(|i| k[i][j] * a[i] * u[i]).sum();
            v[j] = 1.0 / s;
        }
        let change = u.iter().zip(&u_old).map(|(x, y)| (x / y - 1.0).abs()).fold(0.0, f64::max);
        if change < 1e-15 {
            break;
        }
    }
    let mut f: Vec<f64> = u.iter().map(|x| eps * x.ln()).collect();
    let mut g: Vec<f64> = v.iter().map(|x| eps * x.ln()).collect();
    let shift: f64 = f.iter().zip(a).map(|(x, w)| x * w).sum();
    f.iter_mut().for_each(|x| *x -= shift);
    g.iter_mut().for_each(|x| *x += shift);
    (f, g)
}

/// Solves `B x = r` by Gaussian elimination with partial pivoting;
/// `None` when `B` is numerically singular.
fn solve_dense(mut b: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let n = r.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| b[i][col].abs().total_cmp(&b[j][col].abs()))?;
        if b[piv][col].abs() < 1e-12 {
            return None;
        }
        b.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..n {
            let f = b[row][col] / b[col][col];
            if f != 0.0 {
                for k in col..n {
                    b[row][k] -= f * b[col][k];
                }
                r[row] -= f * r[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| b[row][k] * x[k]).sum();
        x[row] = (r[row] - s) / b[row][row];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, visit: &mut dyn FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return;
    }
    loop {
        visit(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minimum of `⟨c_α, π⟩` over all vertices of the multimarginal transport
/// polytope: every basic solution of the marginal constraints (one
/// redundant row per extra marginal removed) is formed explicitly.
pub fn vertex_enumeration(problem: &Problem) -> f64 {
    let sizes = problem.sizes();
    let m = sizes.len();
    let total: usize = sizes.iter().product();
    let mut tuples = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut idx = vec![0; m];
        for j in (0..m).rev() {
            idx[j] = rem % sizes[j];
            rem /= sizes[j];
        }
        tuples.push(idx);
    }
    let costs: Vec<f64> = tuples
        .iter()
        .map(|idx| {
            let xs: Vec<&[f64]> = (0..m).map(|j| problem.marginal(j).point(idx[j])).collect();
            naive_cost(&xs, problem.alpha())
        })
        .collect();

    // Full constraint system and its reduced, full-rank version.
    let mut full_rows: Vec<(usize, usize)> = Vec::new();
    for (j, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            full_rows.push((j, i));
        }
    }
    let rows: Vec<(usize, usize)> = full_rows
        .iter()
        .cloned()
        .filter(|&(j, i)| j == 0 || i + 1 < sizes[j])
        .collect();
    let rhs = |&(j, i): &(usize, usize)| problem.marginal(j).weights()[i];
    let r: Vec<f64> = rows.iter().map(rhs).collect();

    let mut best = f64::INFINITY;
    combinations(total, rows.len(), &mut |cols| {
        let b: Vec<Vec<f64>> = rows
            .iter()
            .map(|&(j, i)| cols.iter().map(|&c| if tuples[c][j] == i { 1.0 } else { 0.0 }).collect())
            .collect();
        let Some(x) = solve_dense(b, r.clone()) else { return };
        if x.iter().any(|&v| v < -1e-12) {
            return;
        }
        let feasible = full_rows.iter().all(|row @ &(j, i)| {
            let s: f64 = cols.iter().zip(&x).filter(|(&c, _)| tuples[c][j] == i).map(|(_, v)| v).sum();
            (s - rhs(row)).abs() < 1e-10
        });
        if feasible {
            let v: f64 = cols.iter().zip(&x).map(|(&c, &w)| costs[c] * w.max(0.0)).sum();
            best = best.min(v);
        }
    });
    best
}

/// `∫_0^1 |F^{-1}(t) − G^{-1}(t)|^p dt` evaluated on the merged breakpoints
/// of the two cumulative distribution functions.
pub fn quantile_wpp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: i32) -> f64 {
    let sorted = |m: &DiscreteMeasure| {
        let mut v: Vec<(f64, f64)> = m.points().iter().map(|x| x[0]).zip(m.weights().iter().cloned()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = v.iter().map(|a| a.1).sum();
        let mut acc = 0.0;
        v.into_iter()
            .map(|(x, w)| {
                acc += w / total;
                (x, acc)
            })
            .collect::<Vec<_>>()
    };
    let (a, b) = (sorted(mu), sorted(nu));
    let mut ts: Vec<f64> = a.iter().chain(&b).map(|q| q.1.min(1.0)).collect();
    ts.push(0.0);
    ts.push(1.0);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let inv = |cdf: &[(f64, f64)], t: f64| cdf.iter().find(|q| q.1 >= t).unwrap_or(cdf.last().unwrap()).0;
    ts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (w[1] - w[0]) * (inv(&a, mid) - inv(&b, mid)).abs().powi(p)
        })
        .sum()
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

pub struct CliRun {
    pub code: i32,
    pub stderr: String,
}

pub fn run_cli(args: &[&str]) -> CliRun {
    let out = Command::new(env!("CARGO_BIN_EXE_msb")).args(args).output().expect("spawn msb");
    CliRun {
        code: out.status.code().unwrap_or(-1),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Header and rows of a CSV file without quoting.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

/// Column `name` of a CSV file parsed as floats.
pub fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path);
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

/// Every file of `dir` except `manifest.json`, sorted by name.
pub fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
