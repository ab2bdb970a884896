use std::collections::BTreeMap;

use crate::cost::ProductShape;
use crate::error::{MsbError, Result};
use crate::measures::DiscreteMeasure;

use super::Coupling;

/// Cell of `x` in the cubic partition of `[-1, 1]^d` anchored at `-1` with
/// side `width`: cells are `[a, a + width)` per axis, the last one closed.
pub fn block_index(x: &[f64], width: f64) -> Vec<u64> {
    let cells = (2.0 / width).ceil().max(1.0) as u64;
    x.iter()
        .map(|&v| {
            let k = ((v + 1.0) / width).floor();
            (k.max(0.0) as u64).min(cells - 1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockApproximation {
    pub coupling: Coupling,
    /// Nonempty blocks per marginal (`L_j`).
    pub block_counts: Vec<usize>,
    /// `KL(coupling ‖ ⊗ν_j)`.
    pub kl: f64,
    /// `Σ_{j<m} log L_j`.
    pub kl_bound: f64,
}

/// Replaces `π` by `Σ_n π(A^n) ⊗_k ν_k^{n_k}`: inside every product block
/// the mass of `π` is redistributed proportionally to the product of the
/// marginals restricted to that block.
pub fn block_approximation(
    coupling: &Coupling,
    marginals: &[DiscreteMeasure],
    width: f64,
) -> Result<BlockApproximation> {
    if !(width.is_finite() && width > 0.0) {
        return Err(MsbError::validation(format!("block width {width} must be positive")));
    }
    let sizes: Vec<usize> = marginals.iter().map(DiscreteMeasure::len).collect();
    if coupling.shape().dims() != sizes.as_slice() {
        return Err(MsbError::ShapeMismatch(format!(
            "coupling shape {:?} vs marginal sizes {sizes:?}",
            coupling.shape().dims()
        )));
    }
    let m = marginals.len();

    // Block id of every atom, ids in order of first appearance.
    let mut atom_block: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut block_mass: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut block_counts = Vec::with_capacity(m);
    for mu in marginals {
        let mut ids: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut blocks = Vec::with_capacity(mu.len());
        let mut mass: Vec<f64> = Vec::new();
        for (x, &w) in mu.points().iter().zip(mu.weights()) {
            let next = ids.len();
            let id = *ids.entry(block_index(x, width)).or_insert(next);
            if id == mass.len() {
                mass.push(0.0);
            }
            mass[id] += w;
            blocks.push(id);
        }
        block_counts.push(mass.iter().filter(|&&v| v > 0.0).count());
        atom_block.push(blocks);
        block_mass.push(mass);
    }

    let block_shape = ProductShape::new(&block_mass.iter().map(Vec::len).collect::<Vec<_>>());
    let mut block_of = vec![0usize; m];
    let mut pi_block = vec![0.0; block_shape.total()];
    let shape = coupling.shape();
    shape.for_each(|flat, idx| {
        for j in 0..m {
            block_of[j] = atom_block[j][idx[j]];
        }
        pi_block[block_shape.ravel(&block_of)] += coupling.weights()[flat];
    });

    let mut out = Vec::with_capacity(shape.total());
    shape.for_each(|_, idx| {
        let mut ratio = 1.0;
        for j in 0..m {
            let b = atom_block[j][idx[j]];
            block_of[j] = b;
            let mass = block_mass[j][b];
            ratio *= if mass > 0.0 { marginals[j].weights()[idx[j]] / mass } else { 0.0 };
        }
        out.push(pi_block[block_shape.ravel(&block_of)] * ratio);
    });
    let approx = Coupling::new(&sizes, out)?;
    let kl = approx.kl_to_product(marginals);
    let kl_bound = block_counts[..m.saturating_sub(1)]
        .iter()
        .map(|&l| (l.max(1) as f64).ln())
        .sum();
    Ok(BlockApproximation {
        coupling: approx,
        block_counts,
        kl,
        kl_bound,
    })
}
