//! Per-direction and subset ablations of a frame.

use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::geometry::Subspace;
use crate::linalg::Mat;
use crate::mediator::TaskModel;

pub const MAX_SWEEP_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEffect {
    pub rows: Vec<usize>,
    /// Mean ablated NLL minus mean clean NLL.
    pub delta_nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetAblationSweep {
    pub clean_nll: f64,
    /// Nonempty subsets ordered by size, then lexicographically.
    pub subsets: Vec<SubsetEffect>,
    pub singles: Vec<f64>,
    pub full: f64,
    /// `full / Σ singles`; absent when the singles sum to a nonpositive value.
    pub cooperation_ratio: Option<f64>,
}

impl SubsetAblationSweep {
    pub fn effect(&self, rows: &[usize]) -> Option<f64> {
        self.subsets.iter().find(|s| s.rows == rows).map(|s| s.delta_nll)
    }
}

/// Subsets of `0..k` with at most `max_size` elements, size-major, lexicographic.
pub fn canonical_subsets(k: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=max_size.min(k) {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            out.push(combo.clone());
            let mut i = size;
            while i > 0 && combo[i - 1] == k - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..size {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    out
}

/// ΔNLL for every nonempty subset of `u`'s rows up to `max_subset` elements
/// (the full set is always included).
pub fn subset_ablation_sweep<M: TaskModel + ?Sized>(
    model: &M,
    xs: &Mat,
    labels: &[usize],
    u: &Subspace,
    max_subset: Option<usize>,
) -> Result<SubsetAblationSweep> {
    let k = u.rank();
    if k == 0 || k > MAX_SWEEP_RANK {
        return Err(MscError::InvalidArgument(format!(
            "subset sweep needs 1 <= k <= {MAX_SWEEP_RANK}, got {k}"
        )));
    }
    let clean_nll = model.evaluate(xs, labels, None)?.mean_nll();
    let mut sets = canonical_subsets(k, max_subset.unwrap_or(k));
    let full_rows: Vec<usize> = (0..k).collect();
    if sets.last() != Some(&full_rows) {
        sets.push(full_rows.clone());
    }
    let subsets = sets
        .into_iter()
        .map(|rows| -> Result<SubsetEffect> {
            let sub = u.select(&rows);
            let nll = model.evaluate(xs, labels, Some(&sub))?.mean_nll();
            Ok(SubsetEffect {
                rows,
                delta_nll: nll - clean_nll,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let singles: Vec<f64> = subsets.iter().filter(|s| s.rows.len() == 1).map(|s| s.delta_nll).collect();
    let full = subsets
        .iter()
        .find(|s| s.rows == full_rows)
        .map(|s| s.delta_nll)
        .expect("full set is always evaluated");
    let sum: f64 = singles.iter().sum();
    Ok(SubsetAblationSweep {
        clean_nll,
        singles,
        full,
        cooperation_ratio: (sum > 0.0).then(|| (full / sum).max(0.0)),
        subsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_canonical() {
        let s = canonical_subsets(3, 3);
        assert_eq!(
            s,
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0, 1, 2]
            ]
        );
        assert_eq!(canonical_subsets(8, 8).len(), 255);
        assert_eq!(canonical_subsets(4, 2).len(), 10);
    }
}
