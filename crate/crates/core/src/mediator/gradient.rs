//! Gradient-probe subspaces, seed-agreement correlations, and perturbation
//! response curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::TaskModel;
use crate::error::{MscError, Result};
use crate::geometry::{orthonormalize, principal_angles, Subspace};
use crate::linalg::{center_columns, mean, top_right_frame, Mat};
use crate::rng;

#[derive(Clone, Debug)]
pub struct GradientSubspace {
    pub subspace: Subspace,
    /// `(Σσ²)² / Σσ⁴` of the centered gradient matrix.
    pub participation_ratio: f64,
    pub singular_values: Vec<f64>,
}

/// Per-prompt gradients `∂NLL/∂x`, stacked as rows.
pub fn gradient_matrix<M: TaskModel + ?Sized>(model: &M, xs: &Mat, labels: &[usize]) -> Result<Mat> {
    if xs.nrows() != labels.len() || xs.ncols() != model.dim() {
        return Err(MscError::DimensionMismatch(format!(
            "{}×{} prompts, {} labels, model d = {}",
            xs.nrows(),
            xs.ncols(),
            labels.len(),
            model.dim()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = xs.row(i).iter().copied().collect();
            model.gradient(&x, labels[i])
        })
        .collect();
    Ok(Mat::from_fn(xs.nrows(), xs.ncols(), |i, j| rows[i][j]))
}

/// Top-`k` right singular frame of the column-centered gradient matrix.
pub fn gradient_subspace<M: TaskModel + ?Sized>(
    model: &M,
    xs: &Mat,
    labels: &[usize],
    k: usize,
) -> Result<GradientSubspace> {
    let g = gradient_matrix(model, xs, labels)?;
    subspace_of_gradients(&g, k)
}

/// [`gradient_subspace`] over precomputed gradients (e.g. a cached `gradients` tensor).
pub fn subspace_of_gradients(g: &Mat, k: usize) -> Result<GradientSubspace> {
    let n = g.nrows();
    if k == 0 || n < k || k > g.ncols() {
        return Err(MscError::InvalidArgument(format!(
            "need 1 <= k <= min(n, d); got k={k}, n={n}, d={}",
            g.ncols()
        )));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Err(MscError::Degenerate("all-zero gradients".into()));
    }
    let (gc, _) = center_columns(g);
    let (frame, sv) = top_right_frame(&gc, k);
    let s2: f64 = sv.iter().map(|s| s * s).sum();
    let s4: f64 = sv.iter().map(|s| s.powi(4)).sum();
    if s4 == 0.0 {
        return Err(MscError::Degenerate("gradients are constant across prompts".into()));
    }
    Ok(GradientSubspace {
        subspace: orthonormalize(&frame)?,
        participation_ratio: s2 * s2 / s4,
        singular_values: sv,
    })
}

/// Canonical correlations between two frames (cosines of principal angles).
pub fn subspace_cca(a: &Subspace, b: &Subspace) -> Result<Vec<f64>> {
    Ok(principal_angles(a, b)?.cosines())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResponse {
    pub epsilons: Vec<f64>,
    /// Mean |ΔNLL| for unit directions inside the frame.
    pub inside: Vec<f64>,
    /// Mean |ΔNLL| for unit directions orthogonal to the frame.
    pub orthogonal: Vec<f64>,
    /// Least-squares slopes through the origin of each curve against |ε|.
    pub inside_slope: f64,
    pub orthogonal_slope: f64,
}

/// Mean |NLL(x + εv) − NLL(x)| for random unit `v` in `row(u)` and in its complement.
///
/// Prompt `i` draws its two directions from substream `(seed, i)`.
pub fn perturbation_response<M: TaskModel + ?Sized>(
    model: &M,
    xs: &Mat,
    labels: &[usize],
    u: &Subspace,
    epsilons: &[f64],
    seed: u64,
) -> Result<PerturbationResponse> {
    let d = model.dim();
    if u.dim() != d || xs.ncols() != d || xs.nrows() != labels.len() {
        return Err(MscError::DimensionMismatch("prompts, frame and model disagree on d".into()));
    }
    if epsilons.iter().any(|e| !e.is_finite()) {
        return Err(MscError::InvalidArgument("epsilons must be finite".into()));
    }
    if u.rank() == 0 || u.rank() == d {
        return Err(MscError::InvalidArgument(
            "frame must be a proper nonzero subspace".into(),
        ));
    }
    let per_prompt: Vec<(Vec<f64>, Vec<f64>)> = (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, i as u64);
            let z = rng::gaussian_vec(&mut r, u.rank());
            let mut v_in = vec![0.0; d];
            for (j, zj) in z.iter().enumerate() {
                for (v, b) in v_in.iter_mut().zip(u.basis().row(j).iter()) {
                    *v += zj * b;
                }
            }
            normalize(&mut v_in);
            let g = rng::gaussian_vec(&mut r, d);
            let mut v_out = crate::geometry::ablate(&g, u).expect("dims checked");
            normalize(&mut v_out);
            let x: Vec<f64> = xs.row(i).iter().copied().collect();
            let (base, _) = model.evaluate_one(&x, labels[i]);
            let shift = |v: &[f64], e: f64| {
                let moved: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + e * b).collect();
                (model.evaluate_one(&moved, labels[i]).0 - base).abs()
            };
            (
                epsilons.iter().map(|&e| shift(&v_in, e)).collect(),
                epsilons.iter().map(|&e| shift(&v_out, e)).collect(),
            )
        })
        .collect();
    let column_mean = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, j: usize| {
        mean(&per_prompt.iter().map(|p| pick(p)[j]).collect::<Vec<_>>())
    };
    let inside: Vec<f64> = (0..epsilons.len()).map(|j| column_mean(|p| &p.0, j)).collect();
    let orthogonal: Vec<f64> = (0..epsilons.len()).map(|j| column_mean(|p| &p.1, j)).collect();
    Ok(PerturbationResponse {
        inside_slope: slope_through_origin(epsilons, &inside),
        orthogonal_slope: slope_through_origin(epsilons, &orthogonal),
        epsilons: epsilons.to_vec(),
        inside,
        orthogonal,
    })
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
}

/// `Σ|ε| y / Σ ε²`; zero when every ε is zero.
pub fn slope_through_origin(eps: &[f64], y: &[f64]) -> f64 {
    let den: f64 = eps.iter().map(|e| e * e).sum();
    if den == 0.0 {
        return 0.0;
    }
    eps.iter().zip(y).map(|(e, v)| e.abs() * v).sum::<f64>() / den
}
