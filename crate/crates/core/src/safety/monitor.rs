//! A logistic "confidence monitor" trained on a median split of per-prompt NLL.

use nalgebra::Cholesky;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::geometry::{principal_angles, Subspace};
use crate::linalg::{mean, Mat, Vector};
use crate::probes::stratified_folds;

pub const MONITOR_MAX_ITER: usize = 50;
pub const MONITOR_TOL: f64 = 1e-8;
pub const DEFAULT_MONITOR_L2: f64 = 1.0;

/// L2-penalized logistic regression with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    /// Newton iterations from zero until the step norm falls below
    /// [`MONITOR_TOL`] or [`MONITOR_MAX_ITER`] is reached.
    pub fn fit(x: &Mat, y: &[bool], l2: f64) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(MscError::DimensionMismatch(format!("{n} rows but {} labels", y.len())));
        }
        if !(l2 > 0.0) {
            return Err(MscError::InvalidArgument("monitor needs a positive L2 penalty".into()));
        }
        // Augmented design [x, 1].
        let xa = Mat::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
        let yv = Vector::from_iterator(n, y.iter().map(|&b| b as u8 as f64));
        let mut w = Vector::zeros(d + 1);
        let mut iterations = 0;
        for it in 0..MONITOR_MAX_ITER {
            iterations = it + 1;
            let z = &xa * &w;
            let p = z.map(sigmoid);
            let mut grad = xa.transpose() * (&p - &yv);
            let weights = p.map(|v| (v * (1.0 - v)).max(1e-12));
            let mut xw = xa.clone();
            for (mut row, s) in xw.row_iter_mut().zip(weights.iter()) {
                row *= *s;
            }
            let mut hess = xa.transpose() * xw;
            for j in 0..d {
                grad[j] += l2 * w[j];
                hess[(j, j)] += l2;
            }
            hess[(d, d)] += 1e-10;
            let step = Cholesky::new(hess)
                .ok_or_else(|| MscError::Numerical("monitor Hessian is not positive definite".into()))?
                .solve(&grad);
            w -= &step;
            if step.norm() <= MONITOR_TOL * (1.0 + w.norm()) {
                break;
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(MscError::Numerical("monitor weights diverged".into()));
        }
        Ok(LogisticModel {
            weights: w.iter().take(d).copied().collect(),
            bias: w[d],
            iterations,
        })
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        let z: f64 = self.weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias;
        z > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorFit {
    pub model: LogisticModel,
    pub cv_accuracy: f64,
    /// Span of the weight vector.
    pub direction: Subspace,
    /// Fraction of prompts labelled confident.
    pub confident_fraction: f64,
}

impl MonitorFit {
    /// Angle in degrees between the monitor direction and `reference`.
    pub fn angle_to(&self, reference: &Subspace) -> Result<f64> {
        Ok(principal_angles(&self.direction, reference)?.mean_angle_deg())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub cv_accuracy: f64,
    pub angle_to_reference_deg: f64,
}

/// Labels a prompt confident when its NLL is below the median, fits the
/// monitor and reports stratified k-fold accuracy.
pub fn mock_monitor(x: &Mat, nll: &[f64], l2: f64, folds: usize) -> Result<MonitorFit> {
    let n = x.nrows();
    if nll.len() != n {
        return Err(MscError::DimensionMismatch(format!("{n} rows but {} NLL values", nll.len())));
    }
    if n < 20 {
        return Err(MscError::InvalidArgument(format!("need at least 20 prompts, got {n}")));
    }
    let median = crate::linalg::quantile_sorted(&crate::linalg::sorted(nll), 0.5);
    let y: Vec<bool> = nll.iter().map(|&v| v < median).collect();
    let pos = y.iter().filter(|&&b| b).count();
    if pos < folds || n - pos < folds {
        return Err(MscError::Degenerate(format!(
            "median split leaves {pos} confident and {} uncertain prompts",
            n - pos
        )));
    }
    let strata: Vec<usize> = y.iter().map(|&b| b as usize).collect();
    let assignment = stratified_folds(&strata, nll, folds)?;
    let accs: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<f64> {
            let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let m = LogisticModel::fit(&x.select_rows(train.iter()), &ty, l2)?;
            let hits = test
                .iter()
                .filter(|&&i| m.predict(x.row(i).transpose().as_slice()) == y[i])
                .count();
            Ok(hits as f64 / test.len() as f64)
        })
        .collect::<Result<_>>()?;
    let model = LogisticModel::fit(x, &y, l2)?;
    let norm: f64 = model.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(MscError::Degenerate("monitor weights are zero".into()));
    }
    let direction = Subspace::from_orthonormal(Mat::from_fn(1, x.ncols(), |_, j| model.weights[j] / norm))?;
    Ok(MonitorFit {
        model,
        cv_accuracy: mean(&accs),
        direction,
        confident_fraction: pos as f64 / n as f64,
    })
}
