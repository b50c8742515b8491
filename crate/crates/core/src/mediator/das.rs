//! Distributed alignment search: find the rank-k frame whose ablation most
//! increases task NLL, parametrized through a QR retraction and trained with Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::TaskModel;
use crate::error::{MscError, Result};
use crate::geometry::{haar_sample_with, Subspace};
use crate::linalg::{mean, std_dev, Mat};
use crate::rng;

/// Moving-average window used by the convergence check.
pub const CONVERGENCE_WINDOW: usize = 25;
/// Look-back (in steps) of the convergence check.
pub const CONVERGENCE_LOOKBACK: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DasConfig {
    pub k: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Optional cap on the Frobenius norm of the parameter gradient.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl DasConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        DasConfig {
            k,
            steps: 400,
            lr: 1e-3,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
            seed,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DasFitResult {
    pub subspace: Subspace,
    /// Minibatch mean ablated NLL at every step.
    pub nll_trace: Vec<f64>,
    /// ‖UUᵀ − I‖_F of the frame used at every step.
    pub orth_residual_trace: Vec<f64>,
    pub final_orth_residual: f64,
    pub seed: u64,
    pub steps: usize,
    pub converged: bool,
    /// Mean NLL over all prompts with the final frame ablated.
    pub final_nll: f64,
    pub clean_nll: f64,
}

/// Thin QR with positive R diagonal: `A = QR`, `Q` d×k, `R` k×k.
pub(crate) fn thin_qr(a: &Mat) -> Result<(Mat, Mat)> {
    let (q, _) = crate::linalg::gram_schmidt_columns(a.clone(), 1e-13)
        .ok_or_else(|| MscError::Numerical("DAS parameter lost rank".into()))?;
    let k = a.ncols();
    let mut r = q.transpose() * a;
    for i in 0..k {
        for j in 0..i {
            r[(i, j)] = 0.0;
        }
    }
    Ok((q, r))
}

/// Reverse-mode derivative of the thin QR: given `Q̄ = ∂L/∂Q`, returns `∂L/∂A`.
///
/// `Ā = (Q̄ + Q·copyltu(M)) R⁻ᵀ` with `M = −Q̄ᵀQ` and
/// `copyltu(M) = tril(M) + tril(M, −1)ᵀ`.
pub(crate) fn qr_backward(q: &Mat, r: &Mat, q_bar: &Mat) -> Result<Mat> {
    let m = -(q_bar.transpose() * q);
    let k = m.nrows();
    let sym = Mat::from_fn(k, k, |i, j| if i >= j { m[(i, j)] } else { m[(j, i)] });
    let b = q_bar + q * sym;
    let xt = r
        .solve_upper_triangular(&b.transpose())
        .ok_or_else(|| MscError::Numerical("singular R in QR backward".into()))?;
    Ok(xt.transpose())
}

/// Fits a rank-`cfg.k` mediator frame by maximizing ablated NLL.
pub fn das_fit<M: TaskModel + ?Sized>(
    model: &M,
    xs: &Mat,
    labels: &[usize],
    cfg: &DasConfig,
) -> Result<DasFitResult> {
    let (n, d) = xs.shape();
    if d != model.dim() {
        return Err(MscError::DimensionMismatch(format!(
            "cache d = {d}, model d = {}",
            model.dim()
        )));
    }
    if n == 0 || labels.len() != n {
        return Err(MscError::InvalidArgument(format!(
            "{n} prompts with {} labels",
            labels.len()
        )));
    }
    if cfg.k > d {
        return Err(MscError::InvalidArgument(format!("k = {} exceeds d = {d}", cfg.k)));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(MscError::InvalidArgument("batch_size and lr must be positive".into()));
    }
    let clean_nll = model.evaluate(xs, labels, None)?.mean_nll();
    if cfg.k == 0 {
        return Ok(DasFitResult {
            subspace: Subspace::empty(d),
            nll_trace: vec![],
            orth_residual_trace: vec![],
            final_orth_residual: 0.0,
            seed: cfg.seed,
            steps: 0,
            converged: true,
            final_nll: clean_nll,
            clean_nll,
        });
    }

    let k = cfg.k;
    let mut r = rng::stream(cfg.seed);
    // Only the first k columns of the d×d parameter reach the frame, so only they are stored.
    // The parameter starts at the Q factor of a Gaussian draw (a Haar frame).
    let mut a = haar_sample_with(&mut r, d, k)?.into_basis().transpose();
    let mut m1 = Mat::zeros(d, k);
    let mut m2 = Mat::zeros(d, k);
    let mut nll_trace = Vec::with_capacity(cfg.steps);
    let mut orth_trace = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let (q, rmat) = thin_qr(&a)?;
        let u = q.transpose();
        orth_trace.push((&u * &q - Mat::identity(k, k)).norm());

        let mut q_bar = Mat::zeros(d, k);
        let mut batch_nll = 0.0;
        for _ in 0..cfg.batch_size {
            let i = r.random_range(0..n);
            let x: Vec<f64> = xs.row(i).iter().copied().collect();
            let c: Vec<f64> = (0..k)
                .map(|j| q.column(j).iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            let mut xa = x.clone();
            for (j, cj) in c.iter().enumerate() {
                for (v, b) in xa.iter_mut().zip(q.column(j).iter()) {
                    *v -= cj * b;
                }
            }
            let (nll, _) = model.evaluate_one(&xa, labels[i]);
            let g = model.gradient(&xa, labels[i]);
            let ug: Vec<f64> = (0..k)
                .map(|j| q.column(j).iter().zip(&g).map(|(a, b)| a * b).sum())
                .collect();
            // Objective is −NLL; its gradient w.r.t. U is c gᵀ + (Ug) xᵀ, so Q̄ = g cᵀ + x (Ug)ᵀ.
            for j in 0..k {
                let mut col = q_bar.column_mut(j);
                for t in 0..d {
                    col[t] += g[t] * c[j] + x[t] * ug[j];
                }
            }
            batch_nll += nll;
        }
        let bs = cfg.batch_size as f64;
        q_bar /= bs;
        batch_nll /= bs;
        if !batch_nll.is_finite() || q_bar.iter().any(|v| !v.is_finite()) {
            return Err(MscError::NonFiniteLoss { step });
        }
        nll_trace.push(batch_nll);

        let mut grad = qr_backward(&q, &rmat, &q_bar)?;
        if cfg.weight_decay > 0.0 {
            grad += &a * cfg.weight_decay;
        }
        if let Some(cap) = cfg.grad_clip {
            let norm = grad.norm();
            if norm > cap {
                grad *= cap / norm;
            }
        }
        let t = step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for ((p, g), (mo, ve)) in a
            .iter_mut()
            .zip(grad.iter())
            .zip(m1.iter_mut().zip(m2.iter_mut()))
        {
            *mo = cfg.beta1 * *mo + (1.0 - cfg.beta1) * g;
            *ve = cfg.beta2 * *ve + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * (*mo / bc1) / ((*ve / bc2).sqrt() + cfg.eps);
        }
    }

    let (q, _) = thin_qr(&a)?;
    let u = q.transpose();
    let final_orth_residual = (&u * &q - Mat::identity(k, k)).norm();
    let subspace = Subspace::from_orthonormal(u)?;
    let final_nll = model.evaluate(xs, labels, Some(&subspace))?.mean_nll();
    let objective: Vec<f64> = nll_trace.iter().map(|v| -v).collect();
    let converged = final_orth_residual < crate::geometry::ORTHONORMAL_TOL && plateaued(&objective);
    Ok(DasFitResult {
        subspace,
        nll_trace,
        orth_residual_trace: orth_trace,
        final_orth_residual,
        seed: cfg.seed,
        steps: cfg.steps,
        converged,
        final_nll,
        clean_nll,
    })
}

/// True when the moving average of the minimized objective at the last step is
/// no higher than it was [`CONVERGENCE_LOOKBACK`] steps earlier, up to two
/// standard errors of the recent window.
pub fn plateaued(objective: &[f64]) -> bool {
    let w = CONVERGENCE_WINDOW;
    let n = objective.len();
    if n < w + CONVERGENCE_LOOKBACK {
        return false;
    }
    let recent = &objective[n - w..];
    let earlier = &objective[n - w - CONVERGENCE_LOOKBACK..n - CONVERGENCE_LOOKBACK];
    let tol = 2.0 * std_dev(recent) / (w as f64).sqrt();
    mean(recent) <= mean(earlier) + tol
}

/// Independent fits per seed; `best` indexes the run with the highest final ablated NLL.
#[derive(Clone, Debug)]
pub struct DasMultiFit {
    pub runs: Vec<DasFitResult>,
    pub best: usize,
}

impl DasMultiFit {
    pub fn best_run(&self) -> &DasFitResult {
        &self.runs[self.best]
    }
}

pub fn das_fit_seeds<M: TaskModel + ?Sized>(
    model: &M,
    xs: &Mat,
    labels: &[usize],
    cfg: &DasConfig,
    seeds: &[u64],
) -> Result<DasMultiFit> {
    use rayon::prelude::*;
    if seeds.is_empty() {
        return Err(MscError::InvalidArgument("no seeds given".into()));
    }
    let runs: Vec<DasFitResult> = seeds
        .par_iter()
        .map(|&seed| {
            let c = DasConfig { seed, ..cfg.clone() };
            das_fit(model, xs, labels, &c)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.final_nll > runs[best].final_nll {
            best = i;
        }
    }
    Ok(DasMultiFit { runs, best })
}
