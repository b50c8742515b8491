//! The task-model contract and linear-softmax implementations.

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{MscError, Result};
use crate::geometry::{ablate, Subspace};
use crate::linalg::Mat;
use crate::tensor_io::{argmax_lowest, names, suite_spec_of, ActivationCache};

/// A differentiable classifier over activations at one site.
pub trait TaskModel: Sync {
    /// Input dimension.
    fn dim(&self) -> usize;

    /// NLL of `label` and the predicted (argmax, lowest-index ties) class.
    fn evaluate_one(&self, x: &[f64], label: usize) -> (f64, usize);

    /// ∂NLL/∂x at `x` for the given label.
    fn gradient(&self, x: &[f64], label: usize) -> Vec<f64>;

    /// Evaluates every row, optionally through the ablation hook `x ↦ x − UᵀUx`.
    fn evaluate(&self, xs: &Mat, labels: &[usize], hook: Option<&Subspace>) -> Result<Evaluation> {
        if xs.nrows() != labels.len() {
            return Err(MscError::DimensionMismatch(format!(
                "{} rows but {} labels",
                xs.nrows(),
                labels.len()
            )));
        }
        if xs.ncols() != self.dim() {
            return Err(MscError::DimensionMismatch(format!(
                "rows have width {}, model expects {}",
                xs.ncols(),
                self.dim()
            )));
        }
        let out: Vec<(f64, usize)> = (0..xs.nrows())
            .into_par_iter()
            .map(|i| -> Result<(f64, usize)> {
                let row: Vec<f64> = xs.row(i).iter().copied().collect();
                let row = match hook {
                    Some(u) if u.rank() > 0 => ablate(&row, u)?,
                    _ => row,
                };
                Ok(self.evaluate_one(&row, labels[i]))
            })
            .collect::<Result<_>>()?;
        let (nll, pred) = out.into_iter().unzip();
        Ok(Evaluation { nll, pred })
    }
}

/// Per-example outputs of [`TaskModel::evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub nll: Vec<f64>,
    pub pred: Vec<usize>,
}

impl Evaluation {
    pub fn mean_nll(&self) -> f64 {
        crate::linalg::mean(&self.nll)
    }

    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let hits = self.pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Softmax cross-entropy of `logits` at `label`, and `softmax − onehot`.
pub(crate) fn softmax_nll(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let nll = z.ln() + m - logits[label];
    let mut resid: Vec<f64> = exps.iter().map(|e| e / z).collect();
    resid[label] -= 1.0;
    (nll, resid)
}

/// Logits `W x + b` through a softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSoftmaxModel {
    /// C × d.
    pub weights: Mat,
    pub bias: Vec<f64>,
}

impl LinearSoftmaxModel {
    pub fn new(weights: Mat, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.nrows() || weights.nrows() < 2 {
            return Err(MscError::DimensionMismatch(format!(
                "{} classes of weights but {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(LinearSoftmaxModel { weights, bias })
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }
}

impl TaskModel for LinearSoftmaxModel {
    fn dim(&self) -> usize {
        self.weights.ncols()
    }

    fn evaluate_one(&self, x: &[f64], label: usize) -> (f64, usize) {
        let logits = self.logits(x);
        let (nll, _) = softmax_nll(&logits, label);
        (nll, argmax_lowest(&logits))
    }

    fn gradient(&self, x: &[f64], label: usize) -> Vec<f64> {
        let (_, resid) = softmax_nll(&self.logits(x), label);
        let mut g = vec![0.0; self.dim()];
        for (r, w) in resid.iter().zip(self.weights.row_iter()) {
            for (gi, wi) in g.iter_mut().zip(w.iter()) {
                *gi += r * wi;
            }
        }
        g
    }
}

/// Planted model whose logits depend on `x` only through `U_M x`:
/// `logits = logit_scale · R · U_M x + prior_logit · e_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMediatorModel {
    pub mediator: Subspace,
    /// C × k_med.
    pub readout: Mat,
    pub logit_scale: f64,
    pub prior_logit: f64,
}

impl SyntheticMediatorModel {
    pub fn new(mediator: Subspace, readout: Mat, logit_scale: f64, prior_logit: f64) -> Result<Self> {
        if readout.ncols() != mediator.rank() || readout.nrows() < 2 {
            return Err(MscError::DimensionMismatch(format!(
                "readout is {}×{}, mediator rank {}",
                readout.nrows(),
                readout.ncols(),
                mediator.rank()
            )));
        }
        Ok(SyntheticMediatorModel {
            mediator,
            readout,
            logit_scale,
            prior_logit,
        })
    }

    /// Rebuilds the bundled model of a synthetic suite cache.
    pub fn from_cache(cache: &ActivationCache) -> Result<Self> {
        let spec = suite_spec_of(cache.meta())?;
        let scale = cache
            .meta()
            .get("logit_scale")
            .and_then(Value::as_f64)
            .unwrap_or_else(|| spec.logit_scale());
        Self::new(
            cache.subspace("mediator")?,
            cache.matrix(names::READOUT)?,
            scale,
            spec.prior_logit,
        )
    }

    pub fn n_classes(&self) -> usize {
        self.readout.nrows()
    }

    fn logits_from_coords(&self, s: &[f64]) -> Vec<f64> {
        let mut logits: Vec<f64> = self
            .readout
            .row_iter()
            .map(|r| self.logit_scale * r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        logits[0] += self.prior_logit;
        logits
    }
}

impl TaskModel for SyntheticMediatorModel {
    fn dim(&self) -> usize {
        self.mediator.dim()
    }

    fn evaluate_one(&self, x: &[f64], label: usize) -> (f64, usize) {
        let logits = self.logits_from_coords(&self.mediator.coords(x));
        let (nll, _) = softmax_nll(&logits, label);
        (nll, argmax_lowest(&logits))
    }

    fn gradient(&self, x: &[f64], label: usize) -> Vec<f64> {
        let (_, resid) = softmax_nll(&self.logits_from_coords(&self.mediator.coords(x)), label);
        let k = self.mediator.rank();
        let coeff: Vec<f64> = (0..k)
            .map(|j| {
                self.logit_scale
                    * resid
                        .iter()
                        .zip(self.readout.column(j).iter())
                        .map(|(r, w)| r * w)
                        .sum::<f64>()
            })
            .collect();
        let mut g = vec![0.0; self.dim()];
        for (j, c) in coeff.iter().enumerate() {
            for (gi, b) in g.iter_mut().zip(self.mediator.basis().row(j).iter()) {
                *gi += c * b;
            }
        }
        g
    }
}

/// Task model stored in a cache: `task.weights`/`task.bias` if present,
/// otherwise the bundled synthetic suite model.
pub fn model_from_cache(cache: &ActivationCache) -> Result<Box<dyn TaskModel>> {
    if cache.contains("task.weights") {
        let w = cache.matrix("task.weights")?;
        let b = if cache.contains("task.bias") {
            cache.get("task.bias")?.to_f64_vec()
        } else {
            vec![0.0; w.nrows()]
        };
        return Ok(Box::new(LinearSoftmaxModel::new(w, b)?));
    }
    Ok(Box::new(SyntheticMediatorModel::from_cache(cache)?))
}
