//! Two-component adversarial injection: one component moves the mediator
//! coordinates, the other steers a probe, and the two cannot interact.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::geometry::{orthogonalize_against, Subspace};
use crate::linalg::{mean, Mat};
use crate::probes::{circular_day_distance, CircularProbe};
use crate::tensor_io::DAYS_PER_YEAR;

/// Largest allowed |cos| between the probe complement and the mediator.
const DECOUPLING_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSpec {
    /// Mechanism-corruption scale.
    pub alpha: f64,
    /// Probe-reassurance scale.
    pub beta: f64,
    pub mediator: Subspace,
    /// Probe readout rows made orthogonal to the mediator.
    pub probe_complement: Subspace,
}

impl AdversarialSpec {
    /// Orthogonalizes the first-harmonic probe rows against the mediator.
    pub fn new(alpha: f64, beta: f64, mediator: Subspace, probe: &CircularProbe) -> Result<Self> {
        let rows = probe.weights().rows(0, 2).into_owned();
        let complement = orthogonalize_against(&rows, &mediator)?;
        Self::with_complement(alpha, beta, mediator, complement)
    }

    pub fn with_complement(alpha: f64, beta: f64, mediator: Subspace, probe_complement: Subspace) -> Result<Self> {
        if mediator.dim() != probe_complement.dim() {
            return Err(MscError::DimensionMismatch("mediator and probe live in different spaces".into()));
        }
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(MscError::InvalidArgument("alpha and beta must be finite".into()));
        }
        let cross = probe_complement.basis() * mediator.basis().transpose();
        let leak = cross.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if leak > DECOUPLING_TOL {
            return Err(MscError::InvalidArgument(format!(
                "probe complement is not orthogonal to the mediator (max |cos| {leak:.2e})"
            )));
        }
        Ok(AdversarialSpec {
            alpha,
            beta,
            mediator,
            probe_complement,
        })
    }

    pub fn with_scales(&self, alpha: f64, beta: f64) -> Self {
        AdversarialSpec {
            alpha,
            beta,
            ..self.clone()
        }
    }
}

/// Day `((d + 179) mod 365) + 1`, about half a year away.
pub fn opposite_day(doy: usize) -> usize {
    (doy + 179) % DAYS_PER_YEAR + 1
}

fn first_harmonic_target(doy: usize) -> [f64; 2] {
    let a = TAU * doy as f64 / DAYS_PER_YEAR as f64;
    [a.sin(), a.cos()]
}

fn mean_row(means: &Mat, doy: usize) -> Result<Vec<f64>> {
    if doy == 0 || doy > means.nrows() {
        return Err(MscError::InvalidArgument(format!(
            "no mean activation for day {doy}"
        )));
    }
    Ok(means.row(doy - 1).iter().copied().collect())
}

/// `x + α UᵀU(μ_src − μ_tgt) + β ŨᵀP (y_src − ŷ)` where `ŷ` is the probe's
/// first-harmonic readout of `x`.
pub fn adversarial_inject(
    x: &[f64],
    spec: &AdversarialSpec,
    src_doy: usize,
    tgt_doy: usize,
    per_doy_means: &Mat,
    probe: &CircularProbe,
) -> Result<Vec<f64>> {
    let d = spec.mediator.dim();
    if x.len() != d || per_doy_means.ncols() != d || probe.weights().ncols() != d {
        return Err(MscError::DimensionMismatch("injection inputs disagree on d".into()));
    }
    let diff: Vec<f64> = mean_row(per_doy_means, src_doy)?
        .iter()
        .zip(mean_row(per_doy_means, tgt_doy)?)
        .map(|(a, b)| a - b)
        .collect();
    let mech = spec.mediator.project(&diff);
    let readout = probe.map.predict_one(x);
    let target = first_harmonic_target(src_doy);
    let mut out = x.to_vec();
    for (o, m) in out.iter_mut().zip(&mech) {
        *o += spec.alpha * m;
    }
    for (r, t) in target.iter().enumerate() {
        let coef = spec.beta * (t - readout[r]);
        for (o, u) in out.iter_mut().zip(spec.probe_complement.basis().row(r).iter()) {
            *o += coef * u;
        }
    }
    Ok(out)
}

/// Day whose mediator coordinates are nearest to those of `x`.
pub fn mediator_nearest_day(x: &[f64], mediator: &Subspace, reference: &Mat) -> usize {
    let c = mediator.coords(x);
    let mut best = (f64::INFINITY, 1);
    for day in 0..reference.nrows() {
        let dist: f64 = reference
            .row(day)
            .iter()
            .zip(&c)
            .map(|(r, v)| (r - v).powi(2))
            .sum();
        if dist < best.0 {
            best = (dist, day + 1);
        }
    }
    best.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionCell {
    pub alpha: f64,
    pub beta: f64,
    /// Mean circular distance from the true day to the mediator nearest day.
    pub mediator_shift_days: f64,
    /// Circular RMSE of the probe's day readout.
    pub probe_rmse_days: f64,
    /// Mean ‖x_adv − x‖ / ‖x‖.
    pub relative_norm: f64,
}

/// Sweeps `(α, β)` over the listed test days, injecting into the per-day mean
/// of each test day with the half-year-away day as target.
pub fn adversarial_sweep(
    per_doy_means: &Mat,
    base: &AdversarialSpec,
    probe: &CircularProbe,
    alphas: &[f64],
    betas: &[f64],
    test_days: &[usize],
) -> Result<Vec<InjectionCell>> {
    if per_doy_means.nrows() != DAYS_PER_YEAR {
        return Err(MscError::DimensionMismatch(format!(
            "expected {DAYS_PER_YEAR} per-day means, got {}",
            per_doy_means.nrows()
        )));
    }
    if test_days.is_empty() {
        return Err(MscError::InvalidArgument("no test days".into()));
    }
    let reference = per_doy_means * base.mediator.basis().transpose();
    let mut cells = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            let spec = base.with_scales(alpha, beta);
            let mut shifts = Vec::new();
            let mut sq = Vec::new();
            let mut norms = Vec::new();
            for &day in test_days {
                let x = mean_row(per_doy_means, day)?;
                let adv = adversarial_inject(&x, &spec, day, opposite_day(day), per_doy_means, probe)?;
                let nn = mediator_nearest_day(&adv, &spec.mediator, &reference);
                shifts.push(circular_day_distance(nn as f64, day as f64));
                sq.push(circular_day_distance(probe.predict_doy(&adv), day as f64).powi(2));
                let dn: f64 = adv.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                norms.push(if xn > 0.0 { dn / xn } else { 0.0 });
            }
            cells.push(InjectionCell {
                alpha,
                beta,
                mediator_shift_days: mean(&shifts),
                probe_rmse_days: mean(&sq).sqrt(),
                relative_norm: mean(&norms),
            });
        }
    }
    Ok(cells)
}

/// Days `1, 8, 15, …` up to 365.
pub fn evenly_spaced_days(step: usize) -> Vec<usize> {
    (1..=DAYS_PER_YEAR).step_by(step.max(1)).collect()
}
