//! The end-to-end readout-mediator diagnostic: fit a probe and a DAS mediator
//! at the same site, measure their angle, and compare ablation damage against
//! random controls.

mod fieller;
mod subset;

pub use fieller::{
    fieller, specificity_from_summary, specificity_interval, FiellerSet, Specificity, Z_95,
};
pub use subset::{canonical_subsets, subset_ablation_sweep, SubsetAblationSweep, SubsetEffect, MAX_SWEEP_RANK};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::geometry::{haar_sample_with, principal_angles, Subspace};
use crate::linalg::{quantile_sorted, sorted, Mat};
use crate::mediator::{das_fit_seeds, DasConfig, TaskModel};
use crate::null::{monte_carlo_null, tail_p, Side, Statistic};
use crate::probes::fit_circular_probe;
use crate::rng;

/// Stream tags separating the diagnostic's random draws.
const TAG_DAS: u64 = 1;
const TAG_CONTROLS: u64 = 2;
const TAG_ANGLE_NULL: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticConfig {
    pub k: usize,
    pub n_null: usize,
    pub seed: u64,
    pub das_steps: usize,
    pub das_seeds: usize,
    pub ridge_alpha: f64,
    pub harmonics: usize,
    pub folds: usize,
    /// Haar draws for the probe-vs-DAS angle null band.
    pub angle_null_draws: usize,
}

impl DiagnosticConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        DiagnosticConfig {
            k,
            n_null: 25,
            seed,
            das_steps: 400,
            das_seeds: 1,
            ridge_alpha: crate::probes::DEFAULT_RIDGE_ALPHA,
            harmonics: 1,
            folds: crate::probes::DEFAULT_FOLDS,
            angle_null_draws: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub probe_k: usize,
    pub probe_cv_r2: f64,
    /// Mean principal angle between probe and DAS spans, degrees.
    pub theta_bar: f64,
    pub angles_deg: Vec<f64>,
    pub sum_cos2: f64,
    /// 5–95% band of θ̄ under the Haar null, degrees.
    pub null_band: (f64, f64),
    /// Probability that a Haar pair is at most as far apart as observed.
    pub null_p_below: f64,
    pub theta_in_null_band: bool,
    pub clean_accuracy: f64,
    pub probe_ablated_accuracy: f64,
    pub das_ablated_accuracy: f64,
    /// Accuracy drops in percentage points.
    pub delta_p: f64,
    pub delta_m: f64,
    pub random_drops: Vec<f64>,
    pub random_envelope: (f64, f64),
    pub rho_k: Option<f64>,
    pub fieller: FiellerSet,
    pub delta_add: f64,
    pub random_mean: f64,
    pub random_se: f64,
    pub n_null: usize,
    pub das_seeds: Vec<u64>,
    pub das_converged: bool,
    pub das_final_nll: f64,
    pub clean_nll: f64,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub probe_subspace: Option<Subspace>,
    #[serde(skip)]
    pub das_subspace: Option<Subspace>,
}

/// Probe fit → DAS fit → angles → clean/probe/DAS/random ablation accuracy →
/// specificity ratio, additive baseline and Fieller set.
pub fn run_diagnostic<M: TaskModel + ?Sized>(
    model: &M,
    xs: &Mat,
    labels: &[usize],
    doys: &[usize],
    cfg: &DiagnosticConfig,
) -> Result<DiagnosticReport> {
    let (n, d) = xs.shape();
    if cfg.n_null < 5 {
        return Err(MscError::InvalidArgument(format!(
            "n_null must be at least 5, got {}",
            cfg.n_null
        )));
    }
    if cfg.k == 0 || cfg.k > d {
        return Err(MscError::InvalidArgument(format!("need 1 <= k <= d, got k={}", cfg.k)));
    }
    if cfg.das_seeds == 0 {
        return Err(MscError::InvalidArgument("das_seeds must be at least 1".into()));
    }
    let probe_k = cfg.k.min(2 * cfg.harmonics);
    let probe = fit_circular_probe(xs, doys, cfg.ridge_alpha, cfg.folds, cfg.harmonics, probe_k)?;

    let das_seeds: Vec<u64> = (0..cfg.das_seeds as u64)
        .map(|i| rng::mix(rng::mix(cfg.seed, TAG_DAS), i))
        .collect();
    let das_cfg = DasConfig::new(cfg.k, das_seeds[0]).with_steps(cfg.das_steps);
    let das = das_fit_seeds(model, xs, labels, &das_cfg, &das_seeds)?;
    let best = das.best_run();

    let angles = principal_angles(&probe.subspace, &best.subspace)?;
    let theta = angles.mean_angle_deg();
    let null = monte_carlo_null(
        d,
        probe_k,
        cfg.k,
        cfg.angle_null_draws,
        rng::mix(cfg.seed, TAG_ANGLE_NULL),
        None,
    )?;
    let band = null.band(Statistic::MeanAngle);
    let null_band = (band.0.to_degrees(), band.1.to_degrees());
    let null_p_below = tail_p(null.draws(Statistic::MeanAngle), angles.mean_angle, Side::Below);

    let clean = model.evaluate(xs, labels, None)?;
    let clean_acc = clean.accuracy(labels);
    let probe_acc = model.evaluate(xs, labels, Some(&probe.subspace))?.accuracy(labels);
    let das_acc = model.evaluate(xs, labels, Some(&best.subspace))?.accuracy(labels);
    let control_seed = rng::mix(cfg.seed, TAG_CONTROLS);
    let random_accs: Vec<f64> = (0..cfg.n_null)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let u = haar_sample_with(&mut rng::substream(control_seed, j as u64), d, cfg.k)?;
            Ok(model.evaluate(xs, labels, Some(&u))?.accuracy(labels))
        })
        .collect::<Result<_>>()?;

    let pp = |acc: f64| 100.0 * (clean_acc - acc);
    let delta_p = pp(probe_acc);
    let delta_m = pp(das_acc);
    let random_drops: Vec<f64> = random_accs.iter().map(|&a| pp(a)).collect();
    let spec = specificity_interval(delta_m, &random_drops)?;
    let s = sorted(&random_drops);
    let envelope = (quantile_sorted(&s, 0.05), quantile_sorted(&s, 0.95));

    let mut flags = Vec::new();
    if delta_m == 0.0 && random_drops.iter().all(|&v| v == 0.0) && delta_p == 0.0 {
        flags.push("zero-signal".to_string());
    }
    if spec.rho.is_none() {
        flags.push("rho-undefined".to_string());
    }
    if !best.converged {
        flags.push("das-not-converged".to_string());
    }

    Ok(DiagnosticReport {
        d,
        n,
        k: cfg.k,
        probe_k,
        probe_cv_r2: probe.score,
        theta_bar: theta,
        angles_deg: angles.degrees(),
        sum_cos2: angles.sum_cos2,
        null_band,
        null_p_below,
        theta_in_null_band: theta >= null_band.0 && theta <= null_band.1,
        clean_accuracy: clean_acc,
        probe_ablated_accuracy: probe_acc,
        das_ablated_accuracy: das_acc,
        delta_p,
        delta_m,
        random_drops,
        random_envelope: envelope,
        rho_k: spec.rho,
        fieller: spec.fieller,
        delta_add: spec.delta_add,
        random_mean: spec.random_mean,
        random_se: spec.random_se,
        n_null: cfg.n_null,
        das_seeds,
        das_converged: best.converged,
        das_final_nll: best.final_nll,
        clean_nll: clean.mean_nll(),
        flags,
        probe_subspace: Some(probe.subspace),
        das_subspace: Some(best.subspace.clone()),
    })
}
