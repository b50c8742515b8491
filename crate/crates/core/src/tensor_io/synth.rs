//! Deterministic synthetic suites with a planted mediator frame.
//!
//! Activations are `x = U_Mᵀ s + snr_probe · U_Zᵀ [sin, cos](2π·doy/365) + U_Nᵀ n + ε`
//! with `s ~ N(0, snr_med² I)`, optional nuisance scores `n ~ N(0, snr_nuisance² I)`
//! and `ε ~ N(0, I)`. Class labels are `argmax R s`. The frames `U_M`, `U_Z`, `U_N`
//! are disjoint row blocks of one Haar frame, so they are exactly orthogonal.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::cache::{names, ActivationCache};
use super::format::TensorRecord;
use crate::error::{MscError, Result};
use crate::geometry::{haar_sample_with, Subspace};
use crate::linalg::Mat;
use crate::rng;

pub const DAYS_PER_YEAR: usize = 365;

/// Logit scale is chosen so that `logit_scale · snr_med` equals this value.
const LOGIT_SPREAD: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSuiteSpec {
    pub d: usize,
    pub k_med: usize,
    pub n_classes: usize,
    pub n_prompts: usize,
    pub snr_med: f64,
    pub snr_probe: f64,
    pub seed: u64,
    /// Rank of an extra high-variance direction block unrelated to the task.
    #[serde(default)]
    pub nuisance_rank: usize,
    #[serde(default)]
    pub snr_nuisance: f64,
    /// Logit bonus for class 0, so a fully ablated model predicts class 0.
    #[serde(default = "default_prior_logit")]
    pub prior_logit: f64,
}

fn default_prior_logit() -> f64 {
    0.09
}

impl Default for SyntheticSuiteSpec {
    fn default() -> Self {
        SyntheticSuiteSpec {
            d: 256,
            k_med: 4,
            n_classes: 8,
            n_prompts: 3650,
            snr_med: 8.0,
            snr_probe: 3.0,
            seed: 7,
            nuisance_rank: 0,
            snr_nuisance: 0.0,
            prior_logit: default_prior_logit(),
        }
    }
}

impl SyntheticSuiteSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MscError::InvalidArgument(m));
        if self.k_med == 0 {
            return bad("k_med must be at least 1".into());
        }
        if self.k_med + 2 + self.nuisance_rank > self.d {
            return bad(format!(
                "k_med + 2 + nuisance_rank = {} exceeds d = {}",
                self.k_med + 2 + self.nuisance_rank,
                self.d
            ));
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if self.n_prompts < 10 * self.n_classes {
            return bad(format!(
                "n_prompts = {} is below 10·n_classes = {}",
                self.n_prompts,
                10 * self.n_classes
            ));
        }
        for (name, v) in [
            ("snr_med", self.snr_med),
            ("snr_probe", self.snr_probe),
            ("snr_nuisance", self.snr_nuisance),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if !self.prior_logit.is_finite() {
            return bad("prior_logit must be finite".into());
        }
        Ok(())
    }

    /// Scale applied to `R·U_M x` to form logits.
    pub fn logit_scale(&self) -> f64 {
        LOGIT_SPREAD / self.snr_med.max(1e-3)
    }
}

/// Day-of-year (1-based) of prompt `i`: days cycle so every day is covered evenly.
pub(crate) fn doy_of_prompt(i: usize) -> usize {
    i % DAYS_PER_YEAR + 1
}

/// Builds the suite cache. Deterministic in `spec` (including seed).
pub fn generate_synthetic_suite(spec: &SyntheticSuiteSpec) -> Result<ActivationCache> {
    spec.validate()?;
    let (d, k, c) = (spec.d, spec.k_med, spec.n_classes);
    let total_rank = k + 2 + spec.nuisance_rank;

    let joint = haar_sample_with(&mut rng::substream(spec.seed, 0), d, total_rank)?;
    let mediator = joint.select(&(0..k).collect::<Vec<_>>());
    let probe_signal = joint.select(&[k, k + 1]);
    let nuisance = joint.select(&(k + 2..total_rank).collect::<Vec<_>>());

    let mut rr = rng::substream(spec.seed, 1);
    let readout = Mat::from_fn(c, k, |_, _| rng::gaussian(&mut rr) / (k as f64).sqrt());

    let n = spec.n_prompts;
    let mut acts = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    let mut doys = Vec::with_capacity(n);
    let mut sample_rng = rng::substream(spec.seed, 2);
    for i in 0..n {
        let row = &mut acts[i * d..(i + 1) * d];
        let s: Vec<f64> = (0..k)
            .map(|_| spec.snr_med * rng::gaussian(&mut sample_rng))
            .collect();
        let nz: Vec<f64> = (0..spec.nuisance_rank)
            .map(|_| spec.snr_nuisance * rng::gaussian(&mut sample_rng))
            .collect();
        for v in row.iter_mut() {
            *v = rng::gaussian(&mut sample_rng);
        }
        let doy = doy_of_prompt(i);
        add_combination(row, &mediator, &s);
        add_combination(row, &nuisance, &nz);
        add_combination(row, &probe_signal, &circular_signal(doy, spec.snr_probe));
        labels.push(argmax_lowest(&(&readout * crate::linalg::Vector::from_vec(s)).as_slice()) as i64);
        doys.push(doy as i64);
    }

    let doy_means = per_doy_means(&acts, &doys, d, &probe_signal, spec.snr_probe);

    let mut meta = Map::new();
    meta.insert("model".into(), json!("synthetic-mediator"));
    meta.insert("layer".into(), json!(0));
    meta.insert("d".into(), json!(d));
    meta.insert("prompt_set".into(), json!(format!("synthetic-seed-{}", spec.seed)));
    meta.insert("logit_scale".into(), json!(spec.logit_scale()));
    meta.insert("suite".into(), serde_json::to_value(spec)?);

    let mut cache = ActivationCache::new(meta);
    cache.insert(TensorRecord::f64(names::ACTIVATIONS, vec![n, d], acts)?)?;
    cache.insert(TensorRecord::i64(names::LABELS, vec![n], labels)?)?;
    cache.insert(TensorRecord::i64(names::DOY, vec![n], doys)?)?;
    cache.insert(TensorRecord::from_matrix(names::DOY_MEANS, &doy_means))?;
    cache.insert(TensorRecord::from_matrix(names::READOUT, &readout))?;
    cache.insert_subspace("mediator", &mediator)?;
    cache.insert_subspace("probe_signal", &probe_signal)?;
    if spec.nuisance_rank > 0 {
        cache.insert_subspace("nuisance", &nuisance)?;
    }
    Ok(cache)
}

/// Reads the suite spec back from a cache's meta block.
pub fn suite_spec_of(meta: &Map<String, Value>) -> Result<SyntheticSuiteSpec> {
    let v = meta
        .get("suite")
        .ok_or_else(|| MscError::Manifest("cache has no synthetic suite meta".into()))?;
    Ok(serde_json::from_value(v.clone())?)
}

fn circular_signal(doy: usize, amp: f64) -> [f64; 2] {
    let phase = TAU * doy as f64 / DAYS_PER_YEAR as f64;
    [amp * phase.sin(), amp * phase.cos()]
}

fn add_combination(row: &mut [f64], frame: &Subspace, coeffs: &[f64]) {
    for (j, &a) in coeffs.iter().enumerate() {
        for (r, b) in row.iter_mut().zip(frame.basis().row(j).iter()) {
            *r += a * b;
        }
    }
}

pub(crate) fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// 365×d per-day means; days without prompts get their noise-free expectation.
fn per_doy_means(acts: &[f64], doys: &[i64], d: usize, probe: &Subspace, amp: f64) -> Mat {
    let mut sums = Mat::zeros(DAYS_PER_YEAR, d);
    let mut counts = vec![0usize; DAYS_PER_YEAR];
    for (i, &doy) in doys.iter().enumerate() {
        let r = doy as usize - 1;
        counts[r] += 1;
        for (j, v) in acts[i * d..(i + 1) * d].iter().enumerate() {
            sums[(r, j)] += v;
        }
    }
    for (r, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            sums.row_mut(r).scale_mut(1.0 / cnt as f64);
        } else {
            let mut row = vec![0.0; d];
            add_combination(&mut row, probe, &circular_signal(r + 1, amp));
            sums.set_row(r, &nalgebra::RowDVector::from_vec(row));
        }
    }
    sums
}
