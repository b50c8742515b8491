//! Kraskov k-nearest-neighbour mutual information and a phase-randomized null.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{MscError, Result};
use crate::null::{tail_p, Side};
use crate::rng;

pub const DEFAULT_NEIGHBORS: usize = 5;
pub const DEFAULT_SHUFFLES: usize = 200;
const MIN_SAMPLES: usize = 20;
const MIN_SURROGATE_LEN: usize = 16;
const MIN_SHUFFLES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Estimate floored at zero.
    pub mi_nats: f64,
    /// Unfloored estimator output; can be slightly negative.
    pub raw: f64,
    pub k_neighbors: usize,
    pub n: usize,
    /// Set when one input is constant and MI is undefined (reported as 0).
    pub constant_input: bool,
    pub p_phase_shuffle: Option<f64>,
}

fn check_inputs(a: &[f64], b: &[f64], k: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(MscError::DimensionMismatch(format!(
            "{} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    if a.len() < MIN_SAMPLES {
        return Err(MscError::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            a.len()
        )));
    }
    if k == 0 || k >= a.len() {
        return Err(MscError::InvalidArgument(format!("k = {k} out of range")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MscError::InvalidArgument("inputs contain NaN or infinity".into()));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Number of entries of `sorted` strictly within `r` of `x`.
fn count_within(sorted: &[f64], x: f64, r: f64) -> usize {
    // Widen the bisection window, then apply the exact test `|v − x| < r` so
    // the count agrees with the distance used to pick `r`.
    let slack = 4.0 * f64::EPSILON * (x.abs() + r);
    let lo = sorted.partition_point(|&v| v < x - r - slack);
    let hi = sorted.partition_point(|&v| v <= x + r + slack);
    sorted[lo..hi].iter().filter(|&&v| (v - x).abs() < r).count()
}

fn ksg_raw(a: &[f64], b: &[f64], k: usize) -> f64 {
    let n = a.len();
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let marginal: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dist: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (a[i] - a[j]).abs().max((b[i] - b[j]).abs()))
                .collect();
            let (_, eps, _) = dist.select_nth_unstable_by(k - 1, f64::total_cmp);
            let eps = *eps;
            // counts exclude the point itself
            let nx = count_within(&sa, a[i], eps) - 1;
            let ny = count_within(&sb, b[i], eps) - 1;
            digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0)
        })
        .sum();
    digamma(k as f64) + digamma(n as f64) - marginal / n as f64
}

/// KSG estimator (first variant, max-norm neighbourhoods), in nats.
pub fn ksg_mutual_information(a: &[f64], b: &[f64], k: usize) -> Result<MiEstimate> {
    check_inputs(a, b, k)?;
    let constant = is_constant(a) || is_constant(b);
    let raw = if constant { 0.0 } else { ksg_raw(a, b, k) };
    Ok(MiEstimate {
        mi_nats: raw.max(0.0),
        raw,
        k_neighbors: k,
        n: a.len(),
        constant_input: constant,
        p_phase_shuffle: None,
    })
}

/// Surrogate with the amplitude spectrum of `x` and uniformly random phases
/// (Hermitian-symmetric, so the result is real).
pub fn phase_randomize<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for f in 1..n.div_ceil(2) {
        let phase = Complex::from_polar(1.0, rng.random::<f64>() * TAU);
        let amp = buf[f].norm();
        buf[f] = phase * amp;
        buf[n - f] = buf[f].conj();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// MI estimate with a phase-shuffle p-value: surrogates of `b` are compared
/// with `a`, and the raw estimates are ranked with add-one smoothing.
pub fn phase_shuffle_pvalue(a: &[f64], b: &[f64], k: usize, n_shuffles: usize, seed: u64) -> Result<MiEstimate> {
    check_inputs(a, b, k)?;
    if a.len() < MIN_SURROGATE_LEN {
        return Err(MscError::InvalidArgument(format!(
            "series of length {} is too short for phase surrogates",
            a.len()
        )));
    }
    if n_shuffles < MIN_SHUFFLES {
        return Err(MscError::InvalidArgument(format!(
            "need at least {MIN_SHUFFLES} shuffles, got {n_shuffles}"
        )));
    }
    let mut est = ksg_mutual_information(a, b, k)?;
    if est.constant_input {
        est.p_phase_shuffle = Some(1.0);
        return Ok(est);
    }
    let mut null: Vec<f64> = (0..n_shuffles)
        .into_par_iter()
        .map(|s| {
            let surrogate = phase_randomize(b, &mut rng::substream(seed, s as u64));
            if is_constant(&surrogate) {
                0.0
            } else {
                ksg_raw(a, &surrogate, k)
            }
        })
        .collect();
    null.sort_by(f64::total_cmp);
    est.p_phase_shuffle = Some(tail_p(&null, est.raw, Side::Above));
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut g = rng::stream(seed);
        let a = rng::gaussian_vec(&mut g, n);
        let b = a
            .iter()
            .map(|x| rho * x + (1.0 - rho * rho).sqrt() * rng::gaussian(&mut g))
            .collect();
        (a, b)
    }

    #[test]
    fn independent_gaussians_near_zero() {
        let (a, b) = gaussian_pair(2000, 0.0, 1);
        let e = ksg_mutual_information(&a, &b, 5).unwrap();
        assert!(e.raw.abs() < 0.05, "{}", e.raw);
    }

    #[test]
    fn correlated_gaussians_match_analytic() {
        let (a, b) = gaussian_pair(2000, 0.9, 2);
        let e = ksg_mutual_information(&a, &b, 5).unwrap();
        let exact = -0.5 * (1.0 - 0.81f64).ln();
        assert!((e.mi_nats - exact).abs() < 0.08, "{} vs {exact}", e.mi_nats);
    }

    #[test]
    fn identical_inputs_large_and_growing() {
        let (a, _) = gaussian_pair(2000, 0.0, 3);
        let big = ksg_mutual_information(&a, &a, 5).unwrap().mi_nats;
        let small = ksg_mutual_information(&a[..500], &a[..500], 5).unwrap().mi_nats;
        assert!(big > 3.0, "{big}");
        assert!(big > small);
    }

    #[test]
    fn brute_force_counts_agree() {
        let (a, b) = gaussian_pair(60, 0.5, 4);
        let k = 3;
        let n = a.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (a[i] - a[j]).abs().max((b[i] - b[j]).abs()))
                .collect();
            d.sort_by(f64::total_cmp);
            let eps = d[k - 1];
            let nx = (0..n).filter(|&j| j != i && (a[i] - a[j]).abs() < eps).count();
            let ny = (0..n).filter(|&j| j != i && (b[i] - b[j]).abs() < eps).count();
            total += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
        }
        let oracle = digamma(k as f64) + digamma(n as f64) - total / n as f64;
        assert!((ksg_raw(&a, &b, k) - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_input_flagged() {
        let a = vec![1.0; 30];
        let b: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let e = ksg_mutual_information(&a, &b, 5).unwrap();
        assert!(e.constant_input);
        assert_eq!(e.mi_nats, 0.0);
    }

    #[test]
    fn input_validation() {
        let short = vec![0.0; 10];
        assert!(ksg_mutual_information(&short, &short, 5).is_err());
        let mut a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b = a.clone();
        assert!(phase_shuffle_pvalue(&a, &b, 5, 20, 0).is_err());
        a[3] = f64::NAN;
        assert!(ksg_mutual_information(&a, &b, 5).is_err());
    }

    #[test]
    fn surrogate_keeps_amplitude_spectrum() {
        let (a, _) = gaussian_pair(64, 0.0, 5);
        let s = phase_randomize(&a, &mut rng::stream(1));
        let spec = |x: &[f64]| -> Vec<f64> {
            let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
            FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
            buf.iter().map(|c| c.norm()).collect()
        };
        for (p, q) in spec(&a).iter().zip(spec(&s)) {
            assert!((p - q).abs() < 1e-9);
        }
        assert!(a.iter().zip(&s).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn identical_series_get_extreme_p() {
        let (a, _) = gaussian_pair(200, 0.0, 6);
        let e = phase_shuffle_pvalue(&a, &a, 5, 100, 2).unwrap();
        assert_eq!(e.p_phase_shuffle, Some(1.0 / 101.0));
    }
}
