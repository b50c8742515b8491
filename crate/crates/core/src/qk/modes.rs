//! Offset-mode extraction by Gaussian-mixture BIC and cross-population
//! mode-coincidence tests.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::rng;

pub const EM_RESTARTS: usize = 8;
pub const VARIANCE_FLOOR: f64 = 0.25;
const EM_MAX_ITER: usize = 500;
const EM_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub log_likelihood: f64,
}

impl Mixture {
    pub fn components(&self) -> usize {
        self.means.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub components: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    /// Centers of the selected mixture, ascending.
    pub centers: Vec<f64>,
    pub selected: Mixture,
    pub bic_table: Vec<BicRow>,
}

impl ModeFit {
    /// Distinct center magnitudes, merging those within `tol` of each other.
    pub fn magnitudes(&self, tol: f64) -> Vec<f64> {
        let mut mags: Vec<f64> = self.centers.iter().map(|c| c.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for m in mags {
            match groups.last_mut() {
                Some(g) if m - g[g.len() - 1] <= tol => g.push(m),
                _ => groups.push(vec![m]),
            }
        }
        groups.iter().map(|g| crate::linalg::mean(g)).collect()
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn em(xs: &[f64], init_means: Vec<f64>) -> Mixture {
    let n = xs.len();
    let k = init_means.len();
    let total_var = crate::linalg::std_dev(xs).powi(2).max(VARIANCE_FLOOR);
    let mut weights = vec![1.0 / k as f64; k];
    let mut means = init_means;
    let mut vars = vec![total_var; k];
    let mut resp = vec![0.0; n * k];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    let mut terms = vec![0.0; k];
    for _ in 0..EM_MAX_ITER {
        ll = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            for j in 0..k {
                terms[j] = weights[j].ln() + log_normal(x, means[j], vars[j]);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        for j in 0..k {
            let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nj < 1e-12 {
                // Empty component: park it on the worst-explained point.
                weights[j] = 1e-12;
                continue;
            }
            let mu = (0..n).map(|i| resp[i * k + j] * xs[i]).sum::<f64>() / nj;
            let var = (0..n).map(|i| resp[i * k + j] * (xs[i] - mu).powi(2)).sum::<f64>() / nj;
            weights[j] = nj / n as f64;
            means[j] = mu;
            vars[j] = var.max(VARIANCE_FLOOR);
        }
        if (ll - prev).abs() <= EM_TOL * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    Mixture {
        weights: order.iter().map(|&j| weights[j]).collect(),
        means: order.iter().map(|&j| means[j]).collect(),
        variances: order.iter().map(|&j| vars[j]).collect(),
        log_likelihood: ll,
    }
}

/// Best of [`EM_RESTARTS`] EM runs with `k` components.
///
/// The first start places means at evenly spaced quantiles; the others pick
/// `k` data points from a seeded stream.
pub fn fit_mixture(xs: &[f64], k: usize, seed: u64) -> Result<Mixture> {
    if k == 0 || xs.len() < k {
        return Err(MscError::InvalidArgument(format!(
            "cannot fit {k} components to {} points",
            xs.len()
        )));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(MscError::InvalidArgument("offsets must be finite".into()));
    }
    let sorted = crate::linalg::sorted(xs);
    let mut best: Option<Mixture> = None;
    for r in 0..EM_RESTARTS {
        let init: Vec<f64> = if r == 0 {
            (0..k)
                .map(|j| crate::linalg::quantile_sorted(&sorted, (j as f64 + 0.5) / k as f64))
                .collect()
        } else {
            let mut g = rng::substream(seed, (k * EM_RESTARTS + r) as u64);
            let mut idx = rng::permutation(&mut g, xs.len());
            idx.truncate(k);
            idx.iter().map(|&i| xs[i]).collect()
        };
        let fit = em(xs, init);
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood + 1e-9) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fits 1..=`max_components` mixtures and keeps the BIC-minimal one
/// (ties go to fewer components).
pub fn offset_modes(c_stars: &[f64], max_components: usize, seed: u64) -> Result<ModeFit> {
    if c_stars.len() < 4 {
        return Err(MscError::InvalidArgument(format!(
            "need at least 4 offsets, got {}",
            c_stars.len()
        )));
    }
    if max_components == 0 {
        return Err(MscError::InvalidArgument("max_components must be >= 1".into()));
    }
    let n = c_stars.len() as f64;
    let mut table = Vec::new();
    let mut best: Option<(f64, Mixture)> = None;
    for k in 1..=max_components.min(c_stars.len()) {
        let fit = fit_mixture(c_stars, k, seed)?;
        let bic = -2.0 * fit.log_likelihood + (3 * k - 1) as f64 * n.ln();
        table.push(BicRow {
            components: k,
            log_likelihood: fit.log_likelihood,
            bic,
        });
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    let (_, selected) = best.expect("k = 1 is always fitted");
    Ok(ModeFit {
        centers: selected.means.clone(),
        selected,
        bic_table: table,
    })
}

/// Number of cross pairs `(a, b)` with `|a − b| ≤ tolerance`.
pub fn matched_modes(modes_a: &[f64], modes_b: &[f64], tolerance: f64) -> usize {
    modes_a
        .iter()
        .map(|a| modes_b.iter().filter(|b| (a - *b).abs() <= tolerance).count())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceTest {
    pub observed: usize,
    pub tolerance: f64,
    pub n_mc: usize,
    pub p_value: f64,
    /// Null frequency of each match count.
    pub null_counts: Vec<usize>,
}

/// Largest offset magnitude a null mode can take.
pub const MAX_MODE_OFFSET: i64 = 182;

/// Monte-Carlo test of whether two mode sets share more modes than
/// independent sets of the same sizes drawn from Uniform{1..182}.
pub fn mode_coincidence_test(
    modes_a: &[f64],
    modes_b: &[f64],
    tolerance: f64,
    n_mc: usize,
    seed: u64,
) -> Result<CoincidenceTest> {
    if modes_a.is_empty() || modes_b.is_empty() {
        return Err(MscError::InvalidArgument("mode sets must be nonempty".into()));
    }
    if n_mc == 0 || !(tolerance >= 0.0) {
        return Err(MscError::InvalidArgument(
            "need n_mc >= 1 and a nonnegative tolerance".into(),
        ));
    }
    let observed = matched_modes(modes_a, modes_b, tolerance);
    let (na, nb) = (modes_a.len(), modes_b.len());
    let draws: Vec<usize> = (0..n_mc)
        .into_par_iter()
        .map(|j| {
            let mut g = rng::substream(seed, j as u64);
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| g.random_range(1..=MAX_MODE_OFFSET) as f64).collect()
            };
            let a = draw(na);
            let b = draw(nb);
            matched_modes(&a, &b, tolerance)
        })
        .collect();
    let mut null_counts = vec![0usize; na * nb + 1];
    for &c in &draws {
        null_counts[c] += 1;
    }
    let beyond = draws.iter().filter(|&&c| c >= observed).count();
    Ok(CoincidenceTest {
        observed,
        tolerance,
        n_mc,
        p_value: (1 + beyond) as f64 / (n_mc + 1) as f64,
        null_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offsets_give_one_mode() {
        let fit = offset_modes(&[30.0; 12], 4, 1).unwrap();
        assert_eq!(fit.centers.len(), 1);
        assert!((fit.centers[0] - 30.0).abs() < 1e-9);
        assert_eq!(fit.selected.variances[0], VARIANCE_FLOOR);
        assert_eq!(fit.bic_table.len(), 4);
    }

    #[test]
    fn four_planted_modes_recovered() {
        let mut g = rng::stream(11);
        let mut xs = Vec::new();
        for &c in &[-61.0, -30.0, 30.0, 61.0] {
            for _ in 0..40 {
                xs.push(c + rng::gaussian(&mut g));
            }
        }
        let fit = offset_modes(&xs, 4, 3).unwrap();
        assert_eq!(fit.centers.len(), 4);
        for (c, t) in fit.centers.iter().zip([-61.0, -30.0, 30.0, 61.0]) {
            assert!((c - t).abs() < 2.0, "{:?}", fit.centers);
        }
        let mags = fit.magnitudes(3.0);
        assert_eq!(mags.len(), 2);
    }

    #[test]
    fn uniform_offsets_mostly_one_mode() {
        let mut ones = 0;
        // 24 offsets, the size of a typical selected-head population.
        for s in 0..40u64 {
            let mut g = rng::stream(100 + s);
            let xs: Vec<f64> = (0..24).map(|_| g.random_range(-182..=182) as f64).collect();
            if offset_modes(&xs, 4, s).unwrap().centers.len() == 1 {
                ones += 1;
            }
        }
        assert!(ones > 20, "k = 1 chosen in {ones}/40 seeds");
    }

    #[test]
    fn too_few_offsets_rejected() {
        assert!(offset_modes(&[1.0, 2.0, 3.0], 4, 0).is_err());
    }

    #[test]
    fn coincidence_extremes() {
        let n = 2000;
        let t = mode_coincidence_test(&[45.0], &[45.0], 3.0, n, 5).unwrap();
        // chance of a match is about 7/182
        assert!(t.p_value < 0.06);
        let far = mode_coincidence_test(&[10.0], &[170.0], 3.0, n, 5).unwrap();
        assert_eq!(far.observed, 0);
        assert_eq!(far.p_value, 1.0);
    }

    #[test]
    fn coincidence_matches_exact_pair_probability() {
        // One mode each: P(|a − b| ≤ τ) by enumeration over the 182² pairs.
        let tau = 3;
        let hits = (1..=182i64)
            .flat_map(|a| (1..=182i64).map(move |b| (a - b).abs() <= tau))
            .filter(|&m| m)
            .count();
        let exact = hits as f64 / (182.0 * 182.0);
        let t = mode_coincidence_test(&[50.0], &[51.0], tau as f64, 40_000, 9).unwrap();
        let se = (exact * (1.0 - exact) / 40_000.0).sqrt();
        assert!((t.p_value - exact).abs() < 4.0 * se, "{} vs {exact}", t.p_value);
    }
}
