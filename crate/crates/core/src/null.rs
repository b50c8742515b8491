//! Analytic and Monte-Carlo nulls for angle statistics between random frames,
//! plus the whitening transform used to repeat comparisons in Σ^{-1/2} coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::geometry::{haar_sample_with, orthonormalize, principal_angles, Subspace};
use crate::linalg::{center_columns, mean, quantile_sorted, std_dev, sym_eigen_desc, Mat};
use crate::rng;

/// Relative ridge added to the covariance before inversion.
pub const WHITEN_RIDGE_FACTOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    MeanAngle,
    SumCos2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Tail where null draws are at least the observed value.
    Above,
    /// Tail where null draws are at most the observed value.
    Below,
}

/// Null expectations: `(mean angle in radians, E Σcos²θ)`.
///
/// `E Σcos²θ = k1·k2/d` is exact. The angle is `arccos √(k_max/d)`, the angle whose
/// squared cosine equals the expected per-angle cos².
pub fn analytic_null(d: usize, k1: usize, k2: usize) -> Result<(f64, f64)> {
    check_dims(d, k1, k2)?;
    let kmax = k1.max(k2) as f64;
    let angle = (kmax / d as f64).sqrt().min(1.0).acos();
    Ok((angle, (k1 * k2) as f64 / d as f64))
}

fn check_dims(d: usize, k1: usize, k2: usize) -> Result<()> {
    if k1 == 0 || k2 == 0 || k1 > d || k2 > d {
        return Err(MscError::InvalidArgument(format!(
            "need 1 <= k1, k2 <= d, got d={d}, k1={k1}, k2={k2}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub analytic_mean_angle: f64,
    pub analytic_sum_cos2: f64,
    /// Sorted per-draw mean angles (radians).
    pub mean_angles: Vec<f64>,
    /// Sorted per-draw Σcos²θ.
    pub sum_cos2: Vec<f64>,
    pub n_draws: usize,
    pub seed: u64,
}

impl NullCalibration {
    pub fn draws(&self, stat: Statistic) -> &[f64] {
        match stat {
            Statistic::MeanAngle => &self.mean_angles,
            Statistic::SumCos2 => &self.sum_cos2,
        }
    }

    pub fn mean(&self, stat: Statistic) -> f64 {
        mean(self.draws(stat))
    }

    pub fn sd(&self, stat: Statistic) -> f64 {
        std_dev(self.draws(stat))
    }

    /// Monte-Carlo standard error of the mean.
    pub fn se(&self, stat: Statistic) -> f64 {
        self.sd(stat) / (self.n_draws as f64).sqrt()
    }

    pub fn quantile(&self, stat: Statistic, q: f64) -> f64 {
        quantile_sorted(self.draws(stat), q)
    }

    /// 5–95% band of a statistic.
    pub fn band(&self, stat: Statistic) -> (f64, f64) {
        (self.quantile(stat, 0.05), self.quantile(stat, 0.95))
    }
}

/// Monte-Carlo null of angle statistics between a Haar rank-`k1` frame and
/// either an independent Haar rank-`k2` frame or `fixed`.
///
/// Draw `j` uses substream `(seed, j)`, so results do not depend on thread count.
pub fn monte_carlo_null(
    d: usize,
    k1: usize,
    k2: usize,
    n_draws: usize,
    seed: u64,
    fixed: Option<&Subspace>,
) -> Result<NullCalibration> {
    monte_carlo_null_mapped(d, k1, k2, n_draws, seed, fixed, None)
}

/// [`monte_carlo_null`] with every Haar draw mapped through `whitening` before
/// comparison. `fixed` is used as given.
pub fn monte_carlo_null_whitened(
    whitening: &WhiteningTransform,
    k1: usize,
    k2: usize,
    n_draws: usize,
    seed: u64,
    fixed: Option<&Subspace>,
) -> Result<NullCalibration> {
    let d = whitening.w.nrows();
    monte_carlo_null_mapped(d, k1, k2, n_draws, seed, fixed, Some(whitening))
}

fn monte_carlo_null_mapped(
    d: usize,
    k1: usize,
    k2: usize,
    n_draws: usize,
    seed: u64,
    fixed: Option<&Subspace>,
    whitening: Option<&WhiteningTransform>,
) -> Result<NullCalibration> {
    check_dims(d, k1, k2)?;
    if n_draws < 100 {
        return Err(MscError::InvalidArgument(format!(
            "n_draws must be at least 100, got {n_draws}"
        )));
    }
    if let Some(f) = fixed {
        if f.dim() != d || f.rank() != k2 {
            return Err(MscError::DimensionMismatch(format!(
                "fixed frame is {}×{}, expected {k2}×{d}",
                f.rank(),
                f.dim()
            )));
        }
    }
    let map = |u: Subspace| -> Result<Subspace> {
        match whitening {
            Some(w) => w.apply_to_subspace(&u),
            None => Ok(u),
        }
    };
    let pairs: Vec<(f64, f64)> = (0..n_draws)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let mut r = rng::substream(seed, j as u64);
            let u = map(haar_sample_with(&mut r, d, k1)?)?;
            let a = match fixed {
                Some(f) => principal_angles(&u, f)?,
                None => principal_angles(&u, &map(haar_sample_with(&mut r, d, k2)?)?)?,
            };
            Ok((a.mean_angle, a.sum_cos2))
        })
        .collect::<Result<_>>()?;
    let (mut mean_angles, mut sum_cos2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    mean_angles.sort_by(f64::total_cmp);
    sum_cos2.sort_by(f64::total_cmp);
    let (analytic_mean_angle, analytic_sum_cos2) = analytic_null(d, k1, k2)?;
    Ok(NullCalibration {
        d,
        k1,
        k2,
        analytic_mean_angle,
        analytic_sum_cos2,
        mean_angles,
        sum_cos2,
        n_draws,
        seed,
    })
}

/// Add-one-smoothed tail probability `(1 + #beyond) / (n + 1)`.
pub fn empirical_p(cal: &NullCalibration, observed: f64, stat: Statistic, side: Side) -> Result<f64> {
    let draws = cal.draws(stat);
    if draws.is_empty() {
        return Err(MscError::InvalidArgument("empty calibration".into()));
    }
    Ok(tail_p(draws, observed, side))
}

/// Add-one tail probability against sorted draws.
pub(crate) fn tail_p(sorted_draws: &[f64], observed: f64, side: Side) -> f64 {
    let beyond = match side {
        Side::Above => sorted_draws.len() - sorted_draws.partition_point(|&v| v < observed),
        Side::Below => sorted_draws.partition_point(|&v| v <= observed),
    };
    (1 + beyond) as f64 / (sorted_draws.len() + 1) as f64
}

/// `W = (Σ + λI)^{-1/2}` with `λ = 1e-3·tr(Σ)/d` and eigenvalues floored at `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningTransform {
    pub w: Mat,
    pub ridge: f64,
    pub mean: Vec<f64>,
}

impl WhiteningTransform {
    /// Estimates the transform from the rows of `x`.
    pub fn fit(x: &Mat) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 || d == 0 {
            return Err(MscError::InvalidArgument(format!(
                "whitening needs at least 2 rows, got {n}"
            )));
        }
        let (xc, mu) = center_columns(x);
        let sigma = (xc.transpose() * &xc) / (n as f64 - 1.0);
        let trace = sigma.trace();
        if !(trace > 0.0) {
            return Err(MscError::Degenerate("all rows are equal".into()));
        }
        let ridge = WHITEN_RIDGE_FACTOR * trace / d as f64;
        let (vals, vecs) = sym_eigen_desc(&(sigma + Mat::identity(d, d) * ridge));
        let scaled = Mat::from_fn(d, d, |i, j| vecs[(i, j)] / vals[j].max(ridge).sqrt());
        let w = &scaled * vecs.transpose();
        let w = (&w + w.transpose()) * 0.5;
        Ok(WhiteningTransform {
            w,
            ridge,
            mean: mu.iter().copied().collect(),
        })
    }

    /// Centers and whitens each row of `x`.
    pub fn apply_rows(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.w.nrows() {
            return Err(MscError::DimensionMismatch(format!(
                "rows have width {}, transform is {}×{}",
                x.ncols(),
                self.w.nrows(),
                self.w.ncols()
            )));
        }
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        Ok(xc * &self.w)
    }

    /// Frame spanned by `W b` for each basis row `b`.
    pub fn apply_to_subspace(&self, u: &Subspace) -> Result<Subspace> {
        if u.dim() != self.w.nrows() {
            return Err(MscError::DimensionMismatch(format!(
                "subspace d={} vs transform d={}",
                u.dim(),
                self.w.nrows()
            )));
        }
        orthonormalize(&(u.basis() * &self.w))
    }
}

/// Whitening transform estimated from a data matrix (rows are samples).
pub fn whiten(x: &Mat) -> Result<WhiteningTransform> {
    WhiteningTransform::fit(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ContinuousCDF, Uniform};

    #[test]
    fn analytic_values() {
        let (a, s) = analytic_null(2304, 2, 2).unwrap();
        assert!((a.to_degrees() - 88.31).abs() < 0.005);
        assert!((s - 0.00174).abs() < 5e-6);
        let (_, s4) = analytic_null(2304, 4, 4).unwrap();
        assert!((s4 - 0.00694).abs() < 5e-6);
        let (full, sf) = analytic_null(5, 5, 5).unwrap();
        assert_eq!(full, 0.0);
        assert_eq!(sf, 5.0);
        assert!(analytic_null(5, 0, 1).is_err());
    }

    #[test]
    fn small_d_trace_identity() {
        // At k = d the identity is exact for every draw.
        let cal = monte_carlo_null(4, 4, 4, 200, 1, None).unwrap();
        for s in &cal.sum_cos2 {
            assert_relative_eq!(*s, 4.0, epsilon = 1e-10);
        }
        let cal = monte_carlo_null(16, 4, 4, 50_000, 2, None).unwrap();
        let m = cal.mean(Statistic::SumCos2);
        assert!((m - 1.0).abs() < 4.0 * cal.se(Statistic::SumCos2), "mean {m}");
    }

    #[test]
    fn cross_rank_trace_identity() {
        for (d, k1, k2) in [(20, 2, 5), (50, 3, 1), (12, 6, 6)] {
            let cal = monte_carlo_null(d, k1, k2, 20_000, 3, None).unwrap();
            let m = cal.mean(Statistic::SumCos2);
            let target = (k1 * k2) as f64 / d as f64;
            assert!((m - target).abs() < 4.0 * cal.se(Statistic::SumCos2), "({d},{k1},{k2}): {m}");
        }
    }

    #[test]
    fn fixed_frame_trace_identity() {
        let fixed = Subspace::coordinate(30, &[0, 1, 2]).unwrap();
        let cal = monte_carlo_null(30, 2, 3, 20_000, 4, Some(&fixed)).unwrap();
        let m = cal.mean(Statistic::SumCos2);
        assert!((m - 0.2).abs() < 4.0 * cal.se(Statistic::SumCos2));
    }

    #[test]
    fn draws_are_sorted_and_deterministic() {
        let a = monte_carlo_null(40, 2, 2, 500, 9, None).unwrap();
        assert!(a.sum_cos2.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.mean_angles.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(a, monte_carlo_null(40, 2, 2, 500, 9, None).unwrap());
        assert!(monte_carlo_null(40, 2, 2, 99, 9, None).is_err());
    }

    #[test]
    fn p_value_cases() {
        let cal = monte_carlo_null(200, 2, 2, 2000, 5, None).unwrap();
        let med = cal.quantile(Statistic::MeanAngle, 0.5);
        let p = empirical_p(&cal, med, Statistic::MeanAngle, Side::Above).unwrap();
        assert!((p - 0.5).abs() < 0.05);
        let p = empirical_p(&cal, 2.0, Statistic::SumCos2, Side::Above).unwrap();
        assert_eq!(p, 1.0 / 2001.0);
        let empty = NullCalibration {
            mean_angles: vec![],
            sum_cos2: vec![],
            n_draws: 0,
            ..cal
        };
        assert!(empirical_p(&empty, 0.0, Statistic::SumCos2, Side::Above).is_err());
    }

    #[test]
    fn tail_counts_ties_inclusively() {
        let draws = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(tail_p(&draws, 2.0, Side::Above), 4.0 / 5.0);
        assert_eq!(tail_p(&draws, 2.0, Side::Below), 4.0 / 5.0);
        assert_eq!(tail_p(&draws, 0.5, Side::Below), 1.0 / 5.0);
    }

    #[test]
    fn p_values_of_fresh_draws_are_uniform() {
        let cal = monte_carlo_null(24, 3, 3, 4000, 11, None).unwrap();
        let fresh = monte_carlo_null(24, 3, 3, 400, 12, None).unwrap();
        // Fresh draws are sorted; the KS statistic does not care about order.
        let mut ps: Vec<f64> = fresh
            .sum_cos2
            .iter()
            .map(|&s| tail_p(&cal.sum_cos2, s, Side::Above))
            .collect();
        ps.sort_by(f64::total_cmp);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let n = ps.len() as f64;
        let ks = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let f = u.cdf(p);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // Critical value at alpha = 0.01: 1.628 / sqrt(n).
        assert!(ks < 1.628 / n.sqrt(), "KS = {ks}");
    }

    #[test]
    fn whitening_isotropic_data() {
        let mut r = rng::stream(21);
        let x = Mat::from_fn(4000, 6, |_, _| 2.0 * rng::gaussian(&mut r));
        let t = whiten(&x).unwrap();
        let diag: f64 = (0..6).map(|i| t.w[(i, i)].powi(2)).sum::<f64>();
        let off = t.w.norm_squared() - diag;
        assert!(off < 0.05 * diag);
        let z = t.apply_rows(&x).unwrap();
        let cov = (z.transpose() * &z) / 3999.0;
        assert!((cov - Mat::identity(6, 6)).norm() < 0.01);
    }

    #[test]
    fn whitening_inverts_the_regularized_covariance() {
        let mut r = rng::stream(5);
        let a = Mat::from_fn(8, 8, |_, _| rng::gaussian(&mut r));
        let x = Mat::from_fn(300, 8, |_, _| rng::gaussian(&mut r)) * a;
        let t = whiten(&x).unwrap();
        let (xc, _) = center_columns(&x);
        let sigma = (xc.transpose() * &xc) / 299.0 + Mat::identity(8, 8) * t.ridge;
        let check = &t.w * sigma * &t.w;
        assert!((check - Mat::identity(8, 8)).norm() < 1e-6 * 8.0);
    }

    #[test]
    fn whitening_rejects_constant_rows() {
        let x = Mat::from_element(10, 3, 1.5);
        assert!(matches!(whiten(&x), Err(MscError::Degenerate(_))));
    }
}
