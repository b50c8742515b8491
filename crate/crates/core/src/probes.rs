//! Linear readouts: circular ridge probes for day-of-year, one-vs-rest ridge
//! classifiers, stratified cross-validation, and bootstrap angle intervals.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::geometry::{principal_angles, Subspace};
use crate::linalg::{center_columns, mean, quantile_sorted, ridge_solve, sorted, std_dev, top_right_frame, Mat};
use crate::rng;
use crate::tensor_io::DAYS_PER_YEAR;

pub const DEFAULT_RIDGE_ALPHA: f64 = 1.0;
pub const DEFAULT_FOLDS: usize = 5;

const MONTH_LENGTHS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// Month index 0..12 of a 1-based day of a non-leap year.
pub fn month_of_doy(doy: usize) -> usize {
    let mut end = 0;
    for (m, len) in MONTH_LENGTHS.iter().enumerate() {
        end += len;
        if doy <= end {
            return m;
        }
    }
    11
}

/// Circular distance between two day values, in `[0, 182.5]`.
pub fn circular_day_distance(a: f64, b: f64) -> f64 {
    let year = DAYS_PER_YEAR as f64;
    let diff = (a - b).rem_euclid(year);
    diff.min(year - diff)
}

/// Affine ridge map `x ↦ Wx + b` with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeMap {
    /// Output rows × d.
    pub weights: Mat,
    pub bias: Vec<f64>,
}

impl RidgeMap {
    pub fn fit(x: &Mat, y: &Mat, alpha: f64) -> Result<Self> {
        let (xc, xm) = center_columns(x);
        let (yc, ym) = center_columns(y);
        let w = ridge_solve(&xc, &yc, alpha)?;
        let bias = (ym.transpose() - xm.transpose() * &w)
            .iter()
            .copied()
            .collect();
        Ok(RidgeMap {
            weights: w.transpose(),
            bias,
        })
    }

    /// Predictions for every row of `x` (n × outputs).
    pub fn predict(&self, x: &Mat) -> Mat {
        let mut out = x * self.weights.transpose();
        for mut row in out.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        out
    }

    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }
}

/// Ridge probe onto `[sin, cos](2πh·doy/365)` for harmonics `h = 1..=H`.
#[derive(Clone, Debug, PartialEq)]
pub struct CircularProbe {
    pub map: RidgeMap,
    pub ridge_alpha: f64,
    pub harmonics: usize,
}

impl CircularProbe {
    pub fn fit(x: &Mat, doys: &[usize], ridge_alpha: f64, harmonics: usize) -> Result<Self> {
        check_rows(x, doys.len())?;
        if harmonics == 0 {
            return Err(MscError::InvalidArgument("harmonics must be >= 1".into()));
        }
        let y = circular_targets(doys, harmonics);
        Ok(CircularProbe {
            map: RidgeMap::fit(x, &y, ridge_alpha)?,
            ridge_alpha,
            harmonics,
        })
    }

    pub fn weights(&self) -> &Mat {
        &self.map.weights
    }

    /// Phase angle (radians) read from the first harmonic.
    pub fn predict_angle(&self, x: &[f64]) -> f64 {
        let out = self.map.predict_one(x);
        out[0].atan2(out[1])
    }

    /// Day-of-year readout in `(0, 365]`.
    pub fn predict_doy(&self, x: &[f64]) -> f64 {
        angle_to_doy(self.predict_angle(x))
    }
}

/// Maps a phase angle to a day in `(0, 365]`.
pub fn angle_to_doy(angle: f64) -> f64 {
    let year = DAYS_PER_YEAR as f64;
    let v = (angle * year / TAU).rem_euclid(year);
    if v == 0.0 {
        year
    } else {
        v
    }
}

/// n × 2H matrix of circular targets.
pub fn circular_targets(doys: &[usize], harmonics: usize) -> Mat {
    Mat::from_fn(doys.len(), 2 * harmonics, |i, j| {
        let h = (j / 2 + 1) as f64;
        let phase = TAU * h * doys[i] as f64 / DAYS_PER_YEAR as f64;
        if j % 2 == 0 {
            phase.sin()
        } else {
            phase.cos()
        }
    })
}

/// One-vs-rest ridge classifier on one-hot targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierProbe {
    pub map: RidgeMap,
    /// Sorted distinct labels; row `j` of the weights scores `classes[j]`.
    pub classes: Vec<usize>,
    pub ridge_alpha: f64,
}

impl ClassifierProbe {
    pub fn fit(x: &Mat, labels: &[usize], ridge_alpha: f64) -> Result<Self> {
        check_rows(x, labels.len())?;
        let classes: Vec<usize> = labels
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if classes.len() < 2 {
            return Err(MscError::InvalidArgument("need at least 2 classes".into()));
        }
        let index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let y = Mat::from_fn(labels.len(), classes.len(), |i, j| {
            if index[&labels[i]] == j {
                1.0
            } else {
                0.0
            }
        });
        Ok(ClassifierProbe {
            map: RidgeMap::fit(x, &y, ridge_alpha)?,
            classes,
            ridge_alpha,
        })
    }

    pub fn weights(&self) -> &Mat {
        &self.map.weights
    }

    /// Highest-scoring class; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let scores = self.map.predict_one(x);
        self.classes[crate::tensor_io::argmax_lowest(&scores)]
    }
}

/// A fitted probe together with its cross-validated score and span.
#[derive(Clone, Debug)]
pub struct ProbeFit<P> {
    pub probe: P,
    /// Held-out R² (circular) or balanced accuracy (classifier).
    pub score: f64,
    pub subspace: Subspace,
    pub folds: usize,
}

/// Fold index per sample: samples are sorted by (stratum, key, index) and dealt
/// round-robin into `k` folds.
pub fn stratified_folds(strata: &[usize], keys: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = strata.len();
    if k < 2 || n < k {
        return Err(MscError::InvalidArgument(format!(
            "cannot build {k} folds from {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        strata[a]
            .cmp(&strata[b])
            .then(keys[a].total_cmp(&keys[b]))
            .then(a.cmp(&b))
    });
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

fn check_min_per_stratum(strata: &[usize], what: &str) -> Result<()> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in strata {
        *counts.entry(s).or_default() += 1;
    }
    if let Some((s, c)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(MscError::InvalidArgument(format!(
            "{what} {s} has {c} sample(s); need at least 2"
        )));
    }
    Ok(())
}

fn split_rows(x: &Mat, idx: &[usize]) -> Mat {
    x.select_rows(idx.iter())
}

fn fold_indices(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == f);
    (train, test)
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r2_score(truth: &[f64], pred: &[f64]) -> f64 {
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

/// Frame of the top-`k` right singular vectors of a weight matrix.
pub fn weight_frame(weights: &Mat, k: usize) -> Result<Subspace> {
    if k == 0 || k > weights.nrows().min(weights.ncols()) {
        return Err(MscError::InvalidArgument(format!(
            "cannot extract rank {k} from a {}×{} weight matrix",
            weights.nrows(),
            weights.ncols()
        )));
    }
    let (frame, sv) = top_right_frame(weights, k);
    if sv[k - 1] <= 1e-6 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(MscError::RankDeficient(format!(
            "weights have rank below {k}"
        )));
    }
    crate::geometry::orthonormalize(&frame)
}

/// Circular ridge probe with month-stratified cross-validated R².
///
/// `cv_r2` averages held-out R² over folds and target components; the final
/// probe is refit on all rows. `k` selects the rank of the extracted span
/// (at most `2·harmonics`).
pub fn fit_circular_probe(
    x: &Mat,
    doys: &[usize],
    ridge_alpha: f64,
    folds: usize,
    harmonics: usize,
    k: usize,
) -> Result<ProbeFit<CircularProbe>> {
    check_rows(x, doys.len())?;
    if doys.iter().any(|&d| d == 0 || d > DAYS_PER_YEAR) {
        return Err(MscError::InvalidArgument("day-of-year labels must lie in 1..=365".into()));
    }
    let months: Vec<usize> = doys.iter().map(|&d| month_of_doy(d)).collect();
    check_min_per_stratum(&months, "month stratum")?;
    let keys: Vec<f64> = doys.iter().map(|&d| d as f64).collect();
    let assignment = stratified_folds(&months, &keys, folds)?;
    let y = circular_targets(doys, harmonics);
    let fold_scores: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<f64> {
            let (train, test) = fold_indices(&assignment, f);
            let train_doys: Vec<usize> = train.iter().map(|&i| doys[i]).collect();
            let probe = CircularProbe::fit(&split_rows(x, &train), &train_doys, ridge_alpha, harmonics)?;
            let pred = probe.map.predict(&split_rows(x, &test));
            let truth = split_rows(&y, &test);
            let r2s: Vec<f64> = (0..truth.ncols())
                .map(|j| {
                    r2_score(
                        truth.column(j).as_slice(),
                        &pred.column(j).iter().copied().collect::<Vec<_>>(),
                    )
                })
                .collect();
            Ok(mean(&r2s))
        })
        .collect::<Result<_>>()?;
    let probe = CircularProbe::fit(x, doys, ridge_alpha, harmonics)?;
    let subspace = weight_frame(probe.weights(), k)?;
    Ok(ProbeFit {
        probe,
        score: mean(&fold_scores),
        subspace,
        folds,
    })
}

/// Mean per-class recall.
pub fn balanced_accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        let e = hits.entry(t).or_default();
        e.1 += 1;
        if t == p {
            e.0 += 1;
        }
    }
    let recalls: Vec<f64> = hits.values().map(|&(h, n)| h as f64 / n as f64).collect();
    mean(&recalls)
}

/// One-vs-rest ridge classifier with class-stratified cross-validated balanced
/// accuracy; the span is the top-`k_extract` singular frame of the weights.
pub fn fit_classifier_probe(
    x: &Mat,
    labels: &[usize],
    ridge_alpha: f64,
    folds: usize,
    k_extract: usize,
) -> Result<ProbeFit<ClassifierProbe>> {
    check_rows(x, labels.len())?;
    check_min_per_stratum(labels, "class")?;
    let keys = vec![0.0; labels.len()];
    let assignment = stratified_folds(labels, &keys, folds)?;
    let mut pred = vec![0usize; labels.len()];
    let per_fold: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<(Vec<usize>, Vec<usize>)> {
            let (train, test) = fold_indices(&assignment, f);
            let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let probe = ClassifierProbe::fit(&split_rows(x, &train), &train_labels, ridge_alpha)?;
            let p = test
                .iter()
                .map(|&i| probe.predict(x.row(i).transpose().as_slice()))
                .collect();
            Ok((test, p))
        })
        .collect::<Result<_>>()?;
    for (test, p) in per_fold {
        for (i, c) in test.into_iter().zip(p) {
            pred[i] = c;
        }
    }
    let probe = ClassifierProbe::fit(x, labels, ridge_alpha)?;
    let subspace = weight_frame(probe.weights(), k_extract)?;
    Ok(ProbeFit {
        probe,
        score: balanced_accuracy(labels, &pred),
        subspace,
        folds,
    })
}

/// How a bootstrap resample is turned into a probe span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeRecipe {
    Circular { ridge_alpha: f64, harmonics: usize, k: usize },
    Classifier { ridge_alpha: f64, k: usize },
}

impl ProbeRecipe {
    /// Fits the probe on all rows (no cross-validation) and returns its span.
    pub fn span(&self, x: &Mat, labels: &[usize]) -> Result<Subspace> {
        match *self {
            ProbeRecipe::Circular { ridge_alpha, harmonics, k } => {
                weight_frame(CircularProbe::fit(x, labels, ridge_alpha, harmonics)?.weights(), k)
            }
            ProbeRecipe::Classifier { ridge_alpha, k } => {
                weight_frame(ClassifierProbe::fit(x, labels, ridge_alpha)?.weights(), k)
            }
        }
    }

    fn strata(&self, labels: &[usize]) -> Vec<usize> {
        match self {
            ProbeRecipe::Circular { .. } => labels.iter().map(|&d| month_of_doy(d)).collect(),
            ProbeRecipe::Classifier { .. } => labels.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapAngleCi {
    /// Degrees.
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub angles: Vec<f64>,
}

const MAX_REDRAWS: usize = 100;

/// Percentile bootstrap of θ̄(refit probe, reference) over row resamples.
///
/// A resample that misses a stratum (month, or class) present in the data is redrawn.
pub fn bootstrap_angle_ci(
    x: &Mat,
    labels: &[usize],
    recipe: &ProbeRecipe,
    reference: &Subspace,
    b: usize,
    seed: u64,
) -> Result<BootstrapAngleCi> {
    check_rows(x, labels.len())?;
    if b < 100 {
        return Err(MscError::InvalidArgument(format!("B must be at least 100, got {b}")));
    }
    let strata = recipe.strata(labels);
    let present: std::collections::BTreeSet<usize> = strata.iter().copied().collect();
    let n = labels.len();
    let angles: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let mut r = rng::substream(seed, j as u64);
            for _ in 0..MAX_REDRAWS {
                let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
                let seen: std::collections::BTreeSet<usize> = idx.iter().map(|&i| strata[i]).collect();
                if seen != present {
                    continue;
                }
                let xs = split_rows(x, &idx);
                let ls: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let span = recipe.span(&xs, &ls)?;
                return Ok(principal_angles(&span, reference)?.mean_angle_deg());
            }
            Err(MscError::Degenerate(format!(
                "resample {j} kept missing a stratum after {MAX_REDRAWS} redraws"
            )))
        })
        .collect::<Result<_>>()?;
    let s = sorted(&angles);
    Ok(BootstrapAngleCi {
        mean: mean(&angles),
        sd: std_dev(&angles),
        lo: quantile_sorted(&s, 0.025),
        hi: quantile_sorted(&s, 0.975),
        angles,
    })
}

fn check_rows(x: &Mat, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(MscError::DimensionMismatch(format!(
            "{} activation rows but {n} labels",
            x.nrows()
        )));
    }
    if n == 0 {
        return Err(MscError::InvalidArgument("no samples".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::haar_sample;
    use proptest::prelude::*;

    fn gaussian_matrix(n: usize, d: usize, seed: u64) -> Mat {
        let mut r = rng::stream(seed);
        Mat::from_fn(n, d, |_, _| rng::gaussian(&mut r))
    }

    fn cyclic_doys(n: usize) -> Vec<usize> {
        (0..n).map(|i| i % 365 + 1).collect()
    }

    #[test]
    fn months() {
        assert_eq!(month_of_doy(1), 0);
        assert_eq!(month_of_doy(31), 0);
        assert_eq!(month_of_doy(32), 1);
        assert_eq!(month_of_doy(59), 1);
        assert_eq!(month_of_doy(60), 2);
        assert_eq!(month_of_doy(365), 11);
    }

    #[test]
    fn circular_distance_is_bounded() {
        assert_eq!(circular_day_distance(1.0, 365.0), 1.0);
        assert_eq!(circular_day_distance(10.0, 192.5), 182.5);
        assert_eq!(angle_to_doy(0.0), 365.0);
        assert!((angle_to_doy(TAU / 4.0) - 91.25).abs() < 1e-12);
    }

    #[test]
    fn noiseless_circle_is_fit_exactly() {
        let n = 730;
        let doys = cyclic_doys(n);
        let plane = haar_sample(20, 2, 3).unwrap();
        let mut x = gaussian_matrix(n, 20, 4) * 1e-4;
        for (i, &d) in doys.iter().enumerate() {
            let ph = TAU * d as f64 / 365.0;
            for j in 0..20 {
                x[(i, j)] += 10.0 * (ph.sin() * plane.basis()[(0, j)] + ph.cos() * plane.basis()[(1, j)]);
            }
        }
        let fit = fit_circular_probe(&x, &doys, 1e-3, 5, 1, 2).unwrap();
        assert!(fit.score > 0.999, "R² {}", fit.score);
        let a = principal_angles(&fit.subspace, &plane).unwrap();
        assert!(a.mean_angle_deg() < 0.5);
        let row: Vec<f64> = x.row(100).iter().copied().collect();
        assert!(circular_day_distance(fit.probe.predict_doy(&row), doys[100] as f64) < 0.1);
    }

    #[test]
    fn pure_noise_has_no_skill() {
        let n = 1460;
        let x = gaussian_matrix(n, 16, 8);
        let fit = fit_circular_probe(&x, &cyclic_doys(n), 1.0, 5, 1, 2).unwrap();
        assert!(fit.score < 0.05 && fit.score > -0.1, "R² {}", fit.score);
    }

    #[test]
    fn empty_month_stratum_is_rejected() {
        let x = gaussian_matrix(40, 4, 1);
        let mut singleton = vec![1; 39];
        singleton.push(300);
        assert!(fit_circular_probe(&x, &singleton, 1.0, 5, 1, 2).is_err());
    }

    #[test]
    fn separable_two_class() {
        let n = 200;
        let mut x = gaussian_matrix(n, 5, 2);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for i in 0..n {
            x[(i, 0)] = if labels[i] == 1 { 5.0 } else { -5.0 } + 0.1 * x[(i, 0)];
        }
        let fit = fit_classifier_probe(&x, &labels, 1.0, 5, 1).unwrap();
        assert_eq!(fit.score, 1.0);
        assert!(fit.subspace.basis()[(0, 0)].abs() > 0.99);
    }

    #[test]
    fn independent_labels_sit_at_chance() {
        let n = 2000;
        let x = gaussian_matrix(n, 8, 3);
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % 4).collect();
        let fit = fit_classifier_probe(&x, &labels, 1.0, 5, 2).unwrap();
        // Binomial SD of a 4-class accuracy at n=2000 is about 0.01.
        assert!((fit.score - 0.25).abs() < 0.04, "balanced accuracy {}", fit.score);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let x = gaussian_matrix(10, 3, 1);
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 2];
        assert!(fit_classifier_probe(&x, &labels, 1.0, 2, 1).is_err());
        assert!(ClassifierProbe::fit(&x, &[0; 10], 1.0).is_err());
    }

    #[test]
    fn folds_are_balanced_within_strata() {
        let strata = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let keys: Vec<f64> = (0..10).map(|i| (10 - i) as f64).collect();
        let f = stratified_folds(&strata, &keys, 2).unwrap();
        assert_eq!(f.iter().filter(|&&v| v == 0).count(), 5);
        assert!(stratified_folds(&strata, &keys, 11).is_err());
    }

    #[test]
    fn balanced_accuracy_weights_classes_equally() {
        let truth = [0, 0, 0, 1];
        let pred = [0, 0, 0, 0];
        assert_eq!(balanced_accuracy(&truth, &pred), 0.5);
    }

    #[test]
    fn bootstrap_has_spread_and_is_deterministic() {
        let n = 730;
        let doys = cyclic_doys(n);
        let plane = haar_sample(12, 2, 5).unwrap();
        let mut x = gaussian_matrix(n, 12, 6);
        for (i, &d) in doys.iter().enumerate() {
            let ph = TAU * d as f64 / 365.0;
            for j in 0..12 {
                x[(i, j)] += 3.0 * (ph.sin() * plane.basis()[(0, j)] + ph.cos() * plane.basis()[(1, j)]);
            }
        }
        let recipe = ProbeRecipe::Circular { ridge_alpha: 1.0, harmonics: 1, k: 2 };
        let own = recipe.span(&x, &doys).unwrap();
        let ci = bootstrap_angle_ci(&x, &doys, &recipe, &own, 100, 42).unwrap();
        assert!(ci.sd > 0.0 && ci.lo <= ci.hi && ci.hi - ci.lo < 5.0, "{:?}", (ci.mean, ci.lo, ci.hi));
        assert_eq!(ci, bootstrap_angle_ci(&x, &doys, &recipe, &own, 100, 42).unwrap());
        assert!(bootstrap_angle_ci(&x, &doys, &recipe, &own, 99, 42).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn argmax_is_scale_invariant(seed in any::<u64>(), c in 0.1f64..20.0) {
            let n = 90;
            let x = gaussian_matrix(n, 6, seed);
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let a = ClassifierProbe::fit(&x, &labels, 1.0).unwrap();
            let b = ClassifierProbe::fit(&(&x * c), &labels, c * c).unwrap();
            for i in 0..n {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                let scaled: Vec<f64> = row.iter().map(|v| v * c).collect();
                let sa = a.map.predict_one(&row);
                let top = sa.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let second = sa.iter().cloned().filter(|&v| v < top).fold(f64::NEG_INFINITY, f64::max);
                // Skip numerically tied rows.
                if top - second > 1e-9 {
                    prop_assert_eq!(a.predict(&row), b.predict(&scaled));
                }
            }
        }

        #[test]
        fn span_ignores_row_order(seed in any::<u64>()) {
            let n = 120;
            let x = gaussian_matrix(n, 7, seed);
            let doys = cyclic_doys(n).iter().map(|d| d * 3 % 365 + 1).collect::<Vec<_>>();
            let perm = rng::permutation(&mut rng::stream(seed ^ 1), n);
            let xp = x.select_rows(perm.iter());
            let dp: Vec<usize> = perm.iter().map(|&i| doys[i]).collect();
            let recipe = ProbeRecipe::Circular { ridge_alpha: 1.0, harmonics: 1, k: 2 };
            let a = recipe.span(&x, &doys).unwrap();
            let b = recipe.span(&xp, &dp).unwrap();
            prop_assert!(principal_angles(&a, &b).unwrap().mean_angle_deg() < 1e-5);
        }
    }
}
