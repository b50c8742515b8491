//! Offset profiles of query-key interaction over the day-of-year manifold.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::linalg::Mat;
use crate::tensor_io::DAYS_PER_YEAR;

/// Largest offset magnitude scanned.
pub const MAX_OFFSET: i32 = 182;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadTensors {
    pub layer: usize,
    pub head: usize,
    /// d_head × d.
    pub wq: Mat,
    /// d_head × d.
    pub wk: Mat,
}

impl HeadTensors {
    pub fn new(layer: usize, head: usize, wq: Mat, wk: Mat) -> Result<Self> {
        if wq.shape() != wk.shape() || wq.nrows() == 0 {
            return Err(MscError::DimensionMismatch(format!(
                "W_q is {:?}, W_k is {:?}",
                wq.shape(),
                wk.shape()
            )));
        }
        Ok(HeadTensors { layer, head, wq, wk })
    }

    pub fn d_head(&self) -> usize {
        self.wq.nrows()
    }
}

/// `S(c)` for `c = −182..=182`, its standardization over `c ≠ 0`, and the peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetProfile {
    pub offsets: Vec<i32>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    /// Signed z at the peak; absent when the profile has zero spread.
    pub peak_z: Option<f64>,
    pub c_star: Option<i32>,
    pub degenerate: bool,
}

impl OffsetProfile {
    pub fn at(&self, c: i32) -> f64 {
        self.s[(c + MAX_OFFSET) as usize]
    }
}

/// Computes profiles for one head under row permutations of the mean activations.
///
/// Query/key projections are computed once; each evaluation is a sum over head
/// coordinates of FFT cross-correlations.
pub(crate) struct ProfileEngine {
    q: Mat,
    k: Mat,
    n: usize,
    len: usize,
    circular: bool,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl ProfileEngine {
    pub fn new(mean_acts: &Mat, head: &HeadTensors, circular: bool) -> Result<Self> {
        let (n, d) = mean_acts.shape();
        if n != DAYS_PER_YEAR {
            return Err(MscError::DimensionMismatch(format!(
                "expected {DAYS_PER_YEAR} per-day rows, got {n}"
            )));
        }
        if head.wq.ncols() != d {
            return Err(MscError::DimensionMismatch(format!(
                "head {}.{} reads width {}, activations have d = {d}",
                head.layer,
                head.head,
                head.wq.ncols()
            )));
        }
        let scale = 1.0 / (head.d_head() as f64).sqrt();
        let q = mean_acts * head.wq.transpose() * scale;
        let k = mean_acts * head.wk.transpose();
        let len = if circular { n } else { (2 * n).next_power_of_two() };
        let mut planner = FftPlanner::new();
        Ok(ProfileEngine {
            q,
            k,
            n,
            len,
            circular,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        })
    }

    /// Profile with row `i` of the activations replaced by row `perm[i]`.
    pub fn profile(&self, perm: Option<&[usize]>) -> OffsetProfile {
        let row = |i: usize| perm.map_or(i, |p| p[i]);
        let mut acc = vec![Complex::new(0.0, 0.0); self.len];
        let mut fq = vec![Complex::new(0.0, 0.0); self.len];
        let mut fk = vec![Complex::new(0.0, 0.0); self.len];
        for t in 0..self.q.ncols() {
            fq.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
            fk.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
            for i in 0..self.n {
                fq[i].re = self.q[(row(i), t)];
                fk[i].re = self.k[(row(i), t)];
            }
            self.fwd.process(&mut fq);
            self.fwd.process(&mut fk);
            for ((a, x), y) in acc.iter_mut().zip(&fq).zip(&fk) {
                *a += x * y.conj();
            }
        }
        self.inv.process(&mut acc);
        let norm = 1.0 / self.len as f64;
        let offsets: Vec<i32> = (-MAX_OFFSET..=MAX_OFFSET).collect();
        let s: Vec<f64> = offsets
            .iter()
            .map(|&c| {
                let idx = (c.rem_euclid(self.len as i32)) as usize;
                let count = if self.circular {
                    self.n
                } else {
                    self.n - c.unsigned_abs() as usize
                };
                acc[idx].re * norm / count as f64
            })
            .collect();
        standardize(offsets, s)
    }
}

fn standardize(offsets: Vec<i32>, s: Vec<f64>) -> OffsetProfile {
    let nonzero: Vec<f64> = offsets
        .iter()
        .zip(&s)
        .filter(|(c, _)| **c != 0)
        .map(|(_, v)| *v)
        .collect();
    let m = crate::linalg::mean(&nonzero);
    let sd = crate::linalg::std_dev(&nonzero);
    let scale = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(sd > 1e-12 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0 {
        return OffsetProfile {
            z: vec![0.0; s.len()],
            offsets,
            s,
            peak_z: None,
            c_star: None,
            degenerate: true,
        };
    }
    let z: Vec<f64> = s.iter().map(|v| (v - m) / sd).collect();
    let mut best: Option<usize> = None;
    for (i, (&c, zc)) in offsets.iter().zip(&z).enumerate() {
        if c == 0 {
            continue;
        }
        if best.is_none_or(|b| zc.abs() > z[b].abs()) {
            best = Some(i);
        }
    }
    let b = best.expect("nonzero offsets exist");
    OffsetProfile {
        peak_z: Some(z[b]),
        c_star: Some(offsets[b]),
        offsets,
        s,
        z,
        degenerate: false,
    }
}

/// Offset profile of one head (wrap-free offsets unless `circular`).
pub fn offset_profile(mean_acts: &Mat, head: &HeadTensors, circular: bool) -> Result<OffsetProfile> {
    Ok(ProfileEngine::new(mean_acts, head, circular)?.profile(None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn gaussian(r: usize, c: usize, seed: u64) -> Mat {
        let mut g = rng::stream(seed);
        Mat::from_fn(r, c, |_, _| rng::gaussian(&mut g))
    }

    /// Direct O(365²) evaluation of S(c).
    fn direct(mean_acts: &Mat, head: &HeadTensors, circular: bool) -> Vec<f64> {
        let q = mean_acts * head.wq.transpose();
        let k = mean_acts * head.wk.transpose();
        let m = q * k.transpose() / (head.d_head() as f64).sqrt();
        (-MAX_OFFSET..=MAX_OFFSET)
            .map(|c| {
                let mut sum = 0.0;
                let mut cnt = 0;
                for i in 0..365i32 {
                    let j = i - c;
                    let j = if circular { j.rem_euclid(365) } else { j };
                    if (0..365).contains(&j) {
                        sum += m[(i as usize, j as usize)];
                        cnt += 1;
                    }
                }
                sum / cnt as f64
            })
            .collect()
    }

    #[test]
    fn fft_matches_direct_sum() {
        let x = gaussian(365, 10, 1);
        let head = HeadTensors::new(0, 0, gaussian(4, 10, 2), gaussian(4, 10, 3)).unwrap();
        for circular in [false, true] {
            let p = offset_profile(&x, &head, circular).unwrap();
            let oracle = direct(&x, &head, circular);
            for (a, b) in p.s.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let x = gaussian(365, 6, 1);
        let head = HeadTensors::new(0, 0, Mat::zeros(2, 6), Mat::zeros(2, 6)).unwrap();
        let p = offset_profile(&x, &head, false).unwrap();
        assert!(p.degenerate);
        assert!(p.s.iter().all(|&v| v == 0.0));
        assert_eq!(p.peak_z, None);
    }

    #[test]
    fn symmetric_interaction_gives_symmetric_profile() {
        let x = gaussian(365, 8, 4);
        let w = gaussian(3, 8, 5);
        let head = HeadTensors::new(0, 0, w.clone(), w).unwrap();
        let p = offset_profile(&x, &head, false).unwrap();
        for c in 1..=MAX_OFFSET {
            assert!((p.at(c) - p.at(-c)).abs() < 1e-10);
        }
    }

    #[test]
    fn planted_offset_is_found() {
        // x̄_d = [g_d ; g_{d−30}]; W_q reads the shifted copy, W_k the original,
        // so Q_d·K_{d'} spikes when d − d' = 30.
        let m = 16;
        let g = gaussian(365, m, 6);
        let x = Mat::from_fn(365, 2 * m, |d, j| {
            if j < m {
                g[(d, j)]
            } else {
                g[((d as i32 - 30).rem_euclid(365) as usize, j - m)]
            }
        });
        let wq = Mat::from_fn(m, 2 * m, |i, j| if j == m + i { 1.0 } else { 0.0 });
        let wk = Mat::from_fn(m, 2 * m, |i, j| if j == i { 1.0 } else { 0.0 });
        let head = HeadTensors::new(3, 1, wq, wk).unwrap();
        let p = offset_profile(&x, &head, false).unwrap();
        assert_eq!(p.c_star, Some(30));
        assert!(p.peak_z.unwrap() > 5.0);
    }

    #[test]
    fn shape_errors() {
        let head = HeadTensors::new(0, 0, Mat::zeros(2, 6), Mat::zeros(2, 6)).unwrap();
        assert!(offset_profile(&Mat::zeros(364, 6), &head, false).is_err());
        assert!(offset_profile(&Mat::zeros(365, 5), &head, false).is_err());
        assert!(HeadTensors::new(0, 0, Mat::zeros(2, 6), Mat::zeros(3, 6)).is_err());
    }
}
