//! Permutation-calibrated head scans with Benjamini-Hochberg selection.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::profile::{HeadTensors, OffsetProfile, ProfileEngine};
use crate::error::{MscError, Result};
use crate::linalg::Mat;
use crate::null::{tail_p, Side};
use crate::rng;

pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_FDR_LEVEL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadScanResult {
    pub layer: usize,
    pub head: usize,
    pub profile: OffsetProfile,
    pub peak_z: Option<f64>,
    pub c_star: Option<i32>,
    pub p_perm: f64,
    pub q_bh: f64,
    pub significant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    pub n_perm: usize,
    pub fdr_level: f64,
    pub seed: u64,
    pub circular: bool,
}

impl ScanConfig {
    pub fn new(seed: u64) -> Self {
        ScanConfig {
            n_perm: DEFAULT_PERMUTATIONS,
            fdr_level: DEFAULT_FDR_LEVEL,
            seed,
            circular: false,
        }
    }
}

fn peak_strength(p: &OffsetProfile) -> f64 {
    p.peak_z.map_or(0.0, f64::abs)
}

/// Scans every head; permutation `p` of head `i` is drawn from its own substream.
pub fn scan_heads(mean_acts: &Mat, heads: &[HeadTensors], cfg: &ScanConfig) -> Result<Vec<HeadScanResult>> {
    if cfg.n_perm < 50 {
        return Err(MscError::InvalidArgument(format!(
            "need at least 50 permutations, got {}",
            cfg.n_perm
        )));
    }
    if !(cfg.fdr_level > 0.0 && cfg.fdr_level < 1.0) {
        return Err(MscError::InvalidArgument("FDR level must lie in (0, 1)".into()));
    }
    if let Some(first) = heads.first() {
        if heads.iter().any(|h| h.wq.ncols() != first.wq.ncols()) {
            return Err(MscError::DimensionMismatch("heads read different widths".into()));
        }
    }
    let n = mean_acts.nrows();
    let scanned: Vec<(OffsetProfile, f64)> = heads
        .par_iter()
        .enumerate()
        .map(|(i, head)| {
            let engine = ProfileEngine::new(mean_acts, head, cfg.circular)?;
            let observed = engine.profile(None);
            let head_seed = rng::mix(cfg.seed, i as u64);
            let mut null: Vec<f64> = (0..cfg.n_perm)
                .into_par_iter()
                .map(|p| {
                    let perm = rng::permutation(&mut rng::substream(head_seed, p as u64), n);
                    peak_strength(&engine.profile(Some(&perm)))
                })
                .collect();
            null.sort_by(f64::total_cmp);
            let p = if observed.degenerate {
                1.0
            } else {
                tail_p(&null, peak_strength(&observed), Side::Above)
            };
            Ok((observed, p))
        })
        .collect::<Result<_>>()?;
    let pvals: Vec<f64> = scanned.iter().map(|(_, p)| *p).collect();
    let qvals = bh_adjust(&pvals);
    Ok(heads
        .iter()
        .zip(scanned)
        .zip(qvals)
        .map(|((h, (profile, p)), q)| HeadScanResult {
            layer: h.layer,
            head: h.head,
            peak_z: profile.peak_z,
            c_star: profile.c_star,
            profile,
            p_perm: p,
            q_bh: q,
            significant: q <= cfg.fdr_level,
        })
        .collect())
}

/// Benjamini-Hochberg adjusted p-values (step-up, monotone, capped at 1).
pub fn bh_adjust(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0_f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(pvals[i] * m as f64 / (rank + 1) as f64);
        q[i] = running.min(1.0);
    }
    q
}

/// Writes `L,h,c_star,z,p,q` rows; undefined peaks are left empty.
pub fn write_scan_csv<W: Write>(mut w: W, results: &[HeadScanResult]) -> Result<()> {
    let io = |e| MscError::io("<csv>", e);
    writeln!(w, "L,h,c_star,z,p,q").map_err(io)?;
    for r in results {
        let c = r.c_star.map(|c| c.to_string()).unwrap_or_default();
        let z = r.peak_z.map(|z| format!("{z:.6}")).unwrap_or_default();
        writeln!(w, "{},{},{},{},{:.6},{:.6}", r.layer, r.head, c, z, r.p_perm, r.q_bh).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_rejects_first_two() {
        let p = [0.01, 0.02, 0.04, 0.5];
        let q = bh_adjust(&p);
        let rejected: Vec<bool> = q.iter().map(|&v| v <= 0.05).collect();
        assert_eq!(rejected, [true, true, false, false]);
        // brute force: largest i with p_(i) ≤ iq/m
        let m = p.len() as f64;
        let kmax = (1..=p.len()).filter(|&i| p[i - 1] <= i as f64 * 0.05 / m).max().unwrap();
        assert_eq!(kmax, 2);
    }

    #[test]
    fn bh_is_monotone_in_p() {
        let p = [0.3, 0.001, 0.04, 0.04, 0.9, 0.011];
        let q = bh_adjust(&p);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    assert!(q[i] <= q[j]);
                }
            }
            assert!(q[i] >= p[i]);
        }
    }

    #[test]
    fn too_few_permutations_rejected() {
        let mut cfg = ScanConfig::new(1);
        cfg.n_perm = 10;
        assert!(scan_heads(&Mat::zeros(365, 4), &[], &cfg).is_err());
    }
}
