//! Manifold-deviation scoring and the metrics used to judge it as an error
//! predictor.
//!
//! The reference manifold is the top-k principal plane of the per-day mean
//! activations. An input's deviation is the largest residual fraction over
//! its date positions.

use std::io::Write;

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::geometry::Subspace;
use crate::linalg::{center_columns, fix_sign, Mat};

/// Singular values below this fraction of the largest are dropped.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceManifold {
    pub basis: Subspace,
    pub center: Vec<f64>,
    /// Requested rank; the basis may be smaller when the centered means
    /// have lower rank.
    pub k: usize,
    pub singular_values: Vec<f64>,
}

/// Top-`k` right singular frame of the column-centered mean activations.
pub fn reference_basis(mean_acts: &Mat, k: usize) -> Result<ReferenceManifold> {
    let (n, d) = mean_acts.shape();
    if k == 0 || k > n.min(d) {
        return Err(MscError::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            n.min(d)
        )));
    }
    let (xc, center) = center_columns(mean_acts);
    let svd = SVD::new(xc, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| MscError::Numerical("SVD did not return right vectors".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let top = sv[order[0]];
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .take(k)
        .filter(|&i| top > 0.0 && sv[i] > RANK_TOL * top)
        .collect();
    let mut basis = Mat::zeros(keep.len(), d);
    for (dst, &src) in keep.iter().enumerate() {
        let mut row = v_t.row(src).transpose();
        fix_sign(row.as_mut_slice());
        basis.set_row(dst, &row.transpose());
    }
    Ok(ReferenceManifold {
        basis: Subspace::from_orthonormal(basis)?,
        center: center.iter().copied().collect(),
        k,
        singular_values: order.iter().map(|&i| sv[i]).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationScore {
    pub delta: f64,
    pub per_position: Vec<f64>,
    /// Position attaining the maximum.
    pub argmax: usize,
}

/// Residual fraction `‖h − P h‖ / ‖h‖` of one activation, after subtracting
/// the manifold center when `centered`.
pub fn residual_fraction(h: &[f64], manifold: &ReferenceManifold, centered: bool) -> Result<f64> {
    if h.len() != manifold.basis.dim() {
        return Err(MscError::DimensionMismatch(format!(
            "activation has width {}, manifold lives in R^{}",
            h.len(),
            manifold.basis.dim()
        )));
    }
    let v: Vec<f64> = if centered {
        h.iter().zip(&manifold.center).map(|(a, c)| a - c).collect()
    } else {
        h.to_vec()
    };
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(MscError::Degenerate("zero-norm activation at a date position".into()));
    }
    let p = manifold.basis.project(&v);
    let r = v.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok((r / norm).clamp(0.0, 1.0))
}

/// Deviation of one input: max residual fraction over the rows of
/// `activations` listed in `positions`.
pub fn manifold_deviation(
    activations: &Mat,
    positions: &[usize],
    manifold: &ReferenceManifold,
    centered: bool,
) -> Result<DeviationScore> {
    if positions.is_empty() {
        return Err(MscError::InvalidArgument("no date positions given".into()));
    }
    let mut per_position = Vec::with_capacity(positions.len());
    for &t in positions {
        if t >= activations.nrows() {
            return Err(MscError::InvalidArgument(format!(
                "position {t} out of range ({} positions)",
                activations.nrows()
            )));
        }
        let h: Vec<f64> = activations.row(t).iter().copied().collect();
        per_position.push(residual_fraction(&h, manifold, centered)?);
    }
    let argmax = (0..per_position.len())
        .max_by(|&a, &b| per_position[a].total_cmp(&per_position[b]).then(b.cmp(&a)))
        .expect("nonempty");
    Ok(DeviationScore {
        delta: per_position[argmax],
        argmax: positions[argmax],
        per_position,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub mean_score: f64,
    pub positive_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YoudenPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetBenefitPoint {
    pub threshold: f64,
    pub net_benefit: f64,
    pub treat_all: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub positive_rate: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub auprc_skill: f64,
    pub ece: f64,
    pub reliability: Vec<ReliabilityBin>,
    pub youden: YoudenPoint,
    pub net_benefit: Vec<NetBenefitPoint>,
}

pub const RELIABILITY_BINS: usize = 10;

/// Tie-averaged ranks (1-based).
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let (ma, mb) = (crate::linalg::mean(&ra), crate::linalg::mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Rank-based AUROC (Mann-Whitney, ties counted half).
pub fn auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let ranks = average_ranks(scores);
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Average precision with step interpolation; tied scores enter together.
pub fn auprc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let (mut tp, mut fp, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
        i = j;
    }
    ap
}

fn rates_at(scores: &[f64], positive: &[bool], t: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut p, mut n) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &y) in scores.iter().zip(positive) {
        let flag = s >= t;
        if y {
            p += 1.0;
            tp += flag as u8 as f64;
        } else {
            n += 1.0;
            fp += flag as u8 as f64;
        }
    }
    (tp / p, fp / n)
}

/// Discrimination and calibration of `scores` as predictors of `positive`
/// (an error occurred). Scores are read as probabilities for ECE and net benefit.
pub fn calibration_report(scores: &[f64], positive: &[bool]) -> Result<CalibrationReport> {
    let n = scores.len();
    if positive.len() != n {
        return Err(MscError::DimensionMismatch(format!(
            "{n} scores but {} outcomes",
            positive.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MscError::InvalidArgument("scores must be finite".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos < 2 || n - n_pos < 2 {
        return Err(MscError::InvalidArgument(format!(
            "need at least 2 positives and 2 negatives, got {n_pos} and {}",
            n - n_pos
        )));
    }
    let rate = n_pos as f64 / n as f64;
    let au_roc = auroc(scores, positive);
    let au_prc = auprc(scores, positive);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let bins = RELIABILITY_BINS.min(n);
    let mut reliability = Vec::with_capacity(bins);
    let mut ece = 0.0;
    for b in 0..bins {
        let idx = &order[b * n / bins..(b + 1) * n / bins];
        let m = idx.len() as f64;
        let mean_score = idx.iter().map(|&i| scores[i]).sum::<f64>() / m;
        let pr = idx.iter().filter(|&&i| positive[i]).count() as f64 / m;
        ece += m / n as f64 * (mean_score - pr).abs();
        reliability.push(ReliabilityBin {
            count: idx.len(),
            mean_score,
            positive_rate: pr,
        });
    }

    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut youden = YoudenPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
        j: 0.0,
    };
    for &t in thresholds.iter().rev() {
        let (tpr, fpr) = rates_at(scores, positive, t);
        if tpr - fpr > youden.j {
            youden = YoudenPoint {
                threshold: t,
                tpr,
                fpr,
                j: tpr - fpr,
            };
        }
    }

    let net_benefit = (1..100)
        .map(|i| {
            let t = i as f64 / 100.0;
            let (tpr, fpr) = rates_at(scores, positive, t);
            let odds = t / (1.0 - t);
            NetBenefitPoint {
                threshold: t,
                net_benefit: tpr - odds * fpr,
                treat_all: 1.0 - odds,
            }
        })
        .collect();

    Ok(CalibrationReport {
        n,
        positive_rate: rate,
        auroc: au_roc,
        auprc: au_prc,
        auprc_skill: (au_prc - rate) / (1.0 - rate),
        ece,
        reliability,
        youden,
        net_benefit,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub delta: f64,
    pub k: usize,
    pub error_days: f64,
    pub wrong: bool,
}

pub fn write_query_csv<W: Write>(mut w: W, rows: &[QueryRecord]) -> Result<()> {
    let io = |e| MscError::io("<csv>", e);
    writeln!(w, "query_id,delta,k,error_days,wrong_flag").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{:.8},{},{},{}",
            r.query_id, r.delta, r.k, r.error_days, r.wrong as u8
        )
        .map_err(io)?;
    }
    Ok(())
}
