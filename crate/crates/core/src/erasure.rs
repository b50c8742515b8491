//! Competing subspace finders: PCA, INLP, mean-projection and LEACE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{MscError, Result};
use crate::geometry::{orthonormalize, Subspace};
use crate::linalg::{center_columns, sym_eigen_desc, top_right_frame, Mat};
use crate::null::WHITEN_RIDGE_FACTOR;
use crate::probes::{circular_targets, RidgeMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Pca,
    Inlp,
    MeanProjection,
    Leace,
}

#[derive(Clone, Debug)]
pub struct BaselineBasis {
    pub method: BaselineMethod,
    pub subspace: Subspace,
    pub target_meta: Value,
}

/// Concept to be located or erased, encoded as a target matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Concept {
    /// Class labels, one-hot encoded.
    Classes(Vec<usize>),
    /// Day-of-year labels, encoded as sin/cos harmonics.
    Circular { doys: Vec<usize>, harmonics: usize },
    /// Arbitrary real targets (n × m).
    Values(Mat),
}

impl Concept {
    pub fn len(&self) -> usize {
        match self {
            Concept::Classes(l) => l.len(),
            Concept::Circular { doys, .. } => doys.len(),
            Concept::Values(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> Mat {
        match self {
            Concept::Classes(labels) => {
                let classes: BTreeMap<usize, usize> = labels
                    .iter()
                    .copied()
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| (c, i))
                    .collect();
                Mat::from_fn(labels.len(), classes.len(), |i, j| {
                    if classes[&labels[i]] == j {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            Concept::Circular { doys, harmonics } => circular_targets(doys, *harmonics),
            Concept::Values(m) => m.clone(),
        }
    }

    fn describe(&self) -> Value {
        match self {
            Concept::Classes(l) => json!({"kind": "classes", "n": l.len()}),
            Concept::Circular { doys, harmonics } => {
                json!({"kind": "circular", "n": doys.len(), "harmonics": harmonics})
            }
            Concept::Values(m) => json!({"kind": "values", "n": m.nrows(), "m": m.ncols()}),
        }
    }
}

fn check_rows(x: &Mat, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(MscError::DimensionMismatch(format!(
            "{} activation rows but {n} targets",
            x.nrows()
        )));
    }
    Ok(())
}

fn check_rank(k: usize, sv: &[f64], what: &str) -> Result<()> {
    let top = sv.first().copied().unwrap_or(0.0);
    // Singular values come from a Gram eigen-decomposition, so relative precision is ~1e-8.
    if k == 0 || k > sv.len() || sv[k - 1] <= 1e-6 * top.max(f64::MIN_POSITIVE) {
        return Err(MscError::RankDeficient(format!("{what} has rank below {k}")));
    }
    Ok(())
}

/// Top-`k` right singular frame of the centered activations.
pub fn pca_basis(x: &Mat, k: usize) -> Result<BaselineBasis> {
    if x.nrows() <= k {
        return Err(MscError::InvalidArgument(format!(
            "PCA needs more than k = {k} rows, got {}",
            x.nrows()
        )));
    }
    let (xc, _) = center_columns(x);
    let (frame, sv) = top_right_frame(&xc, k);
    check_rank(k, &sv, "centered activation matrix")?;
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let explained: f64 = sv[..k].iter().map(|s| s * s).sum::<f64>() / total;
    Ok(BaselineBasis {
        method: BaselineMethod::Pca,
        subspace: orthonormalize(&frame)?,
        target_meta: json!({"explained_variance": explained}),
    })
}

/// Iterative null-space projection: `k` rounds of (fit ridge probe, take its top
/// weight direction, project the data off it).
pub fn inlp_basis(x: &Mat, concept: &Concept, k: usize, ridge_alpha: f64) -> Result<BaselineBasis> {
    check_rows(x, concept.len())?;
    let d = x.ncols();
    if k == 0 || k > d {
        return Err(MscError::InvalidArgument(format!("need 1 <= k <= d, got k={k}")));
    }
    let y = concept.targets();
    let mut data = x.clone();
    let mut dirs = Mat::zeros(k, d);
    let mut scores = Vec::with_capacity(k);
    for it in 0..k {
        let probe = RidgeMap::fit(&data, &y, ridge_alpha)?;
        let (frame, sv) = top_right_frame(&probe.weights, 1);
        if !(sv[0] > 1e-12) {
            return Err(MscError::Degenerate(format!(
                "probe weights vanished at iteration {}",
                it + 1
            )));
        }
        let mut v: Vec<f64> = frame.row(0).iter().copied().collect();
        // Keep exact orthogonality to earlier directions.
        for j in 0..it {
            let dot: f64 = dirs.row(j).iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(dirs.row(j).iter()).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        for (c, a) in v.iter().enumerate() {
            dirs[(it, c)] = *a;
        }
        let proj = &data * Mat::from_column_slice(d, 1, &v);
        data -= proj * Mat::from_row_slice(1, d, &v);
        scores.push(sv[0]);
    }
    Ok(BaselineBasis {
        method: BaselineMethod::Inlp,
        subspace: orthonormalize(&dirs)?,
        target_meta: json!({"concept": concept.describe(), "weight_norms": scores}),
    })
}

/// Projects `x` off a subspace (orthogonal erasure).
pub fn project_out(x: &Mat, u: &Subspace) -> Mat {
    let coeff = x * u.basis().transpose();
    x - coeff * u.basis()
}

/// Top-`k` eigenvectors of the between-class scatter of class means.
pub fn mean_projection_basis(x: &Mat, labels: &[usize], k: usize) -> Result<BaselineBasis> {
    check_rows(x, labels.len())?;
    let d = x.ncols();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(MscError::InvalidArgument("mean projection needs at least 2 classes".into()));
    }
    let (_, mu) = center_columns(x);
    let mut scatter = Mat::zeros(d, d);
    for idx in groups.values() {
        let mut diff = x.select_rows(idx.iter()).row_sum().transpose() / idx.len() as f64;
        diff -= &mu;
        scatter += (&diff * diff.transpose()) * idx.len() as f64;
    }
    let (vals, vecs) = sym_eigen_desc(&scatter);
    let sv: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    if sv[0] <= 0.0 {
        return Err(MscError::Degenerate("class means are identical".into()));
    }
    check_rank(k, &sv, "between-class scatter")?;
    let frame = Mat::from_fn(k, d, |i, j| vecs[(j, i)]);
    Ok(BaselineBasis {
        method: BaselineMethod::MeanProjection,
        subspace: orthonormalize(&frame)?,
        target_meta: json!({"classes": groups.len(), "between_class_variance": &sv[..k]}),
    })
}

/// Closed-form least-squares concept eraser `x ↦ x − Σ^{1/2} P Σ^{-1/2} (x − μ)`,
/// where `P` projects onto the whitened cross-covariance column space.
#[derive(Clone, Debug)]
pub struct LeaceEraser {
    pub mean: Vec<f64>,
    /// Σ^{1/2} P Σ^{-1/2}.
    pub operator: Mat,
    /// Orthonormal frame of the erased directions (range of the operator),
    /// ordered by singular value.
    pub range: Subspace,
    pub range_singular_values: Vec<f64>,
    /// True when the cross-covariance is at the level expected from independent data.
    pub weak_signal: bool,
}

impl LeaceEraser {
    pub fn fit(x: &Mat, concept: &Concept) -> Result<Self> {
        check_rows(x, concept.len())?;
        let (n, d) = x.shape();
        if n < 2 {
            return Err(MscError::InvalidArgument("LEACE needs at least 2 rows".into()));
        }
        let (xc, mu) = center_columns(x);
        let (yc, _) = center_columns(&concept.targets());
        let sigma = (xc.transpose() * &xc) / (n as f64 - 1.0);
        let trace = sigma.trace();
        if !(trace > 0.0) {
            return Err(MscError::Degenerate("activation covariance is zero".into()));
        }
        let ridge = WHITEN_RIDGE_FACTOR * trace / d as f64;
        let (vals, vecs) = sym_eigen_desc(&(sigma + Mat::identity(d, d) * ridge));
        let floored: Vec<f64> = vals.iter().map(|v| v.max(ridge)).collect();
        let w = Mat::from_fn(d, d, |i, j| vecs[(i, j)] / floored[j].sqrt()) * vecs.transpose();
        let w_inv = Mat::from_fn(d, d, |i, j| vecs[(i, j)] * floored[j].sqrt()) * vecs.transpose();

        let cross = (xc.transpose() * &yc) / (n as f64 - 1.0);
        let whitened = &w * &cross;
        // Column space of the whitened cross-covariance.
        let (frame_t, sv) = top_right_frame(&whitened.transpose(), whitened.ncols().min(d));
        let top = sv.first().copied().unwrap_or(0.0);
        if !(top > 0.0) {
            return Err(MscError::Degenerate("concept has zero cross-covariance".into()));
        }
        let rank = sv.iter().take_while(|&&s| s > 1e-10 * top).count();
        let u = frame_t.rows(0, rank).transpose();
        let p = &u * u.transpose();
        let operator = &w_inv * p * &w;

        // Significance scale: standardized targets make the whitened cross-covariance a
        // correlation-like matrix whose noise singular values are about (√d + √m)/√n.
        let y_sd: Vec<f64> = (0..yc.ncols())
            .map(|j| (yc.column(j).norm_squared() / (n as f64 - 1.0)).sqrt())
            .collect();
        let standardized = Mat::from_fn(d, yc.ncols(), |i, j| {
            if y_sd[j] > 0.0 {
                whitened[(i, j)] / y_sd[j]
            } else {
                0.0
            }
        });
        let (_, ssv) = top_right_frame(&standardized.transpose(), 1);
        let noise = ((d as f64).sqrt() + (yc.ncols() as f64).sqrt()) / (n as f64).sqrt();
        let weak_signal = ssv[0] < 2.0 * noise;

        let (range_frame, range_sv) = top_right_frame(&operator.transpose(), rank);
        Ok(LeaceEraser {
            mean: mu.iter().copied().collect(),
            operator,
            range: orthonormalize(&range_frame)?,
            range_singular_values: range_sv[..rank].to_vec(),
            weak_signal,
        })
    }

    /// Applies the eraser to every row.
    pub fn erase(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.mean.len() {
            return Err(MscError::DimensionMismatch("eraser width differs from data".into()));
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        Ok(x - centered * self.operator.transpose())
    }
}

/// Top-`k` directions of the LEACE eraser's range.
pub fn leace_basis(x: &Mat, concept: &Concept, k: usize) -> Result<BaselineBasis> {
    let eraser = LeaceEraser::fit(x, concept)?;
    if k == 0 || k > eraser.range.rank() {
        return Err(MscError::RankDeficient(format!(
            "LEACE erases {} directions; cannot return k = {k}",
            eraser.range.rank()
        )));
    }
    Ok(BaselineBasis {
        method: BaselineMethod::Leace,
        subspace: eraser.range.select(&(0..k).collect::<Vec<_>>()),
        target_meta: json!({
            "concept": concept.describe(),
            "weak_signal": eraser.weak_signal,
            "range_singular_values": eraser.range_singular_values,
        }),
    })
}
