//! Orthonormal frames and the geometry between them.
//!
//! A [`Subspace`] is a k×d matrix with orthonormal rows. Everything else in
//! the crate (probe spans, mediator frames, baselines, null draws) is
//! expressed in this one currency.

use nalgebra::SVD;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::linalg::{gram_schmidt_columns, gram_schmidt_rows, Mat};
use crate::rng;

/// Orthonormality tolerance on ‖BBᵀ − I‖_F.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Relative singular-value floor below which input rows count as dependent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: Mat,
}

impl Subspace {
    /// Wraps a k×d matrix whose rows are already orthonormal.
    pub fn from_orthonormal(basis: Mat) -> Result<Self> {
        let s = Subspace { basis };
        let r = s.orth_residual();
        if r >= ORTHONORMAL_TOL {
            return Err(MscError::InvalidArgument(format!(
                "rows are not orthonormal (residual {r:.3e})"
            )));
        }
        Ok(s)
    }

    /// The rank-0 subspace of R^d. Ablating it is the identity.
    pub fn empty(d: usize) -> Self {
        Subspace {
            basis: Mat::zeros(0, d),
        }
    }

    /// Span of the given standard basis vectors.
    pub fn coordinate(d: usize, axes: &[usize]) -> Result<Self> {
        let mut b = Mat::zeros(axes.len(), d);
        for (i, &a) in axes.iter().enumerate() {
            if a >= d {
                return Err(MscError::InvalidArgument(format!("axis {a} >= d={d}")));
            }
            b[(i, a)] = 1.0;
        }
        Subspace::from_orthonormal(b)
    }

    pub fn rank(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn into_basis(self) -> Mat {
        self.basis
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.basis.row(i).iter().copied().collect()
    }

    /// ‖BBᵀ − I_k‖_F.
    pub fn orth_residual(&self) -> f64 {
        let k = self.rank();
        (&self.basis * self.basis.transpose() - Mat::identity(k, k)).norm()
    }

    /// Coordinates `Bx` of `x` in this frame.
    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rank())
            .map(|i| {
                self.basis
                    .row(i)
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Orthogonal projection `BᵀBx` onto the span.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let c = self.coords(x);
        let mut out = vec![0.0; self.dim()];
        for (i, ci) in c.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis.row(i).iter()) {
                *o += ci * b;
            }
        }
        out
    }

    /// Sub-frame made of the selected basis rows.
    pub fn select(&self, rows: &[usize]) -> Subspace {
        let mut b = Mat::zeros(rows.len(), self.dim());
        for (dst, &src) in rows.iter().enumerate() {
            b.set_row(dst, &self.basis.row(src));
        }
        Subspace { basis: b }
    }

    /// Frame of the rows mapped by `x ↦ Qᵀx`, i.e. basis `B·Q`.
    pub fn rotate(&self, q: &Mat) -> Result<Subspace> {
        if q.nrows() != self.dim() || q.ncols() != self.dim() {
            return Err(MscError::DimensionMismatch("rotation must be d×d".into()));
        }
        orthonormalize(&(&self.basis * q))
    }
}

/// Principal angles between two frames (radians internally).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAngleSet {
    /// min(k1, k2) angles in radians, nondecreasing.
    pub angles: Vec<f64>,
    pub mean_angle: f64,
    pub sum_cos2: f64,
}

impl PrincipalAngleSet {
    pub fn degrees(&self) -> Vec<f64> {
        self.angles.iter().map(|a| a.to_degrees()).collect()
    }

    pub fn mean_angle_deg(&self) -> f64 {
        self.mean_angle.to_degrees()
    }

    /// Cosines of the angles (canonical correlations).
    pub fn cosines(&self) -> Vec<f64> {
        self.angles.iter().map(|a| a.cos()).collect()
    }
}

/// Orthonormal frame spanning the rows of `rows`, with positive R diagonal.
pub fn orthonormalize(rows: &Mat) -> Result<Subspace> {
    let (k, d) = rows.shape();
    if k == 0 || k > d {
        return Err(MscError::InvalidArgument(format!(
            "need 1 <= k <= d, got k={k}, d={d}"
        )));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(MscError::InvalidArgument("non-finite entries".into()));
    }
    let sv = SVD::new(rows.clone(), false, false).singular_values;
    let (smax, smin) = sv
        .iter()
        .fold((0.0_f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if smax == 0.0 || smin <= RANK_TOL * smax {
        return Err(MscError::RankDeficient(format!(
            "smallest singular value {smin:.3e} vs largest {smax:.3e}"
        )));
    }
    let (q, _) = gram_schmidt_rows(rows, 0.0)
        .ok_or_else(|| MscError::RankDeficient("Gram-Schmidt breakdown".into()))?;
    Ok(Subspace { basis: q })
}

/// Principal angles between row spaces; uses min(k1, k2) angles.
pub fn principal_angles(u: &Subspace, v: &Subspace) -> Result<PrincipalAngleSet> {
    if u.dim() != v.dim() {
        return Err(MscError::DimensionMismatch(format!(
            "ambient dimensions {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    if u.rank() == 0 || v.rank() == 0 {
        return Err(MscError::InvalidArgument(
            "principal angles need nonempty frames".into(),
        ));
    }
    let cross = u.basis() * v.basis().transpose();
    let mut cos: Vec<f64> = SVD::new(cross, false, false)
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    cos.sort_by(|a, b| b.total_cmp(a));
    Ok(angle_set_from_cosines(&cos))
}

fn angle_set_from_cosines(cos: &[f64]) -> PrincipalAngleSet {
    let angles: Vec<f64> = cos.iter().map(|c| c.acos()).collect();
    let mean_angle = angles.iter().sum::<f64>() / angles.len() as f64;
    let sum_cos2 = cos.iter().map(|c| c * c).sum();
    PrincipalAngleSet {
        angles,
        mean_angle,
        sum_cos2,
    }
}

/// Σcos²θ between two frames, computed as ‖U Vᵀ‖²_F (no SVD).
pub fn sum_cos2(u: &Subspace, v: &Subspace) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(MscError::DimensionMismatch(format!(
            "ambient dimensions {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok((u.basis() * v.basis().transpose()).norm_squared())
}

/// Stiefel-uniform rank-`k` frame in R^d.
pub fn haar_sample(d: usize, k: usize, seed: u64) -> Result<Subspace> {
    haar_sample_with(&mut rng::stream(seed), d, k)
}

/// [`haar_sample`] drawing from a caller-supplied stream.
pub fn haar_sample_with<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Result<Subspace> {
    if k == 0 || k > d {
        return Err(MscError::InvalidArgument(format!(
            "need 1 <= k <= d, got k={k}, d={d}"
        )));
    }
    loop {
        let g = Mat::from_fn(d, k, |_, _| rng::gaussian(rng));
        // A Gaussian matrix is rank-deficient with probability zero; retry if it happens.
        if let Some((q, _)) = gram_schmidt_columns(g, 1e-12) {
            return Ok(Subspace {
                basis: q.transpose(),
            });
        }
    }
}

/// `x − BᵀBx`.
pub fn ablate(x: &[f64], u: &Subspace) -> Result<Vec<f64>> {
    check_len(x, u)?;
    let p = u.project(x);
    Ok(x.iter().zip(p).map(|(a, b)| a - b).collect())
}

/// Frame for the part of `rows` orthogonal to `u`.
pub fn orthogonalize_against(rows: &Mat, u: &Subspace) -> Result<Subspace> {
    if rows.ncols() != u.dim() {
        return Err(MscError::DimensionMismatch(format!(
            "rows have width {}, subspace has d={}",
            rows.ncols(),
            u.dim()
        )));
    }
    let scale = rows.norm();
    let mut resid = rows.clone();
    // Two projection passes keep the complement exact to round-off.
    for _ in 0..2 {
        let coeff = &resid * u.basis().transpose();
        resid -= coeff * u.basis();
    }
    if resid.norm() <= 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(MscError::InsideSubspace(
            "rows have no component outside the subspace".into(),
        ));
    }
    let out = orthonormalize(&resid)?;
    // Re-project once more after normalization.
    let coeff = out.basis() * u.basis().transpose();
    let cleaned = out.basis() - coeff * u.basis();
    orthonormalize(&cleaned)
}

/// ‖Bx‖² / ‖x‖².
pub fn energy_fraction(x: &[f64], u: &Subspace) -> Result<f64> {
    check_len(x, u)?;
    let total: f64 = x.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(MscError::InvalidArgument("zero vector has no energy".into()));
    }
    let inside: f64 = u.coords(x).iter().map(|c| c * c).sum();
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Split of one sequence position into the part predictable from earlier
/// positions and the novel remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct TfaSplit {
    pub predictable: Vec<f64>,
    pub novel: Vec<f64>,
}

/// Decomposes row `t` (1-based) of `sequence` against the span of rows `1..t`.
pub fn tfa_split(sequence: &Mat, t: usize) -> Result<TfaSplit> {
    let (len, d) = sequence.shape();
    if t == 0 || t > len {
        return Err(MscError::InvalidArgument(format!(
            "position {t} outside 1..={len}"
        )));
    }
    let x: Vec<f64> = sequence.row(t - 1).iter().copied().collect();
    if t == 1 {
        return Ok(TfaSplit {
            predictable: vec![0.0; d],
            novel: x,
        });
    }
    let past = sequence.rows(0, t - 1).into_owned();
    let svd = SVD::new(past, false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| MscError::Numerical("SVD did not return right vectors".into()))?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut predictable = vec![0.0; d];
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax == 0.0 || s <= 1e-12 * smax {
            continue;
        }
        let row = vt.row(i);
        let c: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        for (p, r) in predictable.iter_mut().zip(row.iter()) {
            *p += c * r;
        }
    }
    let novel = x.iter().zip(&predictable).map(|(a, b)| a - b).collect();
    Ok(TfaSplit { predictable, novel })
}

fn check_len(x: &[f64], u: &Subspace) -> Result<()> {
    if x.len() != u.dim() {
        return Err(MscError::DimensionMismatch(format!(
            "vector of length {} vs subspace d={}",
            x.len(),
            u.dim()
        )));
    }
    Ok(())
}
