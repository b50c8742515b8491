//! Dense linear-algebra helpers shared by the subspace routines.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{MscError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Two passes of modified Gram-Schmidt over the rows of `rows`.
///
/// Returns the orthonormalized rows and the diagonal of the triangular
/// factor (always nonnegative). Fails with `None` when a residual norm is
/// not above `tol` times the largest input row norm.
pub(crate) fn gram_schmidt_rows(rows: &Mat, tol: f64) -> Option<(Mat, Vec<f64>)> {
    let (q, diag) = gram_schmidt_columns(rows.transpose(), tol)?;
    Some((q.transpose(), diag))
}

/// Column version of [`gram_schmidt_rows`]; columns are contiguous, so this
/// is the fast path for tall frames.
pub(crate) fn gram_schmidt_columns(mut q: Mat, tol: f64) -> Option<(Mat, Vec<f64>)> {
    let (d, k) = q.shape();
    let scale = (0..k).map(|j| q.column(j).norm()).fold(0.0_f64, f64::max);
    if k > 0 && scale == 0.0 {
        return None;
    }
    let mut diag = Vec::with_capacity(k);
    let data = q.as_mut_slice();
    for i in 0..k {
        let (done, rest) = data.split_at_mut(i * d);
        let col = &mut rest[..d];
        for _pass in 0..2 {
            for j in 0..i {
                let prev = &done[j * d..(j + 1) * d];
                let dot: f64 = prev.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                col.iter_mut().zip(prev).for_each(|(c, p)| *c -= dot * p);
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= tol * scale {
            return None;
        }
        col.iter_mut().for_each(|v| *v /= norm);
        diag.push(norm);
    }
    Some((q, diag))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
/// Eigenvectors are the columns of the returned matrix.
pub fn sym_eigen_desc(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Flip `v` so that its largest-magnitude entry is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v.get(best).copied().unwrap_or(0.0) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`k` right singular vectors of `x` (n×d) as the rows of a k×d matrix,
/// together with all singular values in descending order.
pub fn top_right_frame(x: &Mat, k: usize) -> (Mat, Vec<f64>) {
    let (n, d) = x.shape();
    if n >= d {
        let (vals, vecs) = sym_eigen_desc(&(x.transpose() * x));
        let sv = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
        let mut frame = Mat::zeros(k, d);
        for i in 0..k.min(d) {
            frame.set_row(i, &vecs.column(i).transpose());
        }
        (frame, sv)
    } else {
        let (vals, vecs) = sym_eigen_desc(&(x * x.transpose()));
        let sv: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
        let mut frame = Mat::zeros(k, d);
        for i in 0..k.min(n) {
            if sv[i] <= 0.0 {
                continue;
            }
            let mut row = (x.transpose() * vecs.column(i)) / sv[i];
            fix_sign(row.as_mut_slice());
            frame.set_row(i, &row.transpose());
        }
        (frame, sv)
    }
}

/// Column means and the column-centered copy of `x`.
pub fn center_columns(x: &Mat) -> (Mat, Vector) {
    let n = x.nrows().max(1) as f64;
    let mean = x.row_sum().transpose() / n;
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    (centered, mean)
}

/// Ridge solution `W` (d×m) minimizing ‖XW − Y‖² + α‖W‖².
///
/// Uses the primal normal equations when n ≥ d and the dual form otherwise.
pub fn ridge_solve(x: &Mat, y: &Mat, alpha: f64) -> Result<Mat> {
    let (n, d) = x.shape();
    if y.nrows() != n {
        return Err(MscError::DimensionMismatch(format!(
            "ridge: {} rows of X but {} rows of Y",
            n,
            y.nrows()
        )));
    }
    if alpha < 0.0 {
        return Err(MscError::InvalidArgument("ridge alpha must be >= 0".into()));
    }
    let singular = || MscError::Numerical("ridge normal equations are singular".into());
    if n >= d {
        let mut gram = x.transpose() * x;
        for i in 0..d {
            gram[(i, i)] += alpha;
        }
        let chol = Cholesky::new(gram).ok_or_else(singular)?;
        Ok(chol.solve(&(x.transpose() * y)))
    } else {
        let mut gram = x * x.transpose();
        for i in 0..n {
            gram[(i, i)] += alpha;
        }
        let chol = Cholesky::new(gram).ok_or_else(singular)?;
        Ok(x.transpose() * chol.solve(y))
    }
}

/// Linear-interpolated quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            sorted[lo] * (1.0 - w) + sorted[hi] * w
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}
