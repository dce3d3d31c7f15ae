//! Dense linear-algebra helpers: classical PCA via SVD, loading sign
//! normalization, subspace angles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Classical PCA fit of a set of rows.
#[derive(Clone, Debug)]
pub struct Pca {
    pub center: DVector<f64>,
    /// `d x r` orthonormal loadings, `r = min(n, d)`, columns sorted by
    /// decreasing eigenvalue.
    pub loadings: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Leading `k` loadings.
    pub fn loadings_k(&self, k: usize) -> DMatrix<f64> {
        self.loadings.columns(0, k).into_owned()
    }
}

/// Classical PCA of the rows of `data` (`n x d`) by SVD of the centered
/// matrix. Eigenvalues use the `n - 1` divisor.
pub fn classical_pca(data: &DMatrix<f64>) -> Result<Pca> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 rows, got {n}")));
    }
    let center = data.row_mean().transpose();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= center.transpose();
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not return right singular vectors".into()))?;
    let r = svd.singular_values.len();
    if svd.singular_values.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite singular values".into()));
    }
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut loadings = DMatrix::zeros(d, r);
    let mut eigenvalues = Vec::with_capacity(r);
    for (c, &src) in order.iter().enumerate() {
        loadings.set_column(c, &v_t.row(src).transpose());
        let s = svd.singular_values[src];
        eigenvalues.push(s * s / (n - 1) as f64);
    }
    normalize_signs(&mut loadings);
    Ok(Pca { center, loadings, eigenvalues })
}

/// Flip each column so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn normalize_signs(p: &mut DMatrix<f64>) {
    for mut col in p.column_iter_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Largest principal angle between the column spans of two orthonormal
/// `d x k` bases (the angle `arccos(sqrt(delta_k))`, with `delta_k` the
/// smallest eigenvalue of `P_new' P_old P_old' P_new`).
///
/// Computed as `atan2(sin, cos)` from the singular values of the
/// projection and its orthogonal residual, which keeps full precision
/// near 0 and near pi/2.
pub fn krzanowski_angle(p_new: &DMatrix<f64>, p_old: &DMatrix<f64>) -> f64 {
    let cross = p_old.transpose() * p_new;
    let cos_min = cross
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0);
    let residual = p_new - p_old * cross;
    let sin_max = residual
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0);
    sin_max.atan2(cos_min)
}

/// `max |P'P - I|`.
pub fn orthonormality_error(p: &DMatrix<f64>) -> f64 {
    let g = p.transpose() * p;
    let k = g.nrows();
    let mut err: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((g[(i, j)] - target).abs());
        }
    }
    err
}

/// Scores `(x - center)' P` for a single row.
pub fn project_row(x: &[f64], center: &DVector<f64>, loadings: &DMatrix<f64>) -> DVector<f64> {
    let centered = DVector::from_iterator(x.len(), x.iter().zip(center.iter()).map(|(a, c)| a - c));
    loadings.transpose() * centered
}

/// Reconstruction `center + P t`.
pub fn reconstruct(scores: &DVector<f64>, center: &DVector<f64>, loadings: &DMatrix<f64>) -> DVector<f64> {
    center + loadings * scores
}

/// Scores for every row of `x` (`n x d`).
pub fn scores(x: &DMatrix<f64>, center: &DVector<f64>, loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= center.transpose();
    }
    centered * loadings
}

/// Fitted values `1 m' + T P'`.
pub fn fitted(scores: &DMatrix<f64>, center: &DVector<f64>, loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = scores * loadings.transpose();
    for mut row in out.row_iter_mut() {
        row += center.transpose();
    }
    out
}

/// Gather the given rows of `x` into a new matrix.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn angle_analytic_cases() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(krzanowski_angle(&e1, &e1), 0.0);
        assert!((krzanowski_angle(&e1, &e2) - PI / 2.0).abs() < 1e-12);
        let t = PI / 6.0;
        let v = DMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()]);
        assert!((krzanowski_angle(&e1, &v) - t).abs() < 1e-12);
        assert!((krzanowski_angle(&v, &e1) - t).abs() < 1e-12);
    }

    #[test]
    fn angle_matches_eigenvalue_definition() {
        // 3-d, k = 2: planes differing by a rotation of 0.3 rad about e1.
        let a = 0.3f64;
        let p_old = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p_new = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, a.cos(), a.sin()]);
        let m = p_new.transpose() * &p_old * p_old.transpose() * &p_new;
        let delta = m.symmetric_eigenvalues().min();
        let via_eig = delta.sqrt().acos();
        assert!((krzanowski_angle(&p_new, &p_old) - via_eig).abs() < 1e-9);
        assert!((via_eig - a).abs() < 1e-9);
    }

    #[test]
    fn pca_of_line_recovers_direction() {
        let data = DMatrix::from_fn(20, 2, |i, j| (i as f64 - 9.5) * if j == 0 { 3.0 } else { 4.0 });
        let pca = classical_pca(&data).unwrap();
        assert!((pca.loadings[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((pca.loadings[(1, 0)] - 0.8).abs() < 1e-12);
        assert!(pca.eigenvalues[1].abs() < 1e-10);
        assert!(orthonormality_error(&pca.loadings) < 1e-12);
    }

    #[test]
    fn sign_convention_is_applied() {
        let mut p = DMatrix::from_column_slice(3, 1, &[0.1, -0.9, 0.2]);
        normalize_signs(&mut p);
        assert_eq!(p[(1, 0)], 0.9);
    }
}
