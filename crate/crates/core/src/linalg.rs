use nalgebra::{DMatrix, DVector, SVD};

/// Condition threshold for normal-equation systems `XᵀX`.
pub(crate) const SINGULAR_CONDITION: f64 = 1e12;

/// Least-squares solve of `x β ≈ y` through a thin SVD.
///
/// Returns `None` when the condition number of `xᵀx` exceeds
/// [`SINGULAR_CONDITION`] or `x` has fewer rows than columns.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    if x.nrows() < x.ncols() {
        return None;
    }
    let svd = SVD::new(x.clone(), true, true);
    if normal_condition(&svd.singular_values) > SINGULAR_CONDITION {
        return None;
    }
    svd.solve(y, 0.0).ok()
}

/// `(σ_max / σ_min)²`, the condition number of the normal matrix.
pub(crate) fn normal_condition(singular_values: &DVector<f64>) -> f64 {
    let max = singular_values.max();
    let min = singular_values.min();
    if min <= 0.0 || !min.is_finite() {
        return f64::INFINITY;
    }
    (max / min).powi(2)
}

/// Symmetric-PSD test via Cholesky of `m + tol·I`.
pub fn is_symmetric_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol.max(1e-12 * m[(i, j)].abs()) {
                return false;
            }
        }
    }
    let scale = m.amax().max(1.0);
    let shifted = m + DMatrix::identity(n, n) * (tol * scale);
    shifted.cholesky().is_some()
}
