//! Small dense least-squares helpers shared by the regression-based models.

use nalgebra::{DMatrix, DVector};

pub(crate) struct OlsFit {
    pub beta: DVector<f64>,
    pub ssr: f64,
    /// (X'X)^-1, or the ridge-regularized inverse when `ridge > 0`.
    pub xtx_inv: DMatrix<f64>,
}

/// Solves min ||y - X b||² + ridge·||b||² through the normal equations.
/// Returns `None` when X'X (+ ridge) is not numerically positive definite.
pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Option<OlsFit> {
    let mut xtx = x.transpose() * x;
    if ridge > 0.0 {
        for i in 0..xtx.nrows() {
            xtx[(i, i)] += ridge;
        }
    } else if is_ill_conditioned(&xtx) {
        return None;
    }
    let chol = xtx.cholesky()?;
    let beta = chol.solve(&(x.transpose() * y));
    let residuals = y - x * &beta;
    let ssr = residuals.norm_squared();
    if !beta.iter().all(|b| b.is_finite()) {
        return None;
    }
    Some(OlsFit {
        beta,
        ssr,
        xtx_inv: chol.inverse(),
    })
}

/// Penalized least squares with a per-coefficient diagonal penalty.
pub(crate) fn ridge_diag(x: &DMatrix<f64>, y: &DVector<f64>, penalty: &[f64]) -> Option<DVector<f64>> {
    let mut xtx = x.transpose() * x;
    for (i, p) in penalty.iter().enumerate() {
        xtx[(i, i)] += p;
    }
    let chol = xtx.cholesky()?;
    Some(chol.solve(&(x.transpose() * y)))
}

/// Relative pivot test on the Cholesky factor; catches collinear designs
/// that are positive definite only through rounding.
fn is_ill_conditioned(xtx: &DMatrix<f64>) -> bool {
    let n = xtx.nrows();
    if n == 0 {
        return false;
    }
    let scale = (0..n).map(|i| xtx[(i, i)]).fold(0.0_f64, f64::max);
    if scale <= 0.0 || !scale.is_finite() {
        return true;
    }
    match xtx.clone().cholesky() {
        None => true,
        Some(c) => {
            let l = c.l();
            (0..n).any(|i| {
                let d = xtx[(i, i)].max(f64::MIN_POSITIVE);
                l[(i, i)] * l[(i, i)] < 1e-10 * d
            })
        }
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Companion matrix of x_t = a_1 x_{t-1} + ... + a_p x_{t-p}.
pub(crate) fn ar_companion(coefs: &[f64]) -> DMatrix<f64> {
    let p = coefs.len();
    let mut m = DMatrix::zeros(p, p);
    for (j, a) in coefs.iter().enumerate() {
        m[(0, j)] = *a;
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    m
}
