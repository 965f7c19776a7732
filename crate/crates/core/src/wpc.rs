//! Weighted principal components.
//!
//! Solves
//!
//! ```text
//! min_{B, f_t} sum_t (y_t - B f_t)' W^{-1} (y_t - B f_t)
//! s.t. (1/T) sum_t f_t f_t' = I_K,  B' W^{-1} B diagonal
//! ```
//!
//! through the `T x T` eigenproblem of `Y' W^{-1} Y`: the columns of `F` are
//! `sqrt(T)` times its top-`K` unit eigenvectors and `B = Y F / T`. Working in
//! the `T x T` space keeps the cost at `O(n^3 + n^2 T + n T^2 + T^3)` with the
//! `n^3` term coming only from the Cholesky factorisation of `W`.

use std::time::{Duration, Instant};

use faer::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};

/// Factors, loadings and leading eigenvalues from [`wpc_estimate`].
#[derive(Debug, Clone)]
pub struct WpcResult {
    /// `T x K`, with `(1/T) F'F = I_K`.
    pub factors: Mat<f64>,
    /// `n x K`, `Y F / T`.
    pub loadings: Mat<f64>,
    /// Top-`K` eigenvalues of `Y' W^{-1} Y / T`, descending.
    pub eig_diag: Vec<f64>,
    /// Diagonal jitter that was needed to factorise the weight.
    pub jitter: f64,
    /// Leading eigenvalues were tied; the factor ordering is then conventional.
    pub degenerate_spectrum: bool,
    pub inversion_time: Duration,
    pub eigensolve_time: Duration,
}

fn check_rank(k: usize, n: usize, t: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    if k >= n.min(t) {
        return Err(Error::Argument(format!("K={k} must be smaller than min(n, T) = {}", n.min(t))));
    }
    Ok(())
}

/// Weighted principal components of the `n x T` panel `y` with weight `W = idio_weight`.
///
/// If `idio_weight` is not numerically positive definite, `pd_floor` is added to its
/// diagonal once; failure after that is an error.
pub fn wpc_estimate(y: MatRef<'_, f64>, idio_weight: MatRef<'_, f64>, k: usize, pd_floor: f64) -> Result<WpcResult> {
    if idio_weight.nrows() != y.nrows() || idio_weight.ncols() != y.nrows() {
        return Err(Error::shape(
            "wpc_estimate weight",
            format!("{0}x{0}", y.nrows()),
            format!("{}x{}", idio_weight.nrows(), idio_weight.ncols()),
        ));
    }
    check_rank(k, y.nrows(), y.ncols())?;
    let start = Instant::now();
    let factor = SpdFactor::with_jitter(idio_weight, pd_floor)?;
    let factor_time = start.elapsed();
    let mut out = wpc_estimate_factored(y, &factor, k)?;
    out.inversion_time += factor_time;
    Ok(out)
}

/// [`wpc_estimate`] with a pre-factorised weight.
pub fn wpc_estimate_factored(y: MatRef<'_, f64>, weight: &SpdFactor, k: usize) -> Result<WpcResult> {
    let (n, t) = (y.nrows(), y.ncols());
    if weight.dim() != n {
        return Err(Error::shape("wpc_estimate weight", n, weight.dim()));
    }
    check_rank(k, n, t)?;
    let tf = t as f64;

    let start = Instant::now();
    let whitened = weight.whiten(y);
    let mut gram = Scale(1.0 / tf) * (whitened.transpose() * &whitened);
    linalg::symmetrize(&mut gram);
    let inversion_time = start.elapsed();

    let start = Instant::now();
    let eig = linalg::sym_eigen(gram.as_ref())?;
    let eigensolve_time = start.elapsed();

    let eig_diag: Vec<f64> = eig.values[..k].to_vec();
    if let Some(&last) = eig_diag.last() {
        if !(last > 0.0) {
            return Err(Error::DegenerateInput(format!(
                "weighted Gram matrix has only {} positive eigenvalues, K={k} requested",
                eig.values.iter().filter(|v| **v > 0.0).count()
            )));
        }
    }
    let factors = Scale(tf.sqrt()) * eig.leading_vectors(k);
    let loadings = Scale(1.0 / tf) * (y * &factors);
    Ok(WpcResult {
        factors,
        loadings,
        eig_diag,
        jitter: weight.jitter,
        degenerate_spectrum: eig.leading_tied(k),
        inversion_time,
        eigensolve_time,
    })
}

/// `sqrt(T)` times the top-`k` unit eigenvectors of `Y'Y` (unweighted PCA), sign-fixed.
pub fn ordinary_pca_factors(y: MatRef<'_, f64>, k: usize) -> Result<Mat<f64>> {
    let (n, t) = (y.nrows(), y.ncols());
    if k > n.min(t) {
        return Err(Error::Argument(format!("k={k} exceeds min(n, T) = {}", n.min(t))));
    }
    if k == 0 {
        return Ok(Mat::<f64>::zeros(t, 0));
    }
    let mut gram = y.transpose() * y;
    linalg::symmetrize(&mut gram);
    let eig = linalg::sym_eigen(gram.as_ref())?;
    Ok(Scale((t as f64).sqrt()) * eig.leading_vectors(k))
}

/// Rotation `H = V^{-1} F_hat' F B' W^{-1} B / T` relating estimated to true factors.
pub fn rotation_matrix(
    eig_diag: &[f64],
    f_hat: MatRef<'_, f64>,
    f_true: MatRef<'_, f64>,
    b_true: MatRef<'_, f64>,
    idio_weight: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    let factor = SpdFactor::new(idio_weight)?;
    rotation_matrix_factored(eig_diag, f_hat, f_true, b_true, &factor)
}

/// [`rotation_matrix`] with a pre-factorised weight.
pub fn rotation_matrix_factored(
    eig_diag: &[f64],
    f_hat: MatRef<'_, f64>,
    f_true: MatRef<'_, f64>,
    b_true: MatRef<'_, f64>,
    weight: &SpdFactor,
) -> Result<Mat<f64>> {
    if b_true.nrows() != weight.dim() {
        return Err(Error::shape("rotation_matrix loadings", weight.dim(), b_true.nrows()));
    }
    let info = weight.quad_form(b_true);
    rotation_from_information(eig_diag, f_hat, f_true, info.as_ref())
}

/// `H` given the information matrix `B' W^{-1} B` directly.
pub fn rotation_from_information(
    eig_diag: &[f64],
    f_hat: MatRef<'_, f64>,
    f_true: MatRef<'_, f64>,
    info: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    let k = eig_diag.len();
    if f_hat.ncols() != k || f_true.ncols() != info.nrows() || f_hat.nrows() != f_true.nrows() {
        return Err(Error::shape(
            "rotation_matrix",
            format!("F_hat T x {k}, F T x {}", info.nrows()),
            format!("F_hat {}x{}, F {}x{}", f_hat.nrows(), f_hat.ncols(), f_true.nrows(), f_true.ncols()),
        ));
    }
    if let Some(v) = eig_diag.iter().find(|v| !(v.abs() > 0.0) || !v.is_finite()) {
        return Err(Error::Singular(format!("V_hat has a zero or non-finite entry ({v})")));
    }
    let t = f_hat.nrows() as f64;
    let cross = f_hat.transpose() * f_true;
    let mut h = Scale(1.0 / t) * (&cross * info);
    for i in 0..k {
        for j in 0..h.ncols() {
            h[(i, j)] /= eig_diag[i];
        }
    }
    Ok(h)
}
