//! Dense linear-algebra helpers shared by the estimators.
//!
//! Everything is expressed on `faer` matrices. Eigenpairs are always returned in
//! descending order with a fixed sign convention so that downstream results are
//! bit-reproducible.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::prelude::*;
use faer::Side;

use crate::error::{Error, Result};

/// Relative gap below which two eigenvalues are treated as tied.
pub const EIGEN_TIE_RTOL: f64 = 1e-12;

/// Replace `a` by `(a + a') / 2` in place.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Flip each column so that its largest-magnitude entry is positive.
///
/// Ties in magnitude go to the lowest row index.
pub fn fix_column_signs(m: &mut Mat<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..m.nrows() {
            let a = m[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if m.nrows() > 0 && m[(best, j)] < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Unit eigenvectors as columns, sign-fixed.
    pub vectors: Mat<f64>,
    /// Set when at least two eigenvalues are tied within [`EIGEN_TIE_RTOL`].
    pub degenerate: bool,
}

impl SymEigen {
    /// First `k` eigenvectors as an owned `n x k` matrix.
    pub fn leading_vectors(&self, k: usize) -> Mat<f64> {
        self.vectors.as_ref().subcols(0, k).to_owned()
    }

    /// True when any two of the first `k + 1` eigenvalues are tied.
    pub fn leading_tied(&self, k: usize) -> bool {
        let upto = (k + 1).min(self.values.len());
        (1..upto).any(|i| tied(self.values[i - 1], self.values[i]))
    }
}

fn tied(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale > 0.0 && (a - b).abs() <= EIGEN_TIE_RTOL * scale
}

/// Full eigendecomposition of the symmetric matrix `a` (lower triangle is read).
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<SymEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::shape("sym_eigen", "square matrix", format!("{}x{}", n, a.ncols())));
    }
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    // faer sorts ascending; reverse.
    let mut values: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let mut vectors = Mat::<f64>::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    fix_column_signs(&mut vectors);

    let mut degenerate = false;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && tied(values[end - 1], values[end]) {
            end += 1;
        }
        if end - start > 1 {
            degenerate = true;
            order_tied_block(&mut values, &mut vectors, start, end);
        }
        start = end;
    }
    Ok(SymEigen {
        values,
        vectors,
        degenerate,
    })
}

/// Orders eigenvectors of a tied block lexicographically (descending).
fn order_tied_block(values: &mut [f64], vectors: &mut Mat<f64>, start: usize, end: usize) {
    let n = vectors.nrows();
    let mut cols: Vec<(f64, Vec<f64>)> = (start..end)
        .map(|j| (values[j], (0..n).map(|i| vectors[(i, j)]).collect()))
        .collect();
    cols.sort_by(|a, b| {
        for (x, y) in a.1.iter().zip(b.1.iter()) {
            match y.partial_cmp(x) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    for (off, (v, col)) in cols.into_iter().enumerate() {
        values[start + off] = v;
        for (i, x) in col.into_iter().enumerate() {
            vectors[(i, start + off)] = x;
        }
    }
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut v = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    v.reverse();
    Ok(v)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: MatRef<'_, f64>) -> Result<f64> {
    let v = sym_eigenvalues(a)?;
    Ok(v.last().copied().unwrap_or(f64::INFINITY))
}

/// True when `lambda_min(a) > floor`, decided by attempting a Cholesky factorisation of `a - floor * I`.
pub fn exceeds_floor(a: MatRef<'_, f64>, floor: f64) -> bool {
    let n = a.nrows();
    let shifted = Mat::<f64>::from_fn(n, n, |i, j| if i == j { a[(i, j)] - floor } else { a[(i, j)] });
    shifted.llt(Side::Lower).is_ok()
}

/// Cholesky factor of a symmetric positive-definite matrix, usable as `A^{-1}`.
pub struct SpdFactor {
    llt: Llt<f64>,
    /// Diagonal shift that had to be added before factorisation succeeded.
    pub jitter: f64,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor")
            .field("dim", &self.dim())
            .field("jitter", &self.jitter)
            .finish()
    }
}

impl SpdFactor {
    /// Factorise `a`; fails if `a` is not numerically positive definite.
    pub fn new(a: MatRef<'_, f64>) -> Result<Self> {
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::NotPositiveDefinite(format!("Cholesky failed: {e:?}")))?;
        Ok(Self { llt, jitter: 0.0 })
    }

    /// Factorise `a`, retrying once with `jitter` added to the diagonal.
    pub fn with_jitter(a: MatRef<'_, f64>, jitter: f64) -> Result<Self> {
        match Self::new(a) {
            Ok(f) => Ok(f),
            Err(_) => {
                let n = a.nrows();
                let shifted = Mat::<f64>::from_fn(n, n, |i, j| if i == j { a[(i, j)] + jitter } else { a[(i, j)] });
                let mut f = Self::new(shifted.as_ref()).map_err(|_| {
                    Error::NotPositiveDefinite(format!(
                        "matrix of order {n} not positive definite even after diagonal jitter {jitter:e}"
                    ))
                })?;
                f.jitter = jitter;
                Ok(f)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Lower-triangular Cholesky factor `L` with `A = L L'`.
    pub fn lower(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    /// `A^{-1} rhs`.
    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(rhs)
    }

    /// `L^{-1} rhs`, so that `(L^{-1} X)'(L^{-1} X) = X' A^{-1} X`.
    pub fn whiten(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let mut z = rhs.to_owned();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.llt.L(),
            z.as_mut(),
            faer::get_global_parallelism(),
        );
        z
    }

    /// `X' A^{-1} X`, symmetrised.
    pub fn quad_form(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let z = self.whiten(x);
        let mut g = z.transpose() * &z;
        symmetrize(&mut g);
        g
    }

    pub fn inverse(&self) -> Mat<f64> {
        let mut inv = self.llt.inverse();
        symmetrize(&mut inv);
        inv
    }
}

/// `a^{-1/2}` for a symmetric positive-definite `a`, via its eigendecomposition.
pub fn inv_sqrt_spd(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let eig = sym_eigen(a)?;
    let n = a.nrows();
    if let Some(&min) = eig.values.last() {
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min:e} is not positive"
            )));
        }
    }
    let scaled = Mat::<f64>::from_fn(n, n, |i, j| eig.vectors[(i, j)] / eig.values[j].sqrt());
    let mut out = &scaled * eig.vectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Inverse of a symmetric matrix through its eigendecomposition.
///
/// Fails when the smallest eigenvalue magnitude is below `rtol * max |eigenvalue|`.
pub fn sym_inverse(a: MatRef<'_, f64>, rtol: f64) -> Result<Mat<f64>> {
    let eig = sym_eigen(a)?;
    let n = a.nrows();
    let scale = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.values.iter().any(|v| !(v.abs() > rtol * scale)) || scale == 0.0 {
        return Err(Error::Singular(format!("symmetric matrix of order {n} is numerically singular")));
    }
    let scaled = Mat::<f64>::from_fn(n, n, |i, j| eig.vectors[(i, j)] / eig.values[j]);
    let mut out = &scaled * eig.vectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Rows of `m` at `indices`, in the given order.
pub fn select_rows(m: MatRef<'_, f64>, indices: &[usize]) -> Mat<f64> {
    Mat::<f64>::from_fn(indices.len(), m.ncols(), |i, j| m[(indices[i], j)])
}

/// Principal submatrix `m[indices, indices]`.
pub fn select_principal(m: MatRef<'_, f64>, indices: &[usize]) -> Mat<f64> {
    Mat::<f64>::from_fn(indices.len(), indices.len(), |i, j| m[(indices[i], indices[j])])
}

/// Largest absolute entry.
pub fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].abs());
        }
    }
    out
}

/// Build a matrix from row vectors; all rows must share one length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::shape("from_rows", format!("{ncols} columns"), format!("{} in row {i}", r.len())));
    }
    Ok(Mat::<f64>::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Row-major nested vectors, for serialisation.
pub fn to_rows(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_rule_makes_largest_entry_positive() {
        let mut m = Mat::<f64>::from_fn(3, 2, |i, j| match (i, j) {
            (0, 0) => 0.1,
            (1, 0) => -0.9,
            (2, 0) => 0.3,
            (0, 1) => -0.5,
            (1, 1) => 0.5,
            _ => 0.0,
        });
        fix_column_signs(&mut m);
        assert_eq!(m[(1, 0)], 0.9);
        // tie between rows 0 and 1: lowest index wins and is made positive
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(m[(1, 1)], -0.5);
    }

    #[test]
    fn eigen_descending_and_reconstructs() {
        let a = from_rows(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 0.5], vec![0.0, 0.5, 1.0]]).unwrap();
        let e = sym_eigen(a.as_ref()).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let d = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { e.values[i] } else { 0.0 });
        let rec = &e.vectors * &d * e.vectors.transpose();
        assert!(max_abs((&rec - &a).as_ref()) < 1e-12);
        assert!(!e.degenerate);
    }

    #[test]
    fn tied_spectrum_is_flagged() {
        let a = Mat::<f64>::identity(3, 3);
        let e = sym_eigen(a.as_ref()).unwrap();
        assert!(e.degenerate);
        assert!(e.leading_tied(1));
    }

    #[test]
    fn spd_factor_quad_form_matches_inverse() {
        let a = from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let x = from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let f = SpdFactor::new(a.as_ref()).unwrap();
        let q = f.quad_form(x.as_ref());
        let direct = x.transpose() * f.inverse() * &x;
        assert!(max_abs((&q - &direct).as_ref()) < 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let a = from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(SpdFactor::new(a.as_ref()).is_err());
        let f = SpdFactor::with_jitter(a.as_ref(), 1e-8).unwrap();
        assert_eq!(f.jitter, 1e-8);
    }

    #[test]
    fn inverse_square_root() {
        let a = from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        let r = inv_sqrt_spd(a.as_ref()).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((r[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
    }
}
