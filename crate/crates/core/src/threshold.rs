//! Adaptive entry-wise hard thresholding of idiosyncratic covariance estimates.
//!
//! Two estimators live here:
//!
//! * the initial estimator built from the sample covariance with its top `K`
//!   principal components removed, thresholded on the correlation scale at
//!   `tau_ij = C * sqrt(r_ii * r_jj) * omega`;
//! * the residual estimator built from regression residuals `u_it`, where the
//!   entry `sigma_ij = (1/T) sum_t u_it u_jt` is thresholded at
//!   `C * sqrt(theta_ij) * omega` with
//!   `theta_ij = (1/T) sum_t (u_it u_jt - sigma_ij)^2`.
//!
//! Diagonals are never thresholded. The rate term `omega` is supplied by the
//! caller, see [`omega_rate`].

use faer::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default positive-definiteness floor.
pub const DEFAULT_PD_FLOOR: f64 = 1e-8;

/// `0.0, 0.1, ..., 3.0`.
pub fn default_c_grid() -> Vec<f64> {
    (0..=30).map(|i| i as f64 / 10.0).collect()
}

/// Threshold constant, rate and selection grid for one thresholding call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub c: f64,
    pub rate: f64,
    pub pd_floor: f64,
    pub c_grid: Vec<f64>,
}

impl ThresholdConfig {
    pub fn new(c: f64, rate: f64) -> Result<Self> {
        let cfg = Self {
            c,
            rate,
            pd_floor: DEFAULT_PD_FLOOR,
            c_grid: default_c_grid(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Result<Self> {
        self.c_grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn with_pd_floor(mut self, floor: f64) -> Result<Self> {
        self.pd_floor = floor;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::Argument(format!("threshold constant C must be finite and ≥ 0, got {}", self.c)));
        }
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(Error::Argument(format!("rate must be finite and > 0, got {}", self.rate)));
        }
        if !(self.pd_floor > 0.0) {
            return Err(Error::Argument(format!("pd_floor must be > 0, got {}", self.pd_floor)));
        }
        validate_grid(&self.c_grid)
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument("C grid must not be empty".into()));
    }
    if grid.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(Error::Argument("C grid entries must be finite and ≥ 0".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("C grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `sqrt(ln n / T) + 1 / sqrt(n)`.
pub fn omega_rate(n: usize, t: usize) -> f64 {
    assert!(n >= 1 && t >= 1, "omega_rate needs n ≥ 1 and T ≥ 1");
    ((n as f64).ln() / t as f64).sqrt() + 1.0 / (n as f64).sqrt()
}

/// The single thresholding function `s_ij(z)`: hard thresholding at `tau`.
#[inline]
pub fn hard_threshold(z: f64, tau: f64) -> f64 {
    if z.abs() > tau {
        z
    } else {
        0.0
    }
}

/// Row-centred copy of `y`.
pub(crate) fn center_rows(y: MatRef<'_, f64>) -> Mat<f64> {
    let t = y.ncols() as f64;
    let means: Vec<f64> = (0..y.nrows()).map(|i| (0..y.ncols()).map(|j| y[(i, j)]).sum::<f64>() / t).collect();
    Mat::<f64>::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - means[i])
}

/// `(1/T) sum_t (y_t - ybar)(y_t - ybar)'` for a `p x T` panel with `T ≥ 2`.
pub fn sample_covariance(y: MatRef<'_, f64>) -> Mat<f64> {
    let yc = center_rows(y);
    let mut s = Scale(1.0 / y.ncols() as f64) * (&yc * yc.transpose());
    linalg::symmetrize(&mut s);
    s
}

/// `S_y` minus its top-`k` eigencomponents.
pub fn pca_residual_matrix(s_y: MatRef<'_, f64>, k: usize) -> Result<Mat<f64>> {
    let p = s_y.nrows();
    if p != s_y.ncols() {
        return Err(Error::shape("pca_residual_matrix", "square matrix", format!("{}x{}", p, s_y.ncols())));
    }
    if k >= p {
        return Err(Error::Argument(format!("K={k} must be smaller than the dimension p={p}")));
    }
    let mut r = s_y.to_owned();
    if k > 0 {
        let eig = linalg::sym_eigen(s_y)?;
        let lead = eig.leading_vectors(k);
        let scaled = Mat::<f64>::from_fn(p, k, |i, j| lead[(i, j)] * eig.values[j]);
        r -= &scaled * lead.transpose();
    }
    linalg::symmetrize(&mut r);
    Ok(r)
}

/// Residual matrix computed straight from the panel.
///
/// Equal to `pca_residual_matrix(sample_covariance(y), k)`, but when `p > T` the
/// leading eigenvectors come from the `T x T` dual problem, so no `p x p`
/// eigendecomposition is needed.
pub fn pca_residual_from_data(y: MatRef<'_, f64>, k: usize) -> Result<Mat<f64>> {
    let (p, t) = (y.nrows(), y.ncols());
    if k >= p {
        return Err(Error::Argument(format!("K={k} must be smaller than the dimension p={p}")));
    }
    if p <= t {
        return pca_residual_matrix(sample_covariance(y).as_ref(), k);
    }
    if k > t {
        return Err(Error::Argument(format!("K={k} exceeds T={t}")));
    }
    let yc = center_rows(y);
    let inv_t = 1.0 / t as f64;
    let mut r = Scale(inv_t) * (&yc * yc.transpose());
    if k > 0 {
        let mut gram = Scale(inv_t) * (yc.transpose() * &yc);
        linalg::symmetrize(&mut gram);
        let eig = linalg::sym_eigen(gram.as_ref())?;
        // lambda_i zeta_i zeta_i' = (Yc v_i)(Yc v_i)' / T
        let w = Scale(inv_t.sqrt()) * (&yc * eig.leading_vectors(k));
        r -= &w * w.transpose();
    }
    linalg::symmetrize(&mut r);
    Ok(r)
}

/// Initial idiosyncratic estimate: hard-threshold the off-diagonals of `r` on the correlation scale.
pub fn hard_threshold_correlation(r: MatRef<'_, f64>, cfg: &ThresholdConfig) -> Result<Mat<f64>> {
    let mut out = r.to_owned();
    hard_threshold_correlation_in_place(&mut out, cfg.c, cfg.rate)?;
    Ok(out)
}

pub(crate) fn hard_threshold_correlation_in_place(r: &mut Mat<f64>, c: f64, rate: f64) -> Result<()> {
    let n = r.nrows();
    let sd = positive_diagonal_sqrt(r.as_ref())?;
    let scale = c * rate;
    for j in 0..n {
        for i in (j + 1)..n {
            let v = hard_threshold(r[(i, j)], scale * sd[i] * sd[j]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(())
}

fn positive_diagonal_sqrt(r: MatRef<'_, f64>) -> Result<Vec<f64>> {
    (0..r.nrows())
        .map(|i| {
            let v = r[(i, i)];
            if v > 0.0 && v.is_finite() {
                Ok(v.sqrt())
            } else {
                Err(Error::DegenerateVariance { index: i, value: v })
            }
        })
        .collect()
}

/// Second moments of regression residuals and the variances of their products.
#[derive(Debug, Clone)]
pub struct ResidualMoments {
    /// `sigma_ij = (1/T) sum_t u_it u_jt`.
    pub sigma: Mat<f64>,
    /// `theta_ij = (1/T) sum_t (u_it u_jt - sigma_ij)^2`.
    pub theta: Mat<f64>,
}

impl ResidualMoments {
    /// Moments of an `s x T` residual matrix (divisor `T`, no centring).
    pub fn new(residuals: MatRef<'_, f64>) -> Result<Self> {
        let t = residuals.ncols();
        if t < 2 {
            return Err(Error::Argument(format!("T ≥ 2 required, got {t}")));
        }
        let inv_t = 1.0 / t as f64;
        let mut sigma = Scale(inv_t) * (residuals * residuals.transpose());
        linalg::symmetrize(&mut sigma);
        let sq = Mat::<f64>::from_fn(residuals.nrows(), t, |i, j| residuals[(i, j)] * residuals[(i, j)]);
        let mut theta = Scale(inv_t) * (&sq * sq.transpose());
        let n = sigma.nrows();
        for j in 0..n {
            for i in 0..n {
                theta[(i, j)] = (theta[(i, j)] - sigma[(i, j)] * sigma[(i, j)]).max(0.0);
            }
        }
        linalg::symmetrize(&mut theta);
        Ok(Self { sigma, theta })
    }

    /// Threshold `sigma` off-diagonals at `c * sqrt(theta_ij) * rate`.
    pub fn threshold(&self, c: f64, rate: f64) -> Mat<f64> {
        let n = self.sigma.nrows();
        let mut out = self.sigma.clone();
        let scale = c * rate;
        for j in 0..n {
            for i in (j + 1)..n {
                let v = hard_threshold(self.sigma[(i, j)], scale * self.theta[(i, j)].sqrt());
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

/// Residual idiosyncratic estimate from an `s x T` residual matrix.
pub fn residual_covariance_threshold(residuals: MatRef<'_, f64>, cfg: &ThresholdConfig) -> Result<Mat<f64>> {
    Ok(ResidualMoments::new(residuals)?.threshold(cfg.c, cfg.rate))
}

/// Outcome of scanning the C grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CSelection {
    pub c: f64,
    /// False when no candidate produced a matrix above the PD floor; `c` is then the largest candidate.
    pub qualified: bool,
}

fn scan<F>(candidates: &[f64], floor: f64, mut apply: F) -> Result<(CSelection, Mat<f64>)>
where
    F: FnMut(f64) -> Result<Mat<f64>>,
{
    let mut last = None;
    for &c in candidates {
        let m = apply(c)?;
        if linalg::exceeds_floor(m.as_ref(), floor) {
            return Ok((CSelection { c, qualified: true }, m));
        }
        last = Some((c, m));
    }
    let (c, m) = last.ok_or_else(|| Error::Argument("empty C grid".into()))?;
    Ok((CSelection { c, qualified: false }, m))
}

/// Smallest grid C whose initial estimate has `lambda_min ≥ pd_floor`.
pub fn choose_c_correlation(r: MatRef<'_, f64>, cfg: &ThresholdConfig) -> Result<CSelection> {
    cfg.validate()?;
    Ok(scan(&cfg.c_grid, cfg.pd_floor, |c| {
        let mut m = r.to_owned();
        hard_threshold_correlation_in_place(&mut m, c, cfg.rate)?;
        Ok(m)
    })?
    .0)
}

/// Smallest grid C whose residual estimate has `lambda_min ≥ pd_floor`.
pub fn choose_c_residual(residuals: MatRef<'_, f64>, cfg: &ThresholdConfig) -> Result<CSelection> {
    cfg.validate()?;
    let moments = ResidualMoments::new(residuals)?;
    Ok(scan(&cfg.c_grid, cfg.pd_floor, |c| Ok(moments.threshold(c, cfg.rate)))?.0)
}

/// How the threshold constant is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Use this constant as is.
    Fixed(f64),
    /// Smallest grid value giving a matrix above the PD floor.
    MinPd,
    /// Smallest value `≥` the given constant (the constant itself, then larger grid values)
    /// giving a matrix above the PD floor.
    MinPdFrom(f64),
}

impl ThresholdRule {
    fn candidates(&self, grid: &[f64]) -> Vec<f64> {
        match *self {
            ThresholdRule::Fixed(c) => vec![c],
            ThresholdRule::MinPd => grid.to_vec(),
            ThresholdRule::MinPdFrom(c0) => std::iter::once(c0).chain(grid.iter().copied().filter(|&c| c > c0)).collect(),
        }
    }
}

/// Threshold rules and grid for both thresholding steps of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSettings {
    pub initial: ThresholdRule,
    pub residual: ThresholdRule,
    pub pd_floor: f64,
    pub c_grid: Vec<f64>,
}

impl Default for ThresholdSettings {
    fn default() -> Self {
        Self::auto()
    }
}

impl ThresholdSettings {
    /// Minimum-C-for-positive-definiteness for both steps.
    pub fn auto() -> Self {
        Self {
            initial: ThresholdRule::MinPd,
            residual: ThresholdRule::MinPd,
            pd_floor: DEFAULT_PD_FLOOR,
            c_grid: default_c_grid(),
        }
    }

    /// The same fixed constant for both steps.
    pub fn fixed(c: f64) -> Self {
        Self {
            initial: ThresholdRule::Fixed(c),
            residual: ThresholdRule::Fixed(c),
            ..Self::auto()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for rule in [self.initial, self.residual] {
            if let ThresholdRule::Fixed(c) | ThresholdRule::MinPdFrom(c) = rule {
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(Error::Argument(format!("threshold constant C must be finite and ≥ 0, got {c}")));
                }
            }
        }
        if !(self.pd_floor > 0.0) {
            return Err(Error::Argument("pd_floor must be > 0".into()));
        }
        validate_grid(&self.c_grid)
    }

    /// Threshold the residual matrix `r` (consumed) for the initial estimate.
    pub(crate) fn apply_initial(&self, r: Mat<f64>, rate: f64) -> Result<(Mat<f64>, CSelection)> {
        if let ThresholdRule::Fixed(c) = self.initial {
            let mut r = r;
            hard_threshold_correlation_in_place(&mut r, c, rate)?;
            return Ok((r, CSelection { c, qualified: true }));
        }
        let candidates = self.initial.candidates(&self.c_grid);
        let (sel, m) = scan(&candidates, self.pd_floor, |c| {
            let mut m = r.clone();
            hard_threshold_correlation_in_place(&mut m, c, rate)?;
            Ok(m)
        })?;
        Ok((m, sel))
    }

    /// Threshold the residual moments for the final idiosyncratic estimate.
    pub(crate) fn apply_residual(&self, moments: &ResidualMoments, rate: f64) -> Result<(Mat<f64>, CSelection)> {
        if let ThresholdRule::Fixed(c) = self.residual {
            return Ok((moments.threshold(c, rate), CSelection { c, qualified: true }));
        }
        let candidates = self.residual.candidates(&self.c_grid);
        let (sel, m) = scan(&candidates, self.pd_floor, |c| Ok(moments.threshold(c, rate)))?;
        Ok((m, sel))
    }
}
