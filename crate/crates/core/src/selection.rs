//! Choosing the number of factors.
//!
//! The information criterion uses unweighted principal components:
//! `IC(k) = ln( ||Y - Y F_k F_k' / T||_F^2 / (pT) ) + k g(p, T)`, where the residual
//! sum of squares equals the tail sum of the eigenvalues of `Y'Y`.

use faer::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::threshold::center_rows;
use crate::wpc;

/// Default upper bound on the number of factors considered.
pub const DEFAULT_MAX_FACTORS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcPenalty {
    /// `((p+T)/(pT)) ln(pT/(p+T))`.
    Gp1,
    /// `((p+T)/(pT)) ln(min(p, T))`.
    Gp2,
}

impl IcPenalty {
    pub fn value(self, p: usize, t: usize) -> f64 {
        let (pf, tf) = (p as f64, t as f64);
        let scale = (pf + tf) / (pf * tf);
        match self {
            IcPenalty::Gp1 => scale * (pf * tf / (pf + tf)).ln(),
            IcPenalty::Gp2 => scale * pf.min(tf).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    Gp1,
    Gp2,
    EigenRatio,
}

impl From<IcPenalty> for SelectionCriterion {
    fn from(p: IcPenalty) -> Self {
        match p {
            IcPenalty::Gp1 => SelectionCriterion::Gp1,
            IcPenalty::Gp2 => SelectionCriterion::Gp2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionResult {
    pub k_hat: usize,
    /// Candidate values of `k`, aligned with `criterion_values`.
    pub k_values: Vec<usize>,
    pub criterion_values: Vec<f64>,
    pub criterion: SelectionCriterion,
}

/// Eigenvalues of `Y'Y` (descending), computed on the smaller Gram matrix.
fn gram_eigenvalues(y: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut g = if y.nrows() < y.ncols() { y * y.transpose() } else { y.transpose() * y };
    linalg::symmetrize(&mut g);
    Ok(linalg::sym_eigenvalues(g.as_ref())?.into_iter().map(|v| v.max(0.0)).collect())
}

fn prepared(y: MatRef<'_, f64>, center: bool) -> Mat<f64> {
    if center {
        center_rows(y)
    } else {
        y.to_owned()
    }
}

/// Information-criterion choice of `K` over `k = 0..=n_max`; ties go to the smaller `k`.
///
/// With `center`, each variable is demeaned over time first.
pub fn select_k_ic(y: MatRef<'_, f64>, n_max: usize, penalty: IcPenalty, center: bool) -> Result<KSelectionResult> {
    let (p, t) = (y.nrows(), y.ncols());
    if n_max >= p.min(t) {
        return Err(Error::Argument(format!("N={n_max} must be smaller than min(p, T) = {}", p.min(t))));
    }
    let y = prepared(y, center);
    let total = y.squared_norm_l2();
    if total == 0.0 {
        return Err(Error::DegenerateInput("Y is identically zero".into()));
    }
    let eig = gram_eigenvalues(y.as_ref())?;
    let g = penalty.value(p, t);
    let scale = 1.0 / (p as f64 * t as f64);
    let mut values = Vec::with_capacity(n_max + 1);
    for k in 0..=n_max {
        let rss = if k == 0 { total } else { eig[k..].iter().sum::<f64>() };
        values.push((rss * scale).ln() + k as f64 * g);
    }
    Ok(KSelectionResult {
        k_hat: argmin_first(&values),
        k_values: (0..=n_max).collect(),
        criterion_values: values,
        criterion: penalty.into(),
    })
}

/// `||Y - Y F_k F_k' / T||_F^2` computed directly from the factor estimate.
pub fn ic_residual_direct(y: MatRef<'_, f64>, k: usize) -> Result<f64> {
    let t = y.ncols() as f64;
    let f = wpc::ordinary_pca_factors(y, k)?;
    let fit = Scale(1.0 / t) * ((y * &f) * f.transpose());
    Ok((y - &fit).squared_norm_l2())
}

/// Eigen-ratio choice `argmax_{1 <= k <= N} lambda_k / lambda_{k+1}` over the eigenvalues of `Y'Y/T`.
///
/// A zero `lambda_{k+1}` (up to roundoff) makes the ratio infinite and selects the first such `k`.
pub fn select_k_eigen_ratio(y: MatRef<'_, f64>, n_max: usize) -> Result<KSelectionResult> {
    let (p, t) = (y.nrows(), y.ncols());
    if n_max == 0 || n_max + 1 > p.min(t) {
        return Err(Error::Argument(format!("need 1 <= N and N + 1 <= min(p, T) = {} (N={n_max})", p.min(t))));
    }
    if y.squared_norm_l2() == 0.0 {
        return Err(Error::DegenerateInput("Y is identically zero".into()));
    }
    let eig: Vec<f64> = gram_eigenvalues(y)?.into_iter().map(|v| v / t as f64).collect();
    // eigenvalues at roundoff level count as exact zeros
    let tol = eig[0] * p.max(t) as f64 * f64::EPSILON;
    let eig: Vec<f64> = eig.into_iter().map(|v| if v <= tol { 0.0 } else { v }).collect();
    let ratios: Vec<f64> = (1..=n_max)
        .map(|k| {
            let (a, b) = (eig[k - 1], eig[k]);
            if b == 0.0 {
                if a == 0.0 { f64::NAN } else { f64::INFINITY }
            } else {
                a / b
            }
        })
        .collect();
    let mut best = 0;
    for (i, r) in ratios.iter().enumerate() {
        if *r > ratios[best] || ratios[best].is_nan() && !r.is_nan() {
            best = i;
        }
    }
    Ok(KSelectionResult {
        k_hat: best + 1,
        k_values: (1..=n_max).collect(),
        criterion_values: ratios,
        criterion: SelectionCriterion::EigenRatio,
    })
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
