//! Domain types shared by every estimator.
//!
//! Variables are rows and time points are columns: an [`ObservationMatrix`] with
//! `p` variables observed at `T` time points is a `p x T` matrix.

use std::collections::HashSet;
use std::fmt;
use std::time::Duration;

use faer::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A `p x T` panel of finite observations with optional variable labels.
#[derive(Debug, Clone)]
pub struct ObservationMatrix {
    values: Mat<f64>,
    variable_ids: Vec<String>,
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    NonFinite { row: usize, col: usize },
    TooFewVariables,
    TooFewTimePoints(usize),
    IdLengthMismatch { ids: usize, rows: usize },
    DuplicateId(String),
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::NonFinite { row, col } => write!(f, "non-finite entry at ({row},{col})"),
            ValidationIssue::TooFewVariables => write!(f, "p ≥ 1 required"),
            ValidationIssue::TooFewTimePoints(t) => write!(f, "T ≥ 2 required (got T={t})"),
            ValidationIssue::IdLengthMismatch { ids, rows } => {
                write!(f, "{ids} variable ids supplied for {rows} rows")
            }
            ValidationIssue::DuplicateId(id) => write!(f, "duplicate variable id {id:?}"),
        }
    }
}

/// Check every [`ObservationMatrix`] invariant and report all violations.
pub fn validate(values: MatRef<'_, f64>, variable_ids: Option<&[String]>) -> std::result::Result<(), Vec<ValidationIssue>> {
    let mut issues = Vec::new();
    if values.nrows() < 1 {
        issues.push(ValidationIssue::TooFewVariables);
    }
    if values.ncols() < 2 {
        issues.push(ValidationIssue::TooFewTimePoints(values.ncols()));
    }
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            if !values[(i, j)].is_finite() {
                issues.push(ValidationIssue::NonFinite { row: i, col: j });
            }
        }
    }
    if let Some(ids) = variable_ids {
        if ids.len() != values.nrows() {
            issues.push(ValidationIssue::IdLengthMismatch {
                ids: ids.len(),
                rows: values.nrows(),
            });
        }
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id.as_str()) {
                issues.push(ValidationIssue::DuplicateId(id.clone()));
            }
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

impl ObservationMatrix {
    /// Validate and wrap a `p x T` matrix. Ids default to `"0".."p-1"`.
    pub fn new(values: Mat<f64>, variable_ids: Option<Vec<String>>) -> Result<Self> {
        validate(values.as_ref(), variable_ids.as_deref())
            .map_err(|issues| Error::Validation(issues.iter().map(ToString::to_string).collect()))?;
        let variable_ids = variable_ids.unwrap_or_else(|| (0..values.nrows()).map(|i| i.to_string()).collect());
        Ok(Self { values, variable_ids })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(linalg::from_rows(rows)?, None)
    }

    /// Number of variables `p`.
    pub fn n_vars(&self) -> usize {
        self.values.nrows()
    }

    /// Number of time points `T`.
    pub fn n_times(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn variable_ids(&self) -> &[String] {
        &self.variable_ids
    }

    pub fn into_values(self) -> Mat<f64> {
        self.values
    }

    /// Rows at `subset`, in the subset's order.
    pub fn restrict(&self, subset: &SubsetSelector) -> Result<ObservationMatrix> {
        subset.check_against(self.n_vars())?;
        let values = linalg::select_rows(self.values.as_ref(), subset.indices());
        let variable_ids = subset.indices().iter().map(|&i| self.variable_ids[i].clone()).collect();
        Ok(ObservationMatrix { values, variable_ids })
    }
}

/// Ordered list of distinct variable indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SubsetSelector {
    indices: Vec<usize>,
}

impl TryFrom<Vec<usize>> for SubsetSelector {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        SubsetSelector::new(v)
    }
}

impl From<SubsetSelector> for Vec<usize> {
    fn from(s: SubsetSelector) -> Self {
        s.indices
    }
}

impl SubsetSelector {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Argument("subset must contain at least one index".into()));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if !seen.insert(i) {
                return Err(Error::Argument(format!("duplicate index {i} in subset")));
            }
        }
        Ok(Self { indices })
    }

    /// `{0, 1, ..., n-1}`.
    pub fn all(n: usize) -> Result<Self> {
        Self::new((0..n).collect())
    }

    /// `{0, 1, ..., s-1}`.
    pub fn first(s: usize) -> Result<Self> {
        Self::all(s)
    }

    /// Parse comma-separated indices and inclusive ranges: `"0..49,100,200..205"`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if let Some((a, b)) = part.split_once("..") {
                let lo = parse_index(a, part)?;
                let hi = parse_index(b.trim_start_matches('='), part)?;
                if hi < lo {
                    return Err(Error::Argument(format!("empty range {part:?}")));
                }
                out.extend(lo..=hi);
            } else {
                out.push(parse_index(part, part)?);
            }
        }
        Self::new(out)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Error unless every index lies in `[0, p)`.
    pub fn check_against(&self, p: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= p) {
            Some(&i) => Err(Error::Argument(format!("subset index {i} out of range for p={p}"))),
            None => Ok(()),
        }
    }

    /// True when the subset is exactly `0..p` in order.
    pub fn is_identity(&self, p: usize) -> bool {
        self.indices.len() == p && self.indices.iter().enumerate().all(|(k, &i)| k == i)
    }

    /// Indices in `[0, p)` not in the subset, ascending.
    pub fn complement(&self, p: usize) -> Vec<usize> {
        let set: HashSet<usize> = self.indices.iter().copied().collect();
        (0..p).filter(|i| !set.contains(i)).collect()
    }
}

fn parse_index(s: &str, part: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Argument(format!("cannot parse subset element {part:?}")))
}

/// Which estimator produced a [`FactorModelEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Method1,
    Method2,
    Oracle,
    DivideConquer,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Method1 => "M1",
            Method::Method2 => "M2",
            Method::Oracle => "ORA",
            Method::DivideConquer => "DC",
        })
    }
}

/// Wall time spent in each stage of an estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    /// Sample covariance, residual matrix and initial thresholding.
    pub initial_threshold: Duration,
    /// Cholesky factorisation of the weight matrix and the weighted solve.
    pub inversion: Duration,
    pub eigensolve: Duration,
    /// Alignment and averaging of group factors (divide-and-conquer only).
    pub merge: Duration,
    /// Loadings, residual thresholding and assembly on the target subset.
    pub finish: Duration,
    pub total: Duration,
}

impl StageTimings {
    pub fn accumulate(&mut self, other: &StageTimings) {
        self.initial_threshold += other.initial_threshold;
        self.inversion += other.inversion;
        self.eigensolve += other.eigensolve;
        self.merge += other.merge;
        self.finish += other.finish;
    }
}

/// Side information recorded while estimating.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    /// Threshold constant used for the initial idiosyncratic estimate (per group for divide-and-conquer).
    pub initial_c: Vec<f64>,
    /// Threshold constant used for the residual idiosyncratic estimate.
    pub residual_c: f64,
    /// Rate term used for the residual threshold.
    pub residual_rate: f64,
    /// Diagonal jitter added to the initial weight matrix, if any.
    pub jitter: f64,
    /// Smallest eigenvalue of the idiosyncratic estimate on the subset.
    pub idio_min_eigenvalue: f64,
    /// `(1/T) F'F` for the factors actually used (not the identity for averaged factors).
    pub factor_gram: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

/// Factors, subset loadings and covariance estimates produced by one pipeline.
#[derive(Debug, Clone)]
pub struct FactorModelEstimate {
    /// `T x K` estimated (or, for the oracle, true) factors.
    pub factors: Mat<f64>,
    /// `s x K` loadings of the target variables.
    pub loadings: Mat<f64>,
    /// `s x s` idiosyncratic covariance estimate.
    pub idio_cov: Mat<f64>,
    /// `s x s` covariance estimate `B B' + Sigma_u`.
    pub total_cov: Mat<f64>,
    /// Leading eigenvalues of `Y' W^{-1} Y / T`; `None` for the oracle and divide-and-conquer.
    pub eig_diag: Option<Vec<f64>>,
    pub method: Method,
    pub diagnostics: EstimateDiagnostics,
}

/// Idiosyncratic covariance of a simulated model.
#[derive(Debug, Clone)]
pub enum IdioCovariance {
    /// Independent errors with the given variances.
    Diagonal(Vec<f64>),
    Dense(Mat<f64>),
}

impl IdioCovariance {
    pub fn dim(&self) -> usize {
        match self {
            IdioCovariance::Diagonal(d) => d.len(),
            IdioCovariance::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        self.principal(&(0..self.dim()).collect::<Vec<_>>())
    }

    /// Principal submatrix on `indices`.
    pub fn principal(&self, indices: &[usize]) -> Mat<f64> {
        match self {
            IdioCovariance::Diagonal(d) => {
                Mat::<f64>::from_fn(indices.len(), indices.len(), |i, j| if i == j { d[indices[i]] } else { 0.0 })
            }
            IdioCovariance::Dense(m) => linalg::select_principal(m.as_ref(), indices),
        }
    }

    /// `B' Sigma_u^{-1} B`.
    pub fn quad_form_inverse(&self, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
        match self {
            IdioCovariance::Diagonal(d) => {
                if let Some((i, &v)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(Error::DegenerateVariance { index: i, value: v });
                }
                let k = b.ncols();
                Ok(Mat::<f64>::from_fn(k, k, |a, c| {
                    (0..b.nrows()).map(|i| b[(i, a)] * b[(i, c)] / d[i]).sum()
                }))
            }
            IdioCovariance::Dense(m) => Ok(linalg::SpdFactor::new(m.as_ref())?.quad_form(b)),
        }
    }
}

/// Simulation ground truth `Sigma = B B' + Sigma_u` (factor covariance is the identity).
#[derive(Debug, Clone)]
pub struct TrueModel {
    /// `p x K`.
    pub loadings: Mat<f64>,
    /// `T x K`.
    pub factors: Mat<f64>,
    pub idio_cov: IdioCovariance,
}

impl TrueModel {
    pub fn new(loadings: Mat<f64>, factors: Mat<f64>, idio_cov: IdioCovariance) -> Result<Self> {
        if idio_cov.dim() != loadings.nrows() {
            return Err(Error::shape("TrueModel", loadings.nrows(), idio_cov.dim()));
        }
        if factors.ncols() != loadings.ncols() {
            return Err(Error::shape("TrueModel factors", loadings.ncols(), factors.ncols()));
        }
        Ok(Self {
            loadings,
            factors,
            idio_cov,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }

    /// `B_S B_S' + Sigma_{u,S}`, built exactly from the parts.
    pub fn implied_cov_subset(&self, subset: &SubsetSelector) -> Result<Mat<f64>> {
        subset.check_against(self.n_vars())?;
        let b = linalg::select_rows(self.loadings.as_ref(), subset.indices());
        let mut cov = &b * b.transpose() + self.idio_cov.principal(subset.indices());
        linalg::symmetrize(&mut cov);
        Ok(cov)
    }

    /// Full `p x p` implied covariance.
    pub fn implied_cov(&self) -> Mat<f64> {
        let mut cov = &self.loadings * self.loadings.transpose() + self.idio_cov.to_dense();
        linalg::symmetrize(&mut cov);
        cov
    }

    pub fn loadings_subset(&self, subset: &SubsetSelector) -> Mat<f64> {
        linalg::select_rows(self.loadings.as_ref(), subset.indices())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y3x2() -> ObservationMatrix {
        ObservationMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap()
    }

    #[test]
    fn restrict_permutes_rows() {
        let y = y3x2();
        let r = y.restrict(&SubsetSelector::new(vec![2, 0]).unwrap()).unwrap();
        assert_eq!(linalg::to_rows(r.values()), vec![vec![5.0, 6.0], vec![1.0, 2.0]]);
        assert_eq!(r.variable_ids(), &["2".to_string(), "0".to_string()]);
    }

    #[test]
    fn restrict_identity_is_noop() {
        let y = y3x2();
        let r = y.restrict(&SubsetSelector::all(3).unwrap()).unwrap();
        assert_eq!(linalg::to_rows(r.values()), linalg::to_rows(y.values()));
    }

    #[test]
    fn restrict_out_of_range() {
        let y = y3x2();
        assert!(matches!(y.restrict(&SubsetSelector::new(vec![5]).unwrap()), Err(Error::Argument(_))));
    }

    #[test]
    fn restrict_is_a_projection() {
        let y = y3x2();
        let s = SubsetSelector::new(vec![2, 1]).unwrap();
        let once = y.restrict(&s).unwrap();
        let twice = once.restrict(&SubsetSelector::all(s.len()).unwrap()).unwrap();
        assert_eq!(linalg::to_rows(once.values()), linalg::to_rows(twice.values()));
        assert_eq!(once.n_times(), y.n_times());
    }

    #[test]
    fn validate_reports_problems() {
        let ok = linalg::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!(validate(ok.as_ref(), None).is_ok());

        let mut bad = ok.clone();
        bad[(1, 2)] = f64::NAN;
        let issues = validate(bad.as_ref(), None).unwrap_err();
        assert_eq!(issues, vec![ValidationIssue::NonFinite { row: 1, col: 2 }]);
        assert_eq!(issues[0].to_string(), "non-finite entry at (1,2)");

        let short = linalg::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let issues = validate(short.as_ref(), None).unwrap_err();
        assert!(issues[0].to_string().starts_with("T ≥ 2 required"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = linalg::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ids = vec!["a".to_string(), "a".to_string()];
        assert!(ObservationMatrix::new(m, Some(ids)).is_err());
    }

    #[test]
    fn subset_parsing() {
        let s = SubsetSelector::parse("0..3,7, 10..11").unwrap();
        assert_eq!(s.indices(), &[0, 1, 2, 3, 7, 10, 11]);
        assert!(SubsetSelector::parse("1,1").is_err());
        assert!(SubsetSelector::parse("").is_err());
        assert!(SubsetSelector::parse("4..2").is_err());
        assert!(SubsetSelector::parse("x").is_err());
    }

    #[test]
    fn implied_cov_matches_parts() {
        let b = linalg::from_rows(&[vec![1.0, 0.0], vec![0.5, 2.0], vec![0.0, 1.0]]).unwrap();
        let f = Mat::<f64>::zeros(4, 2);
        let tm = TrueModel::new(b.clone(), f, IdioCovariance::Diagonal(vec![1.0, 2.0, 3.0])).unwrap();
        let full = tm.implied_cov();
        for i in 0..3 {
            for j in 0..3 {
                let bb: f64 = (0..2).map(|k| b[(i, k)] * b[(j, k)]).sum();
                let d = if i == j { [1.0, 2.0, 3.0][i] } else { 0.0 };
                assert!((full[(i, j)] - bb - d).abs() < 1e-10);
            }
        }
        let sub = tm.implied_cov_subset(&SubsetSelector::new(vec![2, 0]).unwrap()).unwrap();
        assert_eq!(sub[(0, 1)], full[(2, 0)]);
        assert_eq!(sub[(0, 0)], full[(2, 2)]);
    }
}
