//! Error norms, sparsity and model-condition diagnostics, and Gaussian
//! Fisher-information comparisons between the full panel and a subset.

use faer::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{FactorModelEstimate, IdioCovariance, Method, SubsetSelector};
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};

/// Relative-gap threshold under which two diagonal entries of `Q` count as indistinct.
pub const DISTINCTNESS_RTOL: f64 = 0.1;

/// Relative norm `d^{-1/2} || M^{-1/2} (A - M) M^{-1/2} ||_F`.
///
/// Computed with the Cholesky factor `M = L L'`: `L^{-1} X L^{-T}` is an orthogonal
/// similarity of `M^{-1/2} X M^{-1/2}`, so the Frobenius norms agree.
pub fn relative_norm(est: MatRef<'_, f64>, truth: MatRef<'_, f64>) -> Result<f64> {
    check_square_pair("relative_norm", est, truth)?;
    if truth.nrows() == 0 {
        return Ok(0.0);
    }
    let factor = SpdFactor::new(truth)?;
    Ok(relative_norm_factored(est, truth, &factor))
}

/// [`relative_norm`] with the Cholesky factor of `truth` supplied.
pub fn relative_norm_factored(est: MatRef<'_, f64>, truth: MatRef<'_, f64>, truth_factor: &SpdFactor) -> f64 {
    let diff = est - truth;
    let half = truth_factor.whiten(diff.as_ref());
    let full = truth_factor.whiten(half.transpose());
    full.norm_l2() / (truth.nrows() as f64).sqrt()
}

/// `max_ij |est_ij - truth_ij|`.
pub fn max_norm_diff(est: MatRef<'_, f64>, truth: MatRef<'_, f64>) -> Result<f64> {
    check_square_pair("max_norm_diff", est, truth)?;
    Ok(linalg::max_abs((est - truth).as_ref()))
}

/// Spectral norm of `est^{-1} - truth^{-1}`.
pub fn inv_operator_norm_diff(est: MatRef<'_, f64>, truth: MatRef<'_, f64>) -> Result<f64> {
    check_square_pair("inv_operator_norm_diff", est, truth)?;
    let b = sym_inverse_any(truth)?;
    inv_operator_norm_with_inverse(est, b.as_ref())
}

fn inv_operator_norm_with_inverse(est: MatRef<'_, f64>, truth_inv: MatRef<'_, f64>) -> Result<f64> {
    let a = sym_inverse_any(est)?;
    let mut diff = &a - truth_inv;
    linalg::symmetrize(&mut diff);
    spectral_norm_sym(diff.as_ref())
}

/// Inverse through Cholesky when positive definite, else through the eigendecomposition.
fn sym_inverse_any(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    match SpdFactor::new(a) {
        Ok(f) => Ok(f.inverse()),
        Err(_) => linalg::sym_inverse(a, 1e-13),
    }
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub fn spectral_norm_sym(a: MatRef<'_, f64>) -> Result<f64> {
    Ok(linalg::sym_eigenvalues(a)?.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

fn check_square_pair(ctx: &'static str, a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<()> {
    if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.nrows() != b.nrows() {
        return Err(Error::shape(
            ctx,
            format!("two square matrices of one order, got {}x{}", a.nrows(), a.ncols()),
            format!("{}x{}", b.nrows(), b.ncols()),
        ));
    }
    Ok(())
}

/// `max_t || f_hat_t - H f_t ||` with factors stored as `T x K` rows.
pub fn factor_error(f_hat: MatRef<'_, f64>, f_true: MatRef<'_, f64>, h: MatRef<'_, f64>) -> Result<f64> {
    max_row_error("factor_error", f_hat, f_true, h)
}

/// `max_i || b_hat_i - H b_i ||` with loadings stored as `n x K` rows.
pub fn loading_error(b_hat: MatRef<'_, f64>, b_true: MatRef<'_, f64>, h: MatRef<'_, f64>) -> Result<f64> {
    max_row_error("loading_error", b_hat, b_true, h)
}

fn max_row_error(ctx: &'static str, est: MatRef<'_, f64>, truth: MatRef<'_, f64>, h: MatRef<'_, f64>) -> Result<f64> {
    let k = truth.ncols();
    if est.nrows() != truth.nrows() || est.ncols() != h.nrows() || h.ncols() != k {
        return Err(Error::shape(
            ctx,
            format!("{}x{} estimate against {}x{} rotation", truth.nrows(), h.nrows(), h.nrows(), k),
            format!("{}x{}", est.nrows(), est.ncols()),
        ));
    }
    let rotated = truth * h.transpose();
    let diff = est - &rotated;
    Ok((0..diff.nrows()).map(|i| diff.row(i).norm_l2()).fold(0.0, f64::max))
}

/// `max_{i,t} | b_hat_i' f_hat_t - b_i' f_t |`.
pub fn component_error(
    b_hat: MatRef<'_, f64>,
    f_hat: MatRef<'_, f64>,
    b_true: MatRef<'_, f64>,
    f_true: MatRef<'_, f64>,
) -> Result<f64> {
    if b_hat.nrows() != b_true.nrows() || f_hat.nrows() != f_true.nrows() || b_hat.ncols() != f_hat.ncols() || b_true.ncols() != f_true.ncols() {
        return Err(Error::shape(
            "component_error",
            format!("{}x{} common component", b_true.nrows(), f_true.nrows()),
            format!("{}x{}", b_hat.nrows(), f_hat.nrows()),
        ));
    }
    let est = b_hat * f_hat.transpose();
    let truth = b_true * f_true.transpose();
    Ok(linalg::max_abs((&est - &truth).as_ref()))
}

/// Per-method error summary against simulation ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: Method,
    pub relative_norm: f64,
    pub max_norm: f64,
    pub inv_op_norm: f64,
    pub factor_err: f64,
    pub loading_err: f64,
    pub component_err: f64,
}

/// Ground truth on the target subset, pre-factorised for repeated comparisons.
#[derive(Debug)]
pub struct SubsetTruth {
    /// `Sigma_S`.
    pub cov: Mat<f64>,
    cov_factor: SpdFactor,
    cov_inv: Mat<f64>,
    /// `B_S`.
    pub loadings: Mat<f64>,
    /// `F` (`T x K`).
    pub factors: Mat<f64>,
}

impl SubsetTruth {
    pub fn new(cov: Mat<f64>, loadings: Mat<f64>, factors: Mat<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != loadings.nrows() || loadings.ncols() != factors.ncols() {
            return Err(Error::shape(
                "SubsetTruth",
                format!("{0}x{0} covariance with {0} loading rows", loadings.nrows()),
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        let cov_factor = SpdFactor::new(cov.as_ref())?;
        let cov_inv = cov_factor.inverse();
        Ok(Self {
            cov,
            cov_factor,
            cov_inv,
            loadings,
            factors,
        })
    }
}

impl ErrorReport {
    /// Compare `est` with the truth, using rotation `h` for factors and loadings.
    pub fn compute(est: &FactorModelEstimate, truth: &SubsetTruth, h: MatRef<'_, f64>) -> Result<Self> {
        check_square_pair("ErrorReport", est.total_cov.as_ref(), truth.cov.as_ref())?;
        let cov = est.total_cov.as_ref();
        Ok(Self {
            method: est.method,
            relative_norm: relative_norm_factored(cov, truth.cov.as_ref(), &truth.cov_factor),
            max_norm: max_norm_diff(cov, truth.cov.as_ref())?,
            inv_op_norm: inv_operator_norm_with_inverse(cov, truth.cov_inv.as_ref())?,
            factor_err: factor_error(est.factors.as_ref(), truth.factors.as_ref(), h)?,
            loading_err: loading_error(est.loadings.as_ref(), truth.loadings.as_ref(), h)?,
            component_err: component_error(
                est.loadings.as_ref(),
                est.factors.as_ref(),
                truth.loadings.as_ref(),
                truth.factors.as_ref(),
            )?,
        })
    }

    /// Metric names and values in report order.
    pub fn metrics(&self) -> [(&'static str, f64); 6] {
        [
            ("relative_norm", self.relative_norm),
            ("max_norm", self.max_norm),
            ("inv_op_norm", self.inv_op_norm),
            ("factor_err", self.factor_err),
            ("loading_err", self.loading_err),
            ("component_err", self.component_err),
        ]
    }
}

/// Off-diagonal support of a symmetric matrix: `(max row count, total count)`.
///
/// An entry counts as nonzero when its magnitude exceeds `tol`.
pub fn sparsity_measure(sigma: MatRef<'_, f64>, tol: f64) -> (usize, usize) {
    let n = sigma.nrows();
    let mut max_row = 0;
    let mut total = 0;
    for i in 0..n {
        let row = (0..n).filter(|&j| j != i && sigma[(i, j)].abs() > tol).count();
        max_row = max_row.max(row);
        total += row;
    }
    (max_row, total)
}

/// Pervasiveness and identifiability diagnostics for a loading matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConditionReport {
    /// Eigenvalues of `B'B / p`, descending.
    pub loading_gram_eigenvalues: Vec<f64>,
    /// `B' Sigma_u^{-1} B / p`.
    pub q: Vec<Vec<f64>>,
    /// Largest off-diagonal magnitude of `Q` relative to its largest diagonal entry.
    pub q_offdiag_ratio: f64,
    /// Smallest gap between sorted diagonal entries of `Q`, relative to the largest entry.
    pub q_min_relative_gap: f64,
    pub pervasive: bool,
    pub distinct: bool,
    pub warnings: Vec<String>,
}

/// Check that `B'B/p` is well conditioned and that `Q = B' Sigma_u^{-1} B / p` has distinct diagonal.
pub fn check_model_conditions(b: MatRef<'_, f64>, idio: &IdioCovariance) -> Result<ModelConditionReport> {
    let (p, k) = (b.nrows(), b.ncols());
    if idio.dim() != p {
        return Err(Error::shape("check_model_conditions", p, idio.dim()));
    }
    let scale = 1.0 / p.max(1) as f64;
    let gram = Scale(scale) * (b.transpose() * b);
    let eig = linalg::sym_eigenvalues(gram.as_ref())?;
    let q = Scale(scale) * idio.quad_form_inverse(b)?;

    let diag: Vec<f64> = (0..k).map(|i| q[(i, i)]).collect();
    let dmax = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut off = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                off = off.max(q[(i, j)].abs());
            }
        }
    }
    let mut sorted = diag.clone();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let rel = |x: f64| if dmax > 0.0 { x / dmax } else { f64::INFINITY };
    let q_min_relative_gap = if k < 2 { f64::INFINITY } else { rel(min_gap) };

    let floor = eig.first().copied().unwrap_or(0.0).abs() * 1e-10;
    let pervasive = k > 0 && eig.last().is_some_and(|&m| m > floor.max(f64::MIN_POSITIVE));
    let distinct = q_min_relative_gap >= DISTINCTNESS_RTOL;

    let mut warnings = Vec::new();
    if !pervasive {
        warnings.push("B'B/p has a (numerically) zero eigenvalue: factors are not pervasive".to_string());
    }
    if !distinct {
        warnings.push(format!(
            "diagonal entries of B' Sigma_u^-1 B / p are not well separated (relative gap {q_min_relative_gap:.3})"
        ));
    }
    Ok(ModelConditionReport {
        loading_gram_eigenvalues: eig,
        q: linalg::to_rows(q.as_ref()),
        q_offdiag_ratio: rel(off),
        q_min_relative_gap,
        pervasive,
        distinct,
        warnings,
    })
}

/// Gaussian factor information of the full panel against a subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    /// `B' Sigma_u^{-1} B`.
    pub info_full: Vec<Vec<f64>>,
    /// `B_S' Sigma_{u,S}^{-1} B_S`.
    pub info_subset: Vec<Vec<f64>>,
    /// Smallest eigenvalue of `info_full - info_subset`.
    pub min_eig_diff: f64,
    /// Largest eigenvalue of `info_full - info_subset`.
    pub max_eig_diff: f64,
    /// Whether `Sigma_u` has no coupling between `S` and its complement.
    pub block_diagonal: bool,
}

/// Factorised `Sigma_u` and `Sigma_{u,S}`, reused across loading draws.
struct FisherWeights {
    full: IdioWeight,
    subset: IdioWeight,
    indices: Vec<usize>,
    block_diagonal: bool,
}

enum IdioWeight {
    Diagonal(Vec<f64>),
    Dense(SpdFactor),
}

impl IdioWeight {
    fn new(cov: IdioCovariance) -> Result<Self> {
        match cov {
            IdioCovariance::Diagonal(d) => {
                if let Some((i, &v)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(Error::DegenerateVariance { index: i, value: v });
                }
                Ok(Self::Diagonal(d))
            }
            IdioCovariance::Dense(m) => Ok(Self::Dense(SpdFactor::new(m.as_ref()).map_err(|_| {
                Error::Singular("idiosyncratic covariance is not positive definite".into())
            })?)),
        }
    }

    fn info(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        match self {
            IdioWeight::Diagonal(d) => {
                let scaled = Mat::<f64>::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] / d[i].sqrt());
                let mut g = scaled.transpose() * &scaled;
                linalg::symmetrize(&mut g);
                g
            }
            IdioWeight::Dense(f) => f.quad_form(b),
        }
    }
}

impl FisherWeights {
    fn new(idio: &IdioCovariance, subset: &SubsetSelector) -> Result<Self> {
        let p = idio.dim();
        subset.check_against(p)?;
        let indices = subset.indices().to_vec();
        let block_diagonal = match idio {
            IdioCovariance::Diagonal(_) => true,
            IdioCovariance::Dense(m) => {
                let comp = subset.complement(p);
                indices.iter().all(|&i| comp.iter().all(|&j| m[(i, j)] == 0.0 && m[(j, i)] == 0.0))
            }
        };
        let sub = match idio {
            IdioCovariance::Diagonal(d) => IdioCovariance::Diagonal(indices.iter().map(|&i| d[i]).collect()),
            IdioCovariance::Dense(_) => IdioCovariance::Dense(idio.principal(&indices)),
        };
        Ok(Self {
            full: IdioWeight::new(idio.clone())?,
            subset: IdioWeight::new(sub)?,
            indices,
            block_diagonal,
        })
    }

    fn infos(&self, b: MatRef<'_, f64>) -> Result<(Mat<f64>, Mat<f64>)> {
        let full = self.full.info(b);
        let b_s = linalg::select_rows(b, &self.indices);
        let sub = self.subset.info(b_s.as_ref());
        Ok((full, sub))
    }

    fn report(&self, info_full: Mat<f64>, info_subset: Mat<f64>) -> Result<FisherReport> {
        let mut diff = &info_full - &info_subset;
        linalg::symmetrize(&mut diff);
        let eig = linalg::sym_eigenvalues(diff.as_ref())?;
        Ok(FisherReport {
            info_full: linalg::to_rows(info_full.as_ref()),
            info_subset: linalg::to_rows(info_subset.as_ref()),
            min_eig_diff: eig.last().copied().unwrap_or(0.0),
            max_eig_diff: eig.first().copied().unwrap_or(0.0),
            block_diagonal: self.block_diagonal,
        })
    }
}

/// Compare `I(f) = B' Sigma_u^{-1} B` with `I_S(f) = B_S' Sigma_{u,S}^{-1} B_S`.
pub fn fisher_dominance(b: MatRef<'_, f64>, idio: &IdioCovariance, subset: &SubsetSelector) -> Result<FisherReport> {
    if b.nrows() != idio.dim() {
        return Err(Error::shape("fisher_dominance loadings", idio.dim(), b.nrows()));
    }
    let weights = FisherWeights::new(idio, subset)?;
    let (full, sub) = weights.infos(b)?;
    weights.report(full, sub)
}

/// Source of random `p x K` loading matrices with iid mean-zero rows.
pub trait LoadingSampler {
    fn n_factors(&self) -> usize;
    fn sample(&mut self, p: usize) -> Mat<f64>;
}

/// Rows drawn iid from `N(0, variance * I_K)`.
#[derive(Debug, Clone)]
pub struct GaussianLoadings {
    k: usize,
    sd: f64,
    rng: rand_chacha::ChaCha8Rng,
}

impl GaussianLoadings {
    pub fn new(k: usize, variance: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            k,
            sd: variance.sqrt(),
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl LoadingSampler for GaussianLoadings {
    fn n_factors(&self) -> usize {
        self.k
    }

    fn sample(&mut self, p: usize) -> Mat<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut b = Mat::<f64>::zeros(p, self.k);
        for i in 0..p {
            for j in 0..self.k {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                b[(i, j)] = self.sd * z;
            }
        }
        b
    }
}

/// Average `I(f)` and `I_S(f)` over `n_draws` loading matrices from `sampler`.
pub fn fisher_dominance_expected<S: LoadingSampler + ?Sized>(
    sampler: &mut S,
    idio: &IdioCovariance,
    subset: &SubsetSelector,
    n_draws: usize,
) -> Result<FisherReport> {
    if n_draws == 0 {
        return Err(Error::Argument("n_draws must be at least 1".into()));
    }
    let weights = FisherWeights::new(idio, subset)?;
    let k = sampler.n_factors();
    let mut full = Mat::<f64>::zeros(k, k);
    let mut sub = Mat::<f64>::zeros(k, k);
    for _ in 0..n_draws {
        let b = sampler.sample(idio.dim());
        let (f, s) = weights.infos(b.as_ref())?;
        full += &f;
        sub += &s;
    }
    if n_draws > 1 {
        let inv = 1.0 / n_draws as f64;
        full = Scale(inv) * &full;
        sub = Scale(inv) * &sub;
    }
    weights.report(full, sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;

    fn m(rows: &[Vec<f64>]) -> Mat<f64> {
        from_rows(rows).unwrap()
    }

    #[test]
    fn relative_norm_examples() {
        let truth = m(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.2], vec![0.0, 0.2, 3.0]]);
        assert_eq!(relative_norm(truth.as_ref(), truth.as_ref()).unwrap(), 0.0);
        let twice = Scale(2.0) * &truth;
        assert!((relative_norm(twice.as_ref(), truth.as_ref()).unwrap() - 1.0).abs() < 1e-12);
        let est = m(&[vec![1.1, 0.0], vec![0.0, 1.0]]);
        let id = Mat::<f64>::identity(2, 2);
        assert!((relative_norm(est.as_ref(), id.as_ref()).unwrap() - (0.01f64 / 2.0).sqrt()).abs() < 1e-12);
        let bad = m(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(relative_norm(id.as_ref(), bad.as_ref()).is_err());
    }

    #[test]
    fn max_and_inverse_norms_on_diagonal_case() {
        let est = m(&[vec![2.0, 0.0], vec![0.0, 1.0]]);
        let id = Mat::<f64>::identity(2, 2);
        assert_eq!(max_norm_diff(est.as_ref(), id.as_ref()).unwrap(), 1.0);
        assert!((inv_operator_norm_diff(est.as_ref(), id.as_ref()).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(inv_operator_norm_diff(id.as_ref(), id.as_ref()).unwrap(), 0.0);
        let sing = m(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(inv_operator_norm_diff(sing.as_ref(), id.as_ref()).is_err());
    }

    #[test]
    fn factor_error_zero_when_rotated_exactly() {
        let f = m(&[vec![1.0, 0.0], vec![0.5, -1.0], vec![2.0, 1.0]]);
        let h = m(&[vec![0.0, -1.0], vec![1.0, 0.0]]);
        let f_hat = &f * h.transpose();
        assert!(factor_error(f_hat.as_ref(), f.as_ref(), h.as_ref()).unwrap() < 1e-15);
        assert!(factor_error(f.as_ref(), f.as_ref(), h.as_ref()).unwrap() > 0.5);
    }

    #[test]
    fn sparsity_examples() {
        let diag = Mat::<f64>::identity(4, 4);
        assert_eq!(sparsity_measure(diag.as_ref(), 0.0), (0, 0));
        let tri = Mat::<f64>::from_fn(5, 5, |i, j| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
        assert_eq!(sparsity_measure(tri.as_ref(), 0.0), (2, 8));
        let dense = Mat::<f64>::from_fn(3, 3, |_, _| 0.3);
        assert_eq!(sparsity_measure(dense.as_ref(), 0.0), (2, 6));
    }

    #[test]
    fn model_condition_examples() {
        let b = Mat::<f64>::from_fn(6, 3, |i, j| if i % 3 == j { (j + 1) as f64 } else { 0.0 });
        let r = check_model_conditions(b.as_ref(), &IdioCovariance::Diagonal(vec![1.0; 6])).unwrap();
        assert!(r.pervasive && r.distinct && r.warnings.is_empty());
        let zero = Mat::<f64>::zeros(6, 3);
        let r = check_model_conditions(zero.as_ref(), &IdioCovariance::Diagonal(vec![1.0; 6])).unwrap();
        assert!(!r.pervasive);
        let equal = Mat::<f64>::from_fn(6, 3, |i, j| if i % 3 == j { 1.0 } else { 0.0 });
        let r = check_model_conditions(equal.as_ref(), &IdioCovariance::Diagonal(vec![1.0; 6])).unwrap();
        assert!(!r.distinct && r.warnings.len() == 1);
    }

    #[test]
    fn fisher_scalar_example() {
        let b = m(&[vec![1.0], vec![1.0]]);
        let idio = IdioCovariance::Dense(Mat::<f64>::identity(2, 2));
        let r = fisher_dominance(b.as_ref(), &idio, &SubsetSelector::new(vec![0]).unwrap()).unwrap();
        assert_eq!(r.info_full, vec![vec![2.0]]);
        assert_eq!(r.info_subset, vec![vec![1.0]]);
        assert!((r.min_eig_diff - 1.0).abs() < 1e-14);
        assert!(r.block_diagonal);
    }

    #[test]
    fn fisher_full_subset_is_zero() {
        let b = m(&[vec![1.0, 0.3], vec![-0.4, 2.0], vec![0.7, 0.1]]);
        let idio = IdioCovariance::Dense(m(&[vec![2.0, 0.3, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.1, 1.5]]));
        let r = fisher_dominance(b.as_ref(), &idio, &SubsetSelector::all(3).unwrap()).unwrap();
        assert_eq!(r.info_full, r.info_subset);
        assert_eq!(r.min_eig_diff, 0.0);
    }

    #[test]
    fn single_draw_expected_matches_direct() {
        let idio = IdioCovariance::Dense(m(&[vec![2.0, 0.3, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.1, 1.5]]));
        let s = SubsetSelector::new(vec![1]).unwrap();
        let mut sampler = GaussianLoadings::new(2, 1.0, 11);
        let avg = fisher_dominance_expected(&mut sampler, &idio, &s, 1).unwrap();
        let b = GaussianLoadings::new(2, 1.0, 11).sample(3);
        let direct = fisher_dominance(b.as_ref(), &idio, &s).unwrap();
        assert_eq!(avg, direct);
        assert!(!direct.block_diagonal);
    }
}
