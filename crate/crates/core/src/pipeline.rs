//! End-to-end covariance estimators for a target subset `S`.
//!
//! * [`estimate_method1`] uses only the `s` target variables.
//! * [`estimate_method2`] estimates the factors from all `p` variables, then fits
//!   loadings and the idiosyncratic covariance on `S`.
//! * [`estimate_oracle`] plugs in the true factors (simulation only).
//!
//! All three finish the same way: loadings `B = Y_S F / T`, residuals
//! `u_it = y_it - b_i' f_t`, residual thresholding, and `Sigma_S = B B' + Sigma_u`.

use std::time::Instant;

use faer::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{EstimateDiagnostics, FactorModelEstimate, Method, ObservationMatrix, StageTimings, SubsetSelector};
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::threshold::{self, CSelection, ResidualMoments, ThresholdSettings};
use crate::wpc;

/// Which rate term multiplies the residual threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// `omega(s)` for every method.
    #[default]
    PaperLiteral,
    /// Method-specific loading rates: `1/sqrt(s) + sqrt(ln s / T)` (Method 1),
    /// `1/sqrt(p) + sqrt(ln s / T)` (Method 2, divide-and-conquer), `sqrt(ln s / T)` (oracle).
    TheoryAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of factors.
    pub k: usize,
    pub threshold: ThresholdSettings,
    pub rate_mode: RateMode,
}

impl PipelineConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            threshold: ThresholdSettings::auto(),
            rate_mode: RateMode::PaperLiteral,
        }
    }

    pub fn with_threshold(mut self, threshold: ThresholdSettings) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_rate_mode(mut self, mode: RateMode) -> Self {
        self.rate_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Argument("K must be at least 1".into()));
        }
        self.threshold.validate()
    }
}

/// Rate term for the residual threshold of `method` on `s` target variables out of `p`.
pub fn residual_rate(method: Method, mode: RateMode, s: usize, p: usize, t: usize) -> f64 {
    let rate = match mode {
        RateMode::PaperLiteral => threshold::omega_rate(s, t),
        RateMode::TheoryAware => {
            let stat = ((s as f64).ln() / t as f64).sqrt();
            match method {
                Method::Method1 => stat + 1.0 / (s as f64).sqrt(),
                Method::Method2 | Method::DivideConquer => stat + 1.0 / (p as f64).sqrt(),
                Method::Oracle => stat,
            }
        }
    };
    // s = 1 makes the oracle rate vanish; there are no off-diagonals to threshold then.
    rate.max(f64::MIN_POSITIVE)
}

/// Thresholded initial idiosyncratic estimate for an `n x T` panel, with rate `omega(n, T)`.
pub fn initial_idio_estimate(y: MatRef<'_, f64>, k: usize, settings: &ThresholdSettings) -> Result<(Mat<f64>, CSelection)> {
    let r = threshold::pca_residual_from_data(y, k)?;
    settings.apply_initial(r, threshold::omega_rate(y.nrows(), y.ncols()))
}

/// Weighted-PC factors of one panel together with the factorised weight.
pub(crate) struct FactorStage {
    pub wpc: wpc::WpcResult,
    pub weight: SpdFactor,
    pub initial_c: CSelection,
    pub timings: StageTimings,
}

pub(crate) fn factor_stage(y: MatRef<'_, f64>, k: usize, settings: &ThresholdSettings) -> Result<FactorStage> {
    let (n, t) = (y.nrows(), y.ncols());
    if k >= n.min(t) {
        return Err(Error::Argument(format!("K={k} must be smaller than min(n, T) = {}", n.min(t))));
    }
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let (weight_matrix, initial_c) = initial_idio_estimate(y, k, settings)?;
    timings.initial_threshold = start.elapsed();

    let start = Instant::now();
    let weight = SpdFactor::with_jitter(weight_matrix.as_ref(), settings.pd_floor)?;
    drop(weight_matrix);
    let factor_time = start.elapsed();

    let wpc = wpc::wpc_estimate_factored(y, &weight, k)?;
    timings.inversion = factor_time + wpc.inversion_time;
    timings.eigensolve = wpc.eigensolve_time;
    Ok(FactorStage {
        wpc,
        weight,
        initial_c,
        timings,
    })
}

/// Loadings, residual idiosyncratic estimate and total covariance on the target panel.
pub(crate) struct SubsetFit {
    pub loadings: Mat<f64>,
    pub idio_cov: Mat<f64>,
    pub total_cov: Mat<f64>,
    pub residual_c: CSelection,
    pub idio_min_eigenvalue: f64,
}

pub(crate) fn fit_on_subset(y_s: MatRef<'_, f64>, factors: MatRef<'_, f64>, rate: f64, settings: &ThresholdSettings) -> Result<SubsetFit> {
    let t = y_s.ncols() as f64;
    let loadings = Scale(1.0 / t) * (y_s * factors);
    let residuals = y_s - &loadings * factors.transpose();
    let moments = ResidualMoments::new(residuals.as_ref())?;
    let (mut idio_cov, residual_c) = settings.apply_residual(&moments, rate)?;
    linalg::symmetrize(&mut idio_cov);
    let mut total_cov = &loadings * loadings.transpose() + &idio_cov;
    linalg::symmetrize(&mut total_cov);
    let idio_min_eigenvalue = linalg::min_eigenvalue(idio_cov.as_ref())?;
    Ok(SubsetFit {
        loadings,
        idio_cov,
        total_cov,
        residual_c,
        idio_min_eigenvalue,
    })
}

pub(crate) fn factor_gram(factors: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    let t = factors.nrows() as f64;
    let g = Scale(1.0 / t) * (factors.transpose() * factors);
    linalg::to_rows(g.as_ref())
}

pub(crate) fn assemble(
    method: Method,
    factors: Mat<f64>,
    eig_diag: Option<Vec<f64>>,
    fit: SubsetFit,
    rate: f64,
    mut diagnostics: EstimateDiagnostics,
) -> FactorModelEstimate {
    diagnostics.residual_c = fit.residual_c.c;
    diagnostics.residual_rate = rate;
    diagnostics.idio_min_eigenvalue = fit.idio_min_eigenvalue;
    diagnostics.factor_gram = factor_gram(factors.as_ref());
    if !fit.residual_c.qualified {
        diagnostics.warnings.push(format!(
            "no C in the grid made the residual estimate exceed the PD floor; using C={}",
            fit.residual_c.c
        ));
    }
    FactorModelEstimate {
        factors,
        loadings: fit.loadings,
        idio_cov: fit.idio_cov,
        total_cov: fit.total_cov,
        eig_diag,
        method,
        diagnostics,
    }
}

fn stage_diagnostics(stage: &FactorStage) -> EstimateDiagnostics {
    let mut d = EstimateDiagnostics {
        initial_c: vec![stage.initial_c.c],
        jitter: stage.weight.jitter,
        timings: stage.timings,
        ..Default::default()
    };
    if !stage.initial_c.qualified {
        d.warnings.push(format!(
            "no C in the grid made the initial estimate exceed the PD floor; using C={}",
            stage.initial_c.c
        ));
    }
    if stage.weight.jitter > 0.0 {
        d.warnings.push(format!("initial weight needed diagonal jitter {:e}", stage.weight.jitter));
    }
    if stage.wpc.degenerate_spectrum {
        d.warnings.push("leading eigenvalues are tied; factor order is conventional".into());
    }
    d
}

/// An estimate together with the factorised initial weight used for the factors.
#[derive(Debug)]
pub struct PipelineFit {
    pub estimate: FactorModelEstimate,
    /// Cholesky factor of the thresholded initial idiosyncratic estimate (`s x s` for
    /// Method 1, `p x p` for Method 2).
    pub weight: SpdFactor,
}

/// Method 1 with its weight factor retained.
pub fn fit_method1(y: &ObservationMatrix, subset: &SubsetSelector, cfg: &PipelineConfig) -> Result<PipelineFit> {
    cfg.validate()?;
    let start = Instant::now();
    let y_s = y.restrict(subset)?;
    let (s, t) = (y_s.n_vars(), y_s.n_times());
    if s <= cfg.k || t <= cfg.k {
        return Err(Error::Argument(format!("Method 1 needs s > K and T > K (s={s}, T={t}, K={})", cfg.k)));
    }
    let stage = factor_stage(y_s.values(), cfg.k, &cfg.threshold)?;
    let mut diagnostics = stage_diagnostics(&stage);

    let finish = Instant::now();
    let rate = residual_rate(Method::Method1, cfg.rate_mode, s, y.n_vars(), t);
    let fit = fit_on_subset(y_s.values(), stage.wpc.factors.as_ref(), rate, &cfg.threshold)?;
    diagnostics.timings.finish = finish.elapsed();
    diagnostics.timings.total = start.elapsed();

    let FactorStage { wpc, weight, .. } = stage;
    let estimate = assemble(Method::Method1, wpc.factors, Some(wpc.eig_diag), fit, rate, diagnostics);
    Ok(PipelineFit { estimate, weight })
}

/// Method 2 with its weight factor retained.
pub fn fit_method2(y: &ObservationMatrix, subset: &SubsetSelector, cfg: &PipelineConfig) -> Result<PipelineFit> {
    cfg.validate()?;
    subset.check_against(y.n_vars())?;
    let start = Instant::now();
    let (p, t) = (y.n_vars(), y.n_times());
    if p <= cfg.k || t <= cfg.k {
        return Err(Error::Argument(format!("Method 2 needs p > K and T > K (p={p}, T={t}, K={})", cfg.k)));
    }
    let stage = factor_stage(y.values(), cfg.k, &cfg.threshold)?;
    let mut diagnostics = stage_diagnostics(&stage);

    let finish = Instant::now();
    let y_s = y.restrict(subset)?;
    let rate = residual_rate(Method::Method2, cfg.rate_mode, subset.len(), p, t);
    let fit = fit_on_subset(y_s.values(), stage.wpc.factors.as_ref(), rate, &cfg.threshold)?;
    diagnostics.timings.finish = finish.elapsed();
    diagnostics.timings.total = start.elapsed();

    let FactorStage { wpc, weight, .. } = stage;
    let estimate = assemble(Method::Method2, wpc.factors, Some(wpc.eig_diag), fit, rate, diagnostics);
    Ok(PipelineFit { estimate, weight })
}

/// Covariance of the target subset using only the target variables.
pub fn estimate_method1(y: &ObservationMatrix, subset: &SubsetSelector, cfg: &PipelineConfig) -> Result<FactorModelEstimate> {
    Ok(fit_method1(y, subset, cfg)?.estimate)
}

/// Covariance of the target subset with factors estimated from all variables.
pub fn estimate_method2(y: &ObservationMatrix, subset: &SubsetSelector, cfg: &PipelineConfig) -> Result<FactorModelEstimate> {
    Ok(fit_method2(y, subset, cfg)?.estimate)
}

/// Covariance of the target subset given the true `T x K` factors.
///
/// The number of factors is taken from `f_true`.
pub fn estimate_oracle(
    y: &ObservationMatrix,
    subset: &SubsetSelector,
    f_true: MatRef<'_, f64>,
    cfg: &PipelineConfig,
) -> Result<FactorModelEstimate> {
    cfg.threshold.validate()?;
    if f_true.nrows() != y.n_times() {
        return Err(Error::shape("estimate_oracle factors", format!("{} rows", y.n_times()), format!("{} rows", f_true.nrows())));
    }
    if f_true.ncols() == 0 {
        return Err(Error::Argument("oracle factors must have at least one column".into()));
    }
    let start = Instant::now();
    let y_s = y.restrict(subset)?;
    let rate = residual_rate(Method::Oracle, cfg.rate_mode, subset.len(), y.n_vars(), y.n_times());
    let fit = fit_on_subset(y_s.values(), f_true, rate, &cfg.threshold)?;
    let mut diagnostics = EstimateDiagnostics::default();
    diagnostics.timings.finish = start.elapsed();
    diagnostics.timings.total = start.elapsed();
    Ok(assemble(Method::Oracle, f_true.to_owned(), None, fit, rate, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn factor_panel(p: usize, t: usize, k: usize, noise: f64, seed: u64) -> (ObservationMatrix, Mat<f64>, Mat<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let b = Mat::<f64>::from_fn(p, k, |_, _| 2.0 * draw());
        let f = Mat::<f64>::from_fn(t, k, |_, _| draw());
        let u = Mat::<f64>::from_fn(p, t, |_, _| noise * draw());
        let y = &b * f.transpose() + u;
        (ObservationMatrix::new(y, None).unwrap(), b, f)
    }

    #[test]
    fn noiseless_method1_reconstructs_second_moment() {
        let (y, _, _) = factor_panel(12, 30, 2, 0.0, 1);
        // Exact factor data has a rank-K residual matrix of (numerically) zero, so keep
        // a tiny noise floor on the initial weight through the jitter path.
        let (y2, _, _) = factor_panel(12, 30, 2, 1e-6, 1);
        let s = SubsetSelector::all(12).unwrap();
        let cfg = PipelineConfig::new(2).with_threshold(ThresholdSettings::fixed(0.0));
        let est = estimate_method1(&y2, &s, &cfg).unwrap();
        let t = 30.0;
        let second = Scale(1.0 / t) * (y.values() * y.values().transpose());
        let bb = &est.loadings * est.loadings.transpose();
        assert!(max_abs((&bb - &second).as_ref()) < 1e-4);
        assert!(max_abs((&est.total_cov - Scale(1.0 / t) * (y2.values() * y2.values().transpose())).as_ref()) < 1e-8);
    }

    #[test]
    fn method2_equals_method1_on_full_subset() {
        let (y, _, _) = factor_panel(20, 40, 2, 1.0, 3);
        let s = SubsetSelector::all(20).unwrap();
        for mode in [RateMode::PaperLiteral, RateMode::TheoryAware] {
            let cfg = PipelineConfig::new(2).with_rate_mode(mode);
            let a = estimate_method1(&y, &s, &cfg).unwrap();
            let b = estimate_method2(&y, &s, &cfg).unwrap();
            assert_eq!(linalg::to_rows(a.total_cov.as_ref()), linalg::to_rows(b.total_cov.as_ref()));
            assert_eq!(linalg::to_rows(a.factors.as_ref()), linalg::to_rows(b.factors.as_ref()));
        }
    }

    #[test]
    fn oracle_exact_recovery_under_orthonormal_factors() {
        // F with F'F/T = I exactly: columns of a scaled Hadamard-like design
        let t = 8;
        let f = Mat::<f64>::from_fn(t, 2, |i, j| if j == 0 { if i % 2 == 0 { 1.0 } else { -1.0 } } else if (i / 2) % 2 == 0 { 1.0 } else { -1.0 });
        let b = crate::linalg::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3], vec![2.0, -1.0]]).unwrap();
        let y = ObservationMatrix::new(&b * f.transpose(), None).unwrap();
        let s = SubsetSelector::new(vec![2, 0]).unwrap();
        let cfg = PipelineConfig::new(2).with_threshold(ThresholdSettings::fixed(0.0));
        let est = estimate_oracle(&y, &s, f.as_ref(), &cfg).unwrap();
        let b_s = crate::linalg::select_rows(b.as_ref(), s.indices());
        assert!(max_abs((&est.loadings - &b_s).as_ref()) < 1e-14);
        assert!(max_abs(est.idio_cov.as_ref()) < 1e-14);
        assert!(est.eig_diag.is_none());
    }

    #[test]
    fn oracle_shape_mismatch() {
        let (y, _, f) = factor_panel(6, 10, 1, 1.0, 4);
        let s = SubsetSelector::first(3).unwrap();
        let short = f.as_ref().subrows(0, 9).to_owned();
        assert!(matches!(estimate_oracle(&y, &s, short.as_ref(), &PipelineConfig::new(1)), Err(Error::Shape { .. })));
    }

    #[test]
    fn k_at_boundary_runs() {
        let (y, _, _) = factor_panel(30, 60, 2, 1.0, 5);
        let s = SubsetSelector::first(6).unwrap();
        let est = estimate_method1(&y, &s, &PipelineConfig::new(5)).unwrap();
        assert!(est.total_cov.as_ref().norm_max().is_finite());
        assert!(estimate_method1(&y, &s, &PipelineConfig::new(6)).is_err());
    }

    #[test]
    fn auto_c_gives_pd_idiosyncratic_estimate() {
        let (y, _, _) = factor_panel(40, 25, 2, 1.0, 6);
        let s = SubsetSelector::first(30).unwrap();
        for est in [
            estimate_method1(&y, &s, &PipelineConfig::new(2)).unwrap(),
            estimate_method2(&y, &s, &PipelineConfig::new(2)).unwrap(),
        ] {
            assert!(est.diagnostics.idio_min_eigenvalue >= 1e-8, "{:?}", est.diagnostics);
            assert_eq!(linalg::to_rows(est.total_cov.as_ref()), linalg::to_rows(est.total_cov.transpose()));
        }
    }

    #[test]
    fn residual_rates() {
        let (s, p, t) = (50, 1000, 200);
        let lit = residual_rate(Method::Method2, RateMode::PaperLiteral, s, p, t);
        assert_eq!(lit, threshold::omega_rate(s, t));
        let m1 = residual_rate(Method::Method1, RateMode::TheoryAware, s, p, t);
        let m2 = residual_rate(Method::Method2, RateMode::TheoryAware, s, p, t);
        let o = residual_rate(Method::Oracle, RateMode::TheoryAware, s, p, t);
        assert_eq!(m1, lit);
        assert!(o < m2 && m2 < m1);
    }
}
