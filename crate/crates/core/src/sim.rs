//! Simulation designs and the Monte-Carlo comparison harness.
//!
//! Loadings rows are drawn from `N(0, loading_var I_K)`, factors from `N(0, I_K)` and
//! idiosyncratic errors from `N(0, idio_var I_p)`. The first `s` variables form the
//! target subset. Replication `r` draws from stream `r` of a ChaCha generator keyed
//! by the master seed, so replications are independent of scheduling.

use std::io::Write;
use std::time::Instant;

use faer::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{IdioCovariance, Method, ObservationMatrix, StageTimings, SubsetSelector, TrueModel};
use crate::divide_conquer::{self, DcConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{ErrorReport, SubsetTruth};
use crate::pipeline::{self, PipelineConfig, RateMode};
use crate::threshold::{ThresholdRule, ThresholdSettings};
use crate::wpc;

/// Threshold constant used by the simulation harness for both thresholding steps,
/// raised further only when needed to keep the estimate positive definite.
pub const SIM_THRESHOLD_C: f64 = 1.0;

/// Threshold settings used by the simulation harness by default.
pub fn simulation_threshold() -> ThresholdSettings {
    ThresholdSettings {
        initial: ThresholdRule::MinPdFrom(SIM_THRESHOLD_C),
        residual: ThresholdRule::MinPdFrom(SIM_THRESHOLD_C),
        ..ThresholdSettings::auto()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub s: usize,
    pub p: usize,
    pub t: usize,
    pub k: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub loading_var: f64,
    pub idio_var: f64,
    /// Draw idiosyncratic variances iid from Uniform(25, 75) instead of `idio_var`.
    pub heteroscedastic: bool,
    /// Also run divide-and-conquer with this many groups.
    pub dc_m: Option<usize>,
    pub threshold: ThresholdSettings,
    pub rate_mode: RateMode,
}

impl SimConfig {
    /// Defaults: `K = 3`, 50 replications, seed 0, variances 5 and 50.
    pub fn new(s: usize, p: usize, t: usize) -> Self {
        Self {
            s,
            p,
            t,
            k: 3,
            n_reps: 50,
            seed: 0,
            loading_var: 5.0,
            idio_var: 50.0,
            heteroscedastic: false,
            dc_m: None,
            threshold: simulation_threshold(),
            rate_mode: RateMode::PaperLiteral,
        }
    }

    pub fn with_reps(mut self, n_reps: usize) -> Self {
        self.n_reps = n_reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.s == 0 || self.s > self.p {
            problems.push(format!("need 1 <= s <= p (s={}, p={})", self.s, self.p));
        }
        if self.k == 0 || self.k >= self.s.min(self.t) {
            problems.push(format!("need 1 <= K < min(s, T) (K={}, s={}, T={})", self.k, self.s, self.t));
        }
        if self.t < 2 {
            problems.push("T >= 2 required".into());
        }
        if !(self.loading_var >= 0.0) || !(self.idio_var >= 0.0) {
            problems.push("variances must be nonnegative".into());
        }
        if let Some(m) = self.dc_m {
            if m == 0 || m > self.p {
                problems.push(format!("M > p or M = 0 (M={m}, p={})", self.p));
            }
        }
        if problems.is_empty() {
            self.threshold.validate()
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig::new(self.k)
            .with_threshold(self.threshold.clone())
            .with_rate_mode(self.rate_mode)
    }

    pub fn subset(&self) -> SubsetSelector {
        SubsetSelector::first(self.s).expect("validated s >= 1")
    }
}

/// Generator for replication `rep` of the design.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] = sd * z;
        }
    }
    m
}

/// Draw the model and panel for replication `rep`.
pub fn generate_replication(cfg: &SimConfig, rep: u64) -> Result<(TrueModel, ObservationMatrix)> {
    cfg.validate()?;
    let (p, t, k) = (cfg.p, cfg.t, cfg.k);
    let mut rng = replication_rng(cfg.seed, rep);
    let b = normal_matrix(&mut rng, p, k, cfg.loading_var.sqrt());
    let f = normal_matrix(&mut rng, t, k, 1.0);
    let variances: Vec<f64> = if cfg.heteroscedastic {
        (0..p).map(|_| rng.random_range(25.0..75.0)).collect()
    } else {
        vec![cfg.idio_var; p]
    };
    let mut y = &b * f.transpose();
    for i in 0..p {
        let sd = variances[i].sqrt();
        for j in 0..t {
            let z: f64 = StandardNormal.sample(&mut rng);
            y[(i, j)] += sd * z;
        }
    }
    let model = TrueModel::new(b, f, IdioCovariance::Diagonal(variances))?;
    Ok((model, ObservationMatrix::new(y, None)?))
}

/// Draw the model and panel for replication 0.
pub fn generate_model(cfg: &SimConfig) -> Result<(TrueModel, ObservationMatrix)> {
    generate_replication(cfg, 0)
}

/// Error reports of every method on one replication, with wall times in milliseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep: u64,
    pub reports: Vec<ErrorReport>,
    pub wall_ms: Vec<f64>,
    pub timings: Vec<StageTimings>,
}

/// Run Method 1, Method 2, the oracle and (if configured) divide-and-conquer on one draw.
pub fn run_replication(cfg: &SimConfig, rep: u64) -> Result<ReplicationResult> {
    let (model, y) = generate_replication(cfg, rep)?;
    run_on_panel(cfg, rep, &model, &y)
}

fn run_on_panel(cfg: &SimConfig, rep: u64, model: &TrueModel, y: &ObservationMatrix) -> Result<ReplicationResult> {
    let subset = cfg.subset();
    let pcfg = cfg.pipeline();
    let b_s = model.loadings_subset(&subset);
    let truth = SubsetTruth::new(model.implied_cov_subset(&subset)?, b_s.clone(), model.factors.clone())?;
    let mut out = ReplicationResult {
        rep,
        reports: Vec::new(),
        wall_ms: Vec::new(),
        timings: Vec::new(),
    };

    let start = Instant::now();
    let m1 = pipeline::fit_method1(y, &subset, &pcfg)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let h1 = wpc::rotation_matrix_factored(
        m1.estimate.eig_diag.as_deref().unwrap_or_default(),
        m1.estimate.factors.as_ref(),
        model.factors.as_ref(),
        b_s.as_ref(),
        &m1.weight,
    )?;
    out.reports.push(ErrorReport::compute(&m1.estimate, &truth, h1.as_ref())?);
    out.wall_ms.push(ms);
    out.timings.push(m1.estimate.diagnostics.timings);
    drop(m1);

    let start = Instant::now();
    let m2 = pipeline::fit_method2(y, &subset, &pcfg)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let h2 = wpc::rotation_matrix_factored(
        m2.estimate.eig_diag.as_deref().unwrap_or_default(),
        m2.estimate.factors.as_ref(),
        model.factors.as_ref(),
        model.loadings.as_ref(),
        &m2.weight,
    )?;
    out.reports.push(ErrorReport::compute(&m2.estimate, &truth, h2.as_ref())?);
    out.wall_ms.push(ms);
    out.timings.push(m2.estimate.diagnostics.timings);
    drop(m2);

    let start = Instant::now();
    let ora = pipeline::estimate_oracle(y, &subset, model.factors.as_ref(), &pcfg)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let eye = Mat::<f64>::identity(cfg.k, cfg.k);
    out.reports.push(ErrorReport::compute(&ora, &truth, eye.as_ref())?);
    out.wall_ms.push(ms);
    out.timings.push(ora.diagnostics.timings);

    if let Some(m) = cfg.dc_m {
        let start = Instant::now();
        let dc = divide_conquer::fit_dc(y, &subset, &pcfg, &DcConfig::new(m))?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let h = dc.rotation(model.factors.as_ref(), model.loadings.as_ref())?;
        out.reports.push(ErrorReport::compute(&dc.estimate, &truth, h.as_ref())?);
        out.wall_ms.push(ms);
        out.timings.push(dc.estimate.diagnostics.timings);
    }
    Ok(out)
}

/// Mean and standard deviation (divisor `n - 1`; zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloTable {
    pub config: SimConfig,
    pub cells: Vec<TableCell>,
    /// Mean wall time per method, in milliseconds.
    pub wall_ms: Vec<(Method, f64)>,
    pub replications: Vec<ReplicationResult>,
}

impl MonteCarloTable {
    pub fn cell(&self, method: Method, metric: &str) -> Option<&TableCell> {
        self.cells.iter().find(|c| c.method == method && c.metric == metric)
    }

    pub fn mean(&self, method: Method, metric: &str) -> Option<f64> {
        self.cell(method, metric).map(|c| c.mean)
    }

    /// Values of one metric for one method across replications.
    pub fn values(&self, method: Method, metric: &str) -> Vec<f64> {
        self.replications
            .iter()
            .filter_map(|r| r.reports.iter().find(|e| e.method == method))
            .filter_map(|e| e.metrics().iter().find(|(n, _)| *n == metric).map(|(_, v)| *v))
            .collect()
    }

    /// CSV with columns `s,p,T,method,metric,mean,sd,n_reps`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "p", "T", "method", "metric", "mean", "sd", "n_reps"])?;
        for c in &self.cells {
            w.write_record([
                self.config.s.to_string(),
                self.config.p.to_string(),
                self.config.t.to_string(),
                c.method.to_string(),
                c.metric.clone(),
                format!("{:.6}", c.mean),
                format!("{:.6}", c.sd),
                self.config.n_reps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Replicate the design `cfg.n_reps` times and summarise each method and metric.
///
/// Replications run in parallel; results are aggregated in replication order.
pub fn monte_carlo_table(cfg: &SimConfig) -> Result<MonteCarloTable> {
    cfg.validate()?;
    if cfg.n_reps < 2 {
        return Err(Error::Argument("n_reps must be at least 2".into()));
    }
    let replications = (0..cfg.n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            run_replication(cfg, rep).map_err(|e| match e {
                Error::Argument(m) => Error::Argument(format!("replication {rep} (seed {}): {m}", cfg.seed)),
                Error::NotPositiveDefinite(m) => Error::NotPositiveDefinite(format!("replication {rep} (seed {}): {m}", cfg.seed)),
                Error::Singular(m) => Error::Singular(format!("replication {rep} (seed {}): {m}", cfg.seed)),
                Error::Decomposition(m) => Error::Decomposition(format!("replication {rep} (seed {}): {m}", cfg.seed)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarise(cfg.clone(), replications))
}

fn summarise(config: SimConfig, replications: Vec<ReplicationResult>) -> MonteCarloTable {
    let methods: Vec<Method> = replications[0].reports.iter().map(|r| r.method).collect();
    let metric_names: Vec<&'static str> = replications[0].reports[0].metrics().iter().map(|(n, _)| *n).collect();
    let mut cells = Vec::new();
    let mut wall_ms = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (ki, name) in metric_names.iter().enumerate() {
            let vals: Vec<f64> = replications.iter().map(|r| r.reports[mi].metrics()[ki].1).collect();
            let (mean, sd) = mean_sd(&vals);
            cells.push(TableCell {
                method,
                metric: name.to_string(),
                mean,
                sd,
            });
        }
        let times: Vec<f64> = replications.iter().map(|r| r.wall_ms[mi]).collect();
        wall_ms.push((method, mean_sd(&times).0));
    }
    MonteCarloTable {
        config,
        cells,
        wall_ms,
        replications,
    }
}

/// Design of the timing benchmark at sample size `t`: `s = floor(T^0.6)`,
/// `p = floor(T^1.4)`, `M = floor(T^0.2)`.
pub fn benchmark_design(t: usize) -> SimConfig {
    let tf = t as f64;
    let s = tf.powf(0.6).floor() as usize;
    let p = tf.powf(1.4).floor() as usize;
    let m = (tf.powf(0.2).floor() as usize).max(1);
    let mut cfg = SimConfig::new(s, p, t);
    cfg.dc_m = Some(m);
    cfg
}

/// One line of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub t: usize,
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub designs: Vec<SimConfig>,
    pub rows: Vec<BenchRow>,
    /// Mean per-stage timings, per design and method.
    pub stage_timings: Vec<(usize, Method, StageTimings)>,
}

impl BenchmarkResult {
    pub fn row(&self, t: usize, method: Method, metric: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.t == t && r.method == method && r.metric == metric)
    }

    /// Method 2 wall time over divide-and-conquer wall time at `t`.
    pub fn speedup(&self, t: usize) -> Option<f64> {
        let m2 = self.row(t, Method::Method2, "relative_norm")?.wall_ms;
        let dc = self.row(t, Method::DivideConquer, "relative_norm")?.wall_ms;
        Some(m2 / dc)
    }

    /// CSV with columns `T,method,metric,mean,sd,wall_ms`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["T", "method", "metric", "mean", "sd", "wall_ms"])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.method.to_string(),
                r.metric.clone(),
                format!("{:.6}", r.mean),
                format!("{:.6}", r.sd),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Error and wall time of every method on the timing designs, run serially.
///
/// `base` supplies the seed, replication count, thresholds and rate mode.
pub fn benchmark_dc(t_grid: &[usize], base: &SimConfig) -> Result<BenchmarkResult> {
    if let Some(&t) = t_grid.iter().find(|&&t| t < 50) {
        return Err(Error::Argument(format!("benchmark sample sizes must be at least 50 (got {t})")));
    }
    if base.n_reps == 0 {
        return Err(Error::Argument("n_reps must be at least 1".into()));
    }
    let mut designs = Vec::new();
    let mut rows = Vec::new();
    let mut stage_timings = Vec::new();
    for &t in t_grid {
        let mut cfg = benchmark_design(t);
        cfg.k = base.k;
        cfg.n_reps = base.n_reps;
        cfg.seed = base.seed;
        cfg.loading_var = base.loading_var;
        cfg.idio_var = base.idio_var;
        cfg.heteroscedastic = base.heteroscedastic;
        cfg.threshold = base.threshold.clone();
        cfg.rate_mode = base.rate_mode;
        cfg.validate()?;
        let reps = (0..cfg.n_reps as u64).map(|r| run_replication(&cfg, r)).collect::<Result<Vec<_>>>()?;
        let table = summarise(cfg.clone(), reps);
        for (mi, (method, wall)) in table.wall_ms.iter().enumerate() {
            for metric in ["relative_norm", "max_norm", "inv_op_norm"] {
                let cell = table.cell(*method, metric).expect("metric present");
                rows.push(BenchRow {
                    t,
                    method: *method,
                    metric: metric.to_string(),
                    mean: cell.mean,
                    sd: cell.sd,
                    wall_ms: *wall,
                });
            }
            let mut acc = StageTimings::default();
            for r in &table.replications {
                acc.accumulate(&r.timings[mi]);
            }
            let n = table.replications.len() as u32;
            stage_timings.push((t, *method, scale_timings(acc, n)));
        }
        designs.push(cfg);
    }
    Ok(BenchmarkResult {
        designs,
        rows,
        stage_timings,
    })
}

fn scale_timings(t: StageTimings, n: u32) -> StageTimings {
    StageTimings {
        initial_threshold: t.initial_threshold / n,
        inversion: t.inversion / n,
        eigensolve: t.eigensolve / n,
        merge: t.merge / n,
        finish: t.finish / n,
        total: t.total / n,
    }
}

/// Empirical covariance of pooled `sqrt(p) (f_hat_t - H f_t)` against `Q^{-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub empirical_cov: Vec<Vec<f64>>,
    /// Average over replications of `(B' Sigma_u^{-1} B / p)^{-1}`.
    pub target: Vec<Vec<f64>>,
    /// `||empirical - target||_F / ||target||_F`.
    pub rel_frobenius_gap: f64,
    pub n_pooled: usize,
}

/// Pool scaled factor errors of Method 2 (factors from all `p` variables) across time
/// points and replications and compare their second moment with `Q^{-1}`.
pub fn asymptotic_normality_check(cfg: &SimConfig) -> Result<NormalityReport> {
    cfg.validate()?;
    if cfg.n_reps == 0 {
        return Err(Error::Argument("n_reps must be at least 1".into()));
    }
    let k = cfg.k;
    let p = cfg.p;
    let per_rep = (0..cfg.n_reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<(Mat<f64>, Mat<f64>)> {
            let (model, y) = generate_replication(cfg, rep)?;
            let all = SubsetSelector::all(p)?;
            let fit = pipeline::fit_method2(&y, &all, &cfg.pipeline())?;
            let est = &fit.estimate;
            let h = wpc::rotation_matrix_factored(
                est.eig_diag.as_deref().unwrap_or_default(),
                est.factors.as_ref(),
                model.factors.as_ref(),
                model.loadings.as_ref(),
                &fit.weight,
            )?;
            let err = Scale((p as f64).sqrt()) * (&est.factors - &model.factors * h.transpose());
            let second = err.transpose() * &err;
            let q = Scale(1.0 / p as f64) * model.idio_cov.quad_form_inverse(model.loadings.as_ref())?;
            let q_inv = linalg::sym_inverse(q.as_ref(), 1e-13)?;
            Ok((second, q_inv))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut second = Mat::<f64>::zeros(k, k);
    let mut target = Mat::<f64>::zeros(k, k);
    for (s, q) in &per_rep {
        second += s;
        target += q;
    }
    let n_pooled = cfg.n_reps * cfg.t;
    let mut empirical = Scale(1.0 / n_pooled as f64) * &second;
    linalg::symmetrize(&mut empirical);
    let target = Scale(1.0 / cfg.n_reps as f64) * &target;
    let gap = (&empirical - &target).norm_l2() / target.norm_l2();
    Ok(NormalityReport {
        empirical_cov: linalg::to_rows(empirical.as_ref()),
        target: linalg::to_rows(target.as_ref()),
        rel_frobenius_gap: gap,
        n_pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_panel_is_exact_factor_product() {
        let mut cfg = SimConfig::new(5, 10, 20);
        cfg.idio_var = 0.0;
        let (model, y) = generate_model(&cfg).unwrap();
        let bf = &model.loadings * model.factors.transpose();
        assert_eq!(linalg::to_rows(bf.as_ref()), linalg::to_rows(y.values()));
    }

    #[test]
    fn generation_is_deterministic_and_streams_differ() {
        let cfg = SimConfig::new(5, 10, 20).with_seed(9);
        let a = generate_replication(&cfg, 3).unwrap().1;
        let b = generate_replication(&cfg, 3).unwrap().1;
        let c = generate_replication(&cfg, 4).unwrap().1;
        assert_eq!(linalg::to_rows(a.values()), linalg::to_rows(b.values()));
        assert_ne!(linalg::to_rows(a.values()), linalg::to_rows(c.values()));
    }

    #[test]
    fn smoke_table() {
        let mut cfg = SimConfig::new(5, 10, 20).with_reps(2);
        cfg.dc_m = Some(2);
        let table = monte_carlo_table(&cfg).unwrap();
        assert_eq!(table.cells.len(), 4 * 6);
        assert!(table.cells.iter().all(|c| c.mean.is_finite() && c.sd.is_finite()));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 25);
    }

    #[test]
    fn mean_sd_uses_n_minus_one() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn benchmark_designs() {
        let d = benchmark_design(500);
        assert_eq!((d.s, d.p, d.dc_m), (41, 6005, Some(3)));
        let d = benchmark_design(200);
        assert_eq!((d.s, d.p, d.dc_m), (24, 1665, Some(2)));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(SimConfig::new(60, 50, 100).validate().is_err());
        assert!(SimConfig::new(3, 50, 100).validate().is_err());
    }
}
