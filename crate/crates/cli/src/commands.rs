use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use factorcov::divide_conquer::{self, Alignment, DcConfig};
use factorcov::io::{self, CsvOptions, Presence};
use factorcov::lda::{self, Centering, LdaConfig, LdaCovMethod, SplitConfig};
use factorcov::metrics;
use factorcov::selection::{self, IcPenalty, KSelectionResult, DEFAULT_MAX_FACTORS};
use factorcov::sim::{self, SimConfig};
use factorcov::{
    pipeline, Error, FactorModelEstimate, ObservationMatrix, PipelineConfig, RateMode, Result, SubsetSelector,
    ThresholdRule, ThresholdSettings,
};
use serde::Serialize;

use crate::{
    AlignArg, BenchmarkArgs, CenteringArg, ClassifyArgs, CriterionArg, CsvArgs, EstimateArgs, EstimatorArg, FisherArgs,
    FormatArg, RateArg, SelectKArgs, SimulateArgs, ThresholdArgs,
};

const THREADS_ENV: &str = "FACTORCOV_THREADS";

/// Size the rayon pool and the dense kernels; the environment variable wins over the flag.
pub fn configure_threads(flag: Option<usize>) -> Result<()> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Argument(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    let Some(n) = env.or(flag) else { return Ok(()) };
    if n == 0 {
        return Err(Error::Argument("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Argument(format!("cannot configure thread pool: {e}")))?;
    faer::set_global_parallelism(faer::Par::rayon(n));
    Ok(())
}

fn csv_options(a: &CsvArgs) -> CsvOptions {
    let pick = |yes: bool, no: bool| match (yes, no) {
        (true, _) => Presence::Yes,
        (_, true) => Presence::No,
        _ => Presence::Auto,
    };
    CsvOptions {
        header: pick(a.header, a.no_header),
        id_column: pick(a.ids, a.no_ids),
        strict: a.strict,
    }
}

fn threshold_settings(a: &ThresholdArgs) -> Result<ThresholdSettings> {
    if a.c.eq_ignore_ascii_case("auto") {
        if a.fixed_c {
            return Err(Error::Argument("--fixed-c requires a numeric --c".into()));
        }
        return Ok(ThresholdSettings::auto());
    }
    let c: f64 = a
        .c
        .parse()
        .map_err(|_| Error::Argument(format!("--c must be a number or \"auto\", got {:?}", a.c)))?;
    let rule = if a.fixed_c { ThresholdRule::Fixed(c) } else { ThresholdRule::MinPdFrom(c) };
    let settings = ThresholdSettings { initial: rule, residual: rule, ..ThresholdSettings::auto() };
    settings.validate()?;
    Ok(settings)
}

fn rate_mode(a: RateArg) -> RateMode {
    match a {
        RateArg::PaperLiteral => RateMode::PaperLiteral,
        RateArg::TheoryAware => RateMode::TheoryAware,
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn auto_k(y: &ObservationMatrix) -> Result<KSelectionResult> {
    let n_max = DEFAULT_MAX_FACTORS.min(y.n_vars().min(y.n_times()).saturating_sub(1));
    let sel = selection::select_k_ic(y.values(), n_max, IcPenalty::Gp1, true)?;
    if sel.k_hat == 0 {
        return Err(Error::Argument("the information criterion selected no factors; pass --k explicitly".into()));
    }
    Ok(sel)
}

fn read_subset(inline: Option<&str>, file: Option<&PathBuf>, p: usize) -> Result<SubsetSelector> {
    let subset = match (inline, file) {
        (Some(s), _) => SubsetSelector::parse(s)?,
        (None, Some(path)) => SubsetSelector::parse(&fs::read_to_string(path)?.replace(['\n', '\r'], ","))?,
        (None, None) => SubsetSelector::all(p)?,
    };
    subset.check_against(p)?;
    Ok(subset)
}

#[derive(Serialize)]
struct EstimateSummary<'a> {
    method: String,
    k: usize,
    k_selection: Option<KSelectionResult>,
    p: usize,
    t: usize,
    subset: &'a [usize],
    variable_ids: Vec<&'a str>,
    initial_c: &'a [f64],
    residual_c: f64,
    residual_rate: f64,
    jitter: f64,
    idio_min_eigenvalue: f64,
    eig_diag: Option<&'a [f64]>,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct TimingSummary {
    initial_threshold_ms: f64,
    inversion_ms: f64,
    eigensolve_ms: f64,
    merge_ms: f64,
    finish_ms: f64,
    total_ms: f64,
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    let y = io::read_panel(&a.input, &csv_options(&a.csv))?;
    let subset = read_subset(a.subset.as_deref(), a.subset_file.as_ref(), y.n_vars())?;
    let (k, k_selection) = if a.k.eq_ignore_ascii_case("auto") {
        let sel = auto_k(&y)?;
        (sel.k_hat, Some(sel))
    } else {
        let k = a.k.parse().map_err(|_| Error::Argument(format!("--k must be an integer or \"auto\", got {:?}", a.k)))?;
        (k, None)
    };
    let cfg = PipelineConfig::new(k)
        .with_threshold(threshold_settings(&a.threshold)?)
        .with_rate_mode(rate_mode(a.threshold.rate_mode));
    let est: FactorModelEstimate = match a.method {
        EstimatorArg::Method1 => pipeline::estimate_method1(&y, &subset, &cfg)?,
        EstimatorArg::Method2 => pipeline::estimate_method2(&y, &subset, &cfg)?,
        EstimatorArg::Dc => {
            let dc = DcConfig {
                m: a.m,
                alignment: match a.align {
                    AlignArg::Procrustes => Alignment::Procrustes,
                    AlignArg::Literal => Alignment::Literal,
                },
                partition_seed: a.seed,
            };
            divide_conquer::dc_estimate(&y, &subset, &cfg, &dc)?
        }
    };
    fs::create_dir_all(&a.out_dir)?;
    io::write_matrix_file(&a.out_dir.join("covariance.csv"), est.total_cov.as_ref())?;
    io::write_matrix_file(&a.out_dir.join("loadings.csv"), est.loadings.as_ref())?;
    io::write_matrix_file(&a.out_dir.join("factors.csv"), est.factors.as_ref())?;
    let d = &est.diagnostics;
    let ids = y.variable_ids();
    let summary = EstimateSummary {
        method: est.method.to_string(),
        k,
        k_selection,
        p: y.n_vars(),
        t: y.n_times(),
        subset: subset.indices(),
        variable_ids: subset.indices().iter().map(|&i| ids[i].as_str()).collect(),
        initial_c: &d.initial_c,
        residual_c: d.residual_c,
        residual_rate: d.residual_rate,
        jitter: d.jitter,
        idio_min_eigenvalue: d.idio_min_eigenvalue,
        eig_diag: est.eig_diag.as_deref(),
        warnings: &d.warnings,
    };
    fs::write(a.out_dir.join("summary.json"), to_json(&summary)?)?;
    let t = &d.timings;
    let timings = TimingSummary {
        initial_threshold_ms: ms(t.initial_threshold),
        inversion_ms: ms(t.inversion),
        eigensolve_ms: ms(t.eigensolve),
        merge_ms: ms(t.merge),
        finish_ms: ms(t.finish),
        total_ms: ms(t.total),
    };
    fs::write(a.out_dir.join("timings.json"), to_json(&timings)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    config: &'a SimConfig,
    cells: &'a [sim::TableCell],
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = SimConfig::new(a.s, a.p, a.t).with_k(a.k).with_reps(a.reps).with_seed(a.seed);
    cfg.dc_m = a.dc_m;
    cfg.heteroscedastic = a.heteroscedastic;
    let table = sim::monte_carlo_table(&cfg)?;
    let bytes = match a.format {
        FormatArg::Csv => {
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            buf
        }
        FormatArg::Json => to_json(&SimulateSummary { config: &table.config, cells: &table.cells })?,
    };
    emit(a.out.as_deref(), &bytes)?;
    if let Some(path) = &a.timings {
        let wall: Vec<(String, f64)> = table.wall_ms.iter().map(|(m, v)| (m.to_string(), *v)).collect();
        fs::write(path, to_json(&wall)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkReport<'a> {
    result: &'a sim::BenchmarkResult,
    speedups: Vec<(usize, Option<f64>)>,
}

pub fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let base = SimConfig::new(10, 100, 100).with_reps(a.reps).with_seed(a.seed);
    let result = sim::benchmark_dc(&a.t, &base)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)?;
    if let Some(path) = &a.report {
        let speedups = a.t.iter().map(|&t| (t, result.speedup(t))).collect();
        fs::write(path, to_json(&BenchmarkReport { result: &result, speedups })?)?;
    }
    Ok(())
}

pub fn select_k(a: SelectKArgs) -> Result<()> {
    let y = io::read_panel(&a.input, &csv_options(&a.csv))?;
    let result = match a.criterion {
        CriterionArg::Gp1 => selection::select_k_ic(y.values(), a.n, IcPenalty::Gp1, a.center)?,
        CriterionArg::Gp2 => selection::select_k_ic(y.values(), a.n, IcPenalty::Gp2, a.center)?,
        CriterionArg::EigenRatio => selection::select_k_eigen_ratio(y.values(), a.n)?,
    };
    emit(a.out.as_deref(), &to_json(&result)?)?;
    if let Some(path) = &a.curve {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "value"])?;
        for (k, v) in result.k_values.iter().zip(&result.criterion_values) {
            w.write_record([k.to_string(), format!("{v:?}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassifyRule<'a> {
    rule: &'a str,
    mean_rate: f64,
    sd_rate: f64,
    n_splits: usize,
    rates: &'a [f64],
}

pub fn classify(a: ClassifyArgs) -> Result<()> {
    let y = io::read_panel(&a.input, &csv_options(&a.csv))?;
    let labels = io::read_labels(&a.labels)?;
    let threshold = threshold_settings(&a.threshold)?;
    let centering = match a.centering {
        CenteringArg::Class => Centering::ClassCentered,
        CenteringArg::Pooled => Centering::Pooled,
    };
    let rules: Vec<LdaConfig> = [LdaCovMethod::Method1, LdaCovMethod::Method2]
        .into_iter()
        .map(|m| LdaConfig {
            cov_method: m,
            pipeline: PipelineConfig::new(a.k)
                .with_threshold(threshold.clone())
                .with_rate_mode(rate_mode(a.threshold.rate_mode)),
            centering,
        })
        .collect();
    let split = SplitConfig {
        n_splits: a.splits,
        test_fraction: a.test_fraction,
        s_max: a.s_max,
        seed: a.seed,
    };
    let report = lda::misclassification_rate(y.values(), &labels, &rules, &split)?;
    let out: Vec<ClassifyRule> = report
        .rules
        .iter()
        .map(|r| ClassifyRule {
            rule: &r.rule,
            mean_rate: r.mean_rate,
            sd_rate: r.sd_rate,
            n_splits: report.n_splits,
            rates: &r.rates,
        })
        .collect();
    emit(a.out.as_deref(), &to_json(&out)?)
}

#[derive(Serialize)]
struct FisherSummary {
    subset: Vec<usize>,
    /// Whether the full-panel information dominates the subset information.
    psd: bool,
    #[serde(flatten)]
    report: metrics::FisherReport,
}

pub fn fisher(a: FisherArgs) -> Result<()> {
    let (b, idio) = io::read_model(&a.model)?.to_parts()?;
    let subset = SubsetSelector::parse(&a.subset)?;
    subset.check_against(b.nrows())?;
    let report = metrics::fisher_dominance(b.as_ref(), &idio, &subset)?;
    let scale = report.info_full.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let summary = FisherSummary {
        subset: subset.indices().to_vec(),
        psd: report.min_eig_diff >= -1e-10 * scale.max(1.0),
        report,
    };
    emit(a.out.as_deref(), &to_json(&summary)?)
}
