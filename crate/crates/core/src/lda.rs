//! Two-class linear discriminant analysis with a factor-model covariance plug-in.
//!
//! A subject `x` is classified as a case when `delta' Sigma^{-1} (x - mu_bar) >= 0`,
//! with `delta = mu_1 - mu_0` and `mu_bar = (mu_1 + mu_0) / 2` estimated on the
//! screened variables.

use faer::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{ObservationMatrix, SubsetSelector};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::pipeline::{self, PipelineConfig};
use crate::sim::mean_sd;

/// Covariance estimator plugged into the rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdaCovMethod {
    /// Factor model fitted to the screened variables only.
    Method1,
    /// Factor model fitted with every variable, restricted to the screened ones.
    Method2,
}

impl LdaCovMethod {
    pub fn label(self) -> &'static str {
        match self {
            LdaCovMethod::Method1 => "LDA-1",
            LdaCovMethod::Method2 => "LDA-2",
        }
    }
}

/// How training data are centered before covariance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Subtract each subject's class mean (within-class covariance).
    #[default]
    ClassCentered,
    /// Subtract the overall mean only.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub cov_method: LdaCovMethod,
    pub pipeline: PipelineConfig,
    pub centering: Centering,
}

impl LdaConfig {
    pub fn new(cov_method: LdaCovMethod, k: usize) -> Self {
        Self {
            cov_method,
            pipeline: PipelineConfig::new(k),
            centering: Centering::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LdaRule {
    pub delta_hat: Vec<f64>,
    pub mu_bar: Vec<f64>,
    pub sigma_inv: Mat<f64>,
    pub selected: SubsetSelector,
    /// `Sigma^{-1} delta`, cached.
    weights: Vec<f64>,
}

/// Serializable view of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaRuleSummary {
    pub selected: Vec<usize>,
    pub delta_hat: Vec<f64>,
    pub mu_bar: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LdaRule {
    pub fn from_parts(delta_hat: Vec<f64>, mu_bar: Vec<f64>, sigma_inv: Mat<f64>, selected: SubsetSelector) -> Result<Self> {
        let s = delta_hat.len();
        if mu_bar.len() != s || sigma_inv.nrows() != s || sigma_inv.ncols() != s || selected.len() != s {
            return Err(Error::Shape {
                context: "LdaRule",
                expected: format!("vectors of length {s} and {s}x{s} inverse"),
                actual: format!(
                    "mu_bar {}, sigma_inv {}x{}, selected {}",
                    mu_bar.len(),
                    sigma_inv.nrows(),
                    sigma_inv.ncols(),
                    selected.len()
                ),
            });
        }
        let weights = (0..s).map(|i| (0..s).map(|j| sigma_inv[(i, j)] * delta_hat[j]).sum()).collect();
        Ok(Self { delta_hat, mu_bar, sigma_inv, selected, weights })
    }

    pub fn n_selected(&self) -> usize {
        self.delta_hat.len()
    }

    /// `delta' Sigma^{-1} (x - mu_bar)` for an `s`-vector on the selected variables.
    pub fn discriminant(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_selected() {
            return Err(Error::Shape {
                context: "classify",
                expected: format!("{}-vector", self.n_selected()),
                actual: format!("{}-vector", x.len()),
            });
        }
        Ok(self.weights.iter().zip(x.iter().zip(&self.mu_bar)).map(|(w, (xi, m))| w * (xi - m)).sum())
    }

    /// Labels for every column of a full `p x n` panel (rows restricted to the selection).
    pub fn predict(&self, data: MatRef<'_, f64>) -> Result<Vec<bool>> {
        self.selected.check_against(data.nrows())?;
        let idx = self.selected.indices();
        (0..data.ncols())
            .map(|j| {
                let x: Vec<f64> = idx.iter().map(|&i| data[(i, j)]).collect();
                Ok(self.discriminant(&x)? >= 0.0)
            })
            .collect()
    }

    pub fn summary(&self) -> LdaRuleSummary {
        LdaRuleSummary {
            selected: self.selected.indices().to_vec(),
            delta_hat: self.delta_hat.clone(),
            mu_bar: self.mu_bar.clone(),
            weights: self.weights.clone(),
        }
    }
}

/// `true` (case) when the discriminant is nonnegative.
pub fn classify(x: &[f64], rule: &LdaRule) -> Result<bool> {
    Ok(rule.discriminant(x)? >= 0.0)
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let n1 = labels.iter().filter(|&&l| l).count();
    (labels.len() - n1, n1)
}

fn check_labels(n: usize, labels: &[bool]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape {
            context: "labels",
            expected: format!("{n} labels"),
            actual: format!("{} labels", labels.len()),
        });
    }
    Ok(())
}

/// Per-variable class means `(mu_0, mu_1)` and sample variances (divisor `n_c - 1`).
fn class_moments(y: MatRef<'_, f64>, labels: &[bool]) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let (n0, n1) = class_counts(labels);
    let counts = [n0 as f64, n1 as f64];
    let mut means = vec![[0.0; 2]; y.nrows()];
    let mut vars = vec![[0.0; 2]; y.nrows()];
    for i in 0..y.nrows() {
        for (j, &l) in labels.iter().enumerate() {
            means[i][l as usize] += y[(i, j)];
        }
        for c in 0..2 {
            means[i][c] /= counts[c];
        }
        for (j, &l) in labels.iter().enumerate() {
            let d = y[(i, j)] - means[i][l as usize];
            vars[i][l as usize] += d * d;
        }
        for c in 0..2 {
            vars[i][c] = if counts[c] > 1.0 { vars[i][c] / (counts[c] - 1.0) } else { 0.0 };
        }
    }
    (means, vars)
}

/// Welch two-sample t-statistics (case minus control) for every variable.
pub fn welch_t_statistics(y: MatRef<'_, f64>, labels: &[bool]) -> Result<Vec<f64>> {
    check_labels(y.ncols(), labels)?;
    let (n0, n1) = class_counts(labels);
    if n0 == 0 || n1 == 0 {
        return Err(Error::Argument("labels contain a single class".into()));
    }
    let (means, vars) = class_moments(y, labels);
    Ok(means
        .iter()
        .zip(&vars)
        .map(|(m, v)| {
            let diff = m[1] - m[0];
            let se = (v[1] / n1 as f64 + v[0] / n0 as f64).sqrt();
            if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            }
        })
        .collect())
}

/// The `s_max` variables with the largest `|t|`, returned in ascending index order.
///
/// Ties in `|t|` are broken in favour of the smaller index.
pub fn screen_variables(y: MatRef<'_, f64>, labels: &[bool], s_max: usize) -> Result<SubsetSelector> {
    if s_max == 0 || s_max > y.nrows() {
        return Err(Error::Argument(format!("s_max={s_max} must lie in [1, p={}]", y.nrows())));
    }
    let t = welch_t_statistics(y, labels)?;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[b].abs().total_cmp(&t[a].abs()).then(a.cmp(&b)));
    let mut chosen = order[..s_max].to_vec();
    chosen.sort_unstable();
    SubsetSelector::new(chosen)
}

/// Fit the rule on a `p x n` training panel.
pub fn fit_lda(train: MatRef<'_, f64>, labels: &[bool], subset: &SubsetSelector, cfg: &LdaConfig) -> Result<LdaRule> {
    let (p, n) = (train.nrows(), train.ncols());
    check_labels(n, labels)?;
    subset.check_against(p)?;
    let (n0, n1) = class_counts(labels);
    if n < 4 || n0 < 2 || n1 < 2 {
        return Err(Error::Argument(format!(
            "need n >= 4 with at least two subjects per class (got {n0} controls, {n1} cases)"
        )));
    }
    let (means, _) = class_moments(train, labels);
    let centered = match cfg.centering {
        Centering::ClassCentered => Mat::<f64>::from_fn(p, n, |i, j| train[(i, j)] - means[i][labels[j] as usize]),
        Centering::Pooled => train.to_owned(),
    };
    let obs = ObservationMatrix::new(centered, None)?;
    let est = match cfg.cov_method {
        LdaCovMethod::Method1 => pipeline::estimate_method1(&obs, subset, &cfg.pipeline)?,
        LdaCovMethod::Method2 => pipeline::estimate_method2(&obs, subset, &cfg.pipeline)?,
    };
    let factor = SpdFactor::new(est.total_cov.as_ref())
        .map_err(|_| Error::Singular("estimated covariance is not positive definite".into()))?;
    let sigma_inv = factor.inverse();
    let idx = subset.indices();
    let delta_hat = idx.iter().map(|&i| means[i][1] - means[i][0]).collect();
    let mu_bar = idx.iter().map(|&i| 0.5 * (means[i][1] + means[i][0])).collect();
    LdaRule::from_parts(delta_hat, mu_bar, sigma_inv, subset.clone())
}

/// Fraction of `predicted` disagreeing with `truth`.
pub fn error_rate(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    check_labels(predicted.len(), truth)?;
    if truth.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_splits: usize,
    /// Fraction of each class held out for testing.
    pub test_fraction: f64,
    /// Number of screened variables.
    pub s_max: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRates {
    pub rule: String,
    pub rates: Vec<f64>,
    pub mean_rate: f64,
    pub sd_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassificationReport {
    pub n_splits: usize,
    pub rules: Vec<RuleRates>,
}

impl MisclassificationReport {
    pub fn rule(&self, name: &str) -> Option<&RuleRates> {
        self.rules.iter().find(|r| r.rule == name)
    }
}

/// Stratified train/test split: `(train, test)` column indices, each sorted.
pub fn stratified_split(labels: &[bool], test_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!("test_fraction={test_fraction} must lie in (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == class).collect();
        members.shuffle(rng);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len().saturating_sub(1));
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn select_columns(m: MatRef<'_, f64>, cols: &[usize]) -> Mat<f64> {
    Mat::<f64>::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Repeated stratified splits: screen and fit on the training part, score on the test part.
///
/// Split `r` uses stream `r` of a generator keyed by `split.seed`, and splits run in parallel.
pub fn misclassification_rate(
    data: MatRef<'_, f64>,
    labels: &[bool],
    rules: &[LdaConfig],
    split: &SplitConfig,
) -> Result<MisclassificationReport> {
    check_labels(data.ncols(), labels)?;
    if split.n_splits == 0 || rules.is_empty() {
        return Err(Error::Argument("need at least one split and one rule".into()));
    }
    let per_split: Vec<Vec<f64>> = (0..split.n_splits)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
            rng.set_stream(r as u64);
            let (train_idx, test_idx) = stratified_split(labels, split.test_fraction, &mut rng)?;
            let train = select_columns(data, &train_idx);
            let test = select_columns(data, &test_idx);
            let train_labels: Vec<bool> = train_idx.iter().map(|&j| labels[j]).collect();
            let test_labels: Vec<bool> = test_idx.iter().map(|&j| labels[j]).collect();
            let subset = screen_variables(train.as_ref(), &train_labels, split.s_max)?;
            rules
                .iter()
                .map(|cfg| {
                    let rule = fit_lda(train.as_ref(), &train_labels, &subset, cfg)?;
                    error_rate(&rule.predict(test.as_ref())?, &test_labels)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rules = rules
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let rates: Vec<f64> = per_split.iter().map(|v| v[i]).collect();
            let (mean_rate, sd_rate) = mean_sd(&rates);
            RuleRates { rule: cfg.cov_method.label().to_string(), rates, mean_rate, sd_rate }
        })
        .collect();
    Ok(MisclassificationReport { n_splits: split.n_splits, rules })
}

/// Two Gaussian classes sharing a factor structure and differing in mean on the first `n_signal` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoClassDesign {
    pub p: usize,
    pub n_per_class: usize,
    pub k: usize,
    pub n_signal: usize,
    pub mean_shift: f64,
    pub loading_var: f64,
    /// Multiplier on the loadings of the signal variables (weak factors there when < 1).
    pub signal_loading_scale: f64,
    pub idio_var: f64,
    pub seed: u64,
}

impl TwoClassDesign {
    pub fn new(p: usize, n_per_class: usize) -> Self {
        Self {
            p,
            n_per_class,
            k: 3,
            n_signal: 10.min(p),
            mean_shift: 1.0,
            loading_var: 5.0,
            signal_loading_scale: 1.0,
            idio_var: 5.0,
            seed: 0,
        }
    }

    /// `p x 2n` panel (controls first) and labels.
    pub fn generate(&self) -> Result<(Mat<f64>, Vec<bool>)> {
        if self.p == 0 || self.n_per_class < 2 || self.n_signal > self.p || self.k == 0 {
            return Err(Error::Argument("invalid two-class design".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |sd: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        };
        let n = 2 * self.n_per_class;
        let mut b = Mat::<f64>::zeros(self.p, self.k);
        for i in 0..self.p {
            for j in 0..self.k {
                let scale = if i < self.n_signal { self.signal_loading_scale } else { 1.0 };
                b[(i, j)] = scale * draw(self.loading_var.sqrt());
            }
        }
        let mut f = Mat::<f64>::zeros(n, self.k);
        for t in 0..n {
            for j in 0..self.k {
                f[(t, j)] = draw(1.0);
            }
        }
        let mut y = &b * f.transpose();
        let labels: Vec<bool> = (0..n).map(|t| t >= self.n_per_class).collect();
        let sd = self.idio_var.sqrt();
        for i in 0..self.p {
            for t in 0..n {
                y[(i, t)] += draw(sd);
                if labels[t] && i < self.n_signal {
                    y[(i, t)] += self.mean_shift;
                }
            }
        }
        Ok((y, labels))
    }
}
