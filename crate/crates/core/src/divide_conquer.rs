//! Divide-and-conquer factor estimation.
//!
//! The `p` variables are split into `M` groups. Each group gets its own thresholded
//! initial estimate and weighted-PC factors, computed in parallel. Group factors are
//! rotated onto group 1 (orthogonal Procrustes), averaged, and the usual subset
//! finish is applied. The `O(p^3)` Cholesky step becomes `M` problems of order `p/M`.

use std::time::Instant;

use faer::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{EstimateDiagnostics, FactorModelEstimate, Method, ObservationMatrix, StageTimings, SubsetSelector};
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::pipeline::{self, PipelineConfig};
use crate::threshold::ThresholdSettings;
use crate::wpc;

/// Disjoint groups covering `0..p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    /// Contiguous blocks; the first `p mod M` blocks get one extra index.
    pub fn contiguous(p: usize, m: usize) -> Result<Self> {
        check_groups(p, m)?;
        let (base, extra) = (p / m, p % m);
        let mut groups = Vec::with_capacity(m);
        let mut start = 0;
        for g in 0..m {
            let len = base + usize::from(g < extra);
            groups.push((start..start + len).collect());
            start += len;
        }
        Ok(Self { groups })
    }

    /// Seeded random assignment with the same group sizes as [`Partition::contiguous`].
    /// Indices within each group are sorted.
    pub fn random(p: usize, m: usize, seed: u64) -> Result<Self> {
        check_groups(p, m)?;
        let mut order: Vec<usize> = (0..p).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let sizes = Self::contiguous(p, m)?;
        let mut start = 0;
        let groups = sizes
            .groups
            .iter()
            .map(|g| {
                let mut chunk = order[start..start + g.len()].to_vec();
                chunk.sort_unstable();
                start += g.len();
                chunk
            })
            .collect();
        Ok(Self { groups })
    }

    /// Build from explicit groups; they must be disjoint, nonempty, and cover `0..p`.
    pub fn from_groups(p: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; p];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Argument("empty group in partition".into()));
            }
            for &i in g {
                if i >= p || seen[i] {
                    return Err(Error::Argument(format!("index {i} out of range or repeated in partition of {p}")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("partition misses index {i}")));
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_vars(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

fn check_groups(p: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Argument("M must be at least 1".into()));
    }
    if m > p {
        return Err(Error::Argument(format!("M > p (M={m}, p={p})")));
    }
    Ok(())
}

/// Contiguous, deterministic partition of `p` variables into `m` groups.
pub fn partition_variables(p: usize, m: usize) -> Result<Partition> {
    Partition::contiguous(p, m)
}

/// How group factors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Rotate each group onto group 1 before averaging.
    #[default]
    Procrustes,
    /// Average the raw group factors.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcConfig {
    /// Number of groups.
    pub m: usize,
    pub alignment: Alignment,
    /// `None` for the contiguous partition, otherwise the seed of a random one.
    pub partition_seed: Option<u64>,
}

impl DcConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            alignment: Alignment::Procrustes,
            partition_seed: None,
        }
    }

    pub fn partition(&self, p: usize) -> Result<Partition> {
        match self.partition_seed {
            None => Partition::contiguous(p, self.m),
            Some(seed) => Partition::random(p, self.m, seed),
        }
    }
}

/// Weighted-PC factors of one group panel `y_m` (`n_m x T`).
pub fn group_factor_estimate(y_m: MatRef<'_, f64>, k: usize, settings: &ThresholdSettings) -> Result<Mat<f64>> {
    Ok(pipeline::factor_stage(y_m, k, settings)?.wpc.factors)
}

/// `candidate * Omega` with `Omega` the orthogonal matrix closest to mapping `candidate` onto `reference`.
#[derive(Debug, Clone)]
pub struct AlignedFactors {
    pub aligned: Mat<f64>,
    pub omega: Mat<f64>,
    /// The cross-product `candidate' reference` vanished; `Omega = I` was used.
    pub degenerate: bool,
}

/// Orthogonal Procrustes alignment of `candidate` (`T x K`) to `reference`.
pub fn align_factors(reference: MatRef<'_, f64>, candidate: MatRef<'_, f64>) -> Result<AlignedFactors> {
    if reference.nrows() != candidate.nrows() || reference.ncols() != candidate.ncols() {
        return Err(Error::shape(
            "align_factors",
            format!("{}x{}", reference.nrows(), reference.ncols()),
            format!("{}x{}", candidate.nrows(), candidate.ncols()),
        ));
    }
    let k = reference.ncols();
    let cross = candidate.transpose() * reference;
    if linalg::max_abs(cross.as_ref()) == 0.0 {
        return Ok(AlignedFactors {
            aligned: candidate.to_owned(),
            omega: Mat::<f64>::identity(k, k),
            degenerate: true,
        });
    }
    let svd = cross.svd().map_err(|e| Error::Decomposition(format!("SVD failed: {e:?}")))?;
    let omega = svd.U() * svd.V().transpose();
    Ok(AlignedFactors {
        aligned: candidate * &omega,
        omega,
        degenerate: false,
    })
}

/// Per-group output retained for evaluation.
#[derive(Debug)]
pub struct GroupFit {
    pub indices: Vec<usize>,
    /// Unaligned group factors.
    pub factors: Mat<f64>,
    pub eig_diag: Vec<f64>,
    pub weight: SpdFactor,
    /// Rotation applied before averaging (identity for group 1 and literal averaging).
    pub omega: Mat<f64>,
}

#[derive(Debug)]
pub struct DcFit {
    pub estimate: FactorModelEstimate,
    pub groups: Vec<GroupFit>,
}

impl DcFit {
    /// Averaged rotation `(1/M) sum_m Omega_m' H_m`, with `H_m` the rotation of group `m`
    /// against the true factors and full-panel loadings.
    pub fn rotation(&self, f_true: MatRef<'_, f64>, b_true: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let k = f_true.ncols();
        let mut acc = Mat::<f64>::zeros(k, k);
        for g in &self.groups {
            let b_m = linalg::select_rows(b_true, &g.indices);
            let h = wpc::rotation_matrix_factored(&g.eig_diag, g.factors.as_ref(), f_true, b_m.as_ref(), &g.weight)?;
            acc += g.omega.transpose() * &h;
        }
        Ok(Scale(1.0 / self.groups.len() as f64) * &acc)
    }
}

/// Divide-and-conquer estimate retaining the per-group fits.
pub fn fit_dc(y: &ObservationMatrix, subset: &SubsetSelector, cfg: &PipelineConfig, dc: &DcConfig) -> Result<DcFit> {
    cfg.validate()?;
    let partition = dc.partition(y.n_vars())?;
    fit_dc_with_partition(y, subset, cfg, &partition, dc.alignment)
}

/// [`fit_dc`] with an explicit partition.
pub fn fit_dc_with_partition(
    y: &ObservationMatrix,
    subset: &SubsetSelector,
    cfg: &PipelineConfig,
    partition: &Partition,
    alignment: Alignment,
) -> Result<DcFit> {
    cfg.validate()?;
    let (p, t) = (y.n_vars(), y.n_times());
    subset.check_against(p)?;
    if partition.n_vars() != p {
        return Err(Error::shape("partition", p, partition.n_vars()));
    }
    if let Some(g) = partition.groups().iter().find(|g| g.len() <= cfg.k) {
        return Err(Error::Argument(format!("every group needs more than K={} variables (found {})", cfg.k, g.len())));
    }
    let start = Instant::now();

    let stages = partition
        .groups()
        .par_iter()
        .map(|g| {
            let y_m = linalg::select_rows(y.values(), g);
            pipeline::factor_stage(y_m.as_ref(), cfg.k, &cfg.threshold)
        })
        .collect::<Result<Vec<_>>>()?;

    let merge_start = Instant::now();
    let m = stages.len();
    let k = cfg.k;
    let mut diagnostics = EstimateDiagnostics::default();
    let mut timings = StageTimings::default();
    let reference = stages[0].wpc.factors.clone();
    let mut sum = Mat::<f64>::zeros(t, k);
    let mut omegas = Vec::with_capacity(m);
    for (idx, stage) in stages.iter().enumerate() {
        timings.accumulate(&stage.timings);
        diagnostics.initial_c.push(stage.initial_c.c);
        diagnostics.jitter = diagnostics.jitter.max(stage.weight.jitter);
        if !stage.initial_c.qualified {
            diagnostics.warnings.push(format!("group {idx}: no C in the grid made the initial estimate exceed the PD floor"));
        }
        if stage.weight.jitter > 0.0 {
            diagnostics.warnings.push(format!("group {idx}: initial weight needed diagonal jitter {:e}", stage.weight.jitter));
        }
        if stage.wpc.degenerate_spectrum {
            diagnostics.warnings.push(format!("group {idx}: leading eigenvalues are tied"));
        }
        let omega = if idx == 0 || alignment == Alignment::Literal {
            sum += &stage.wpc.factors;
            Mat::<f64>::identity(k, k)
        } else {
            let a = align_factors(reference.as_ref(), stage.wpc.factors.as_ref())?;
            if a.degenerate {
                diagnostics.warnings.push(format!("group {idx}: factors orthogonal to group 0; not rotated"));
            }
            sum += &a.aligned;
            a.omega
        };
        omegas.push(omega);
    }
    let factors = if m == 1 { sum } else { Scale(1.0 / m as f64) * &sum };
    timings.merge = merge_start.elapsed();

    let finish = Instant::now();
    let y_s = y.restrict(subset)?;
    let rate = pipeline::residual_rate(Method::DivideConquer, cfg.rate_mode, subset.len(), p, t);
    let fit = pipeline::fit_on_subset(y_s.values(), factors.as_ref(), rate, &cfg.threshold)?;
    timings.finish = finish.elapsed();
    timings.total = start.elapsed();
    diagnostics.timings = timings;

    let estimate = pipeline::assemble(Method::DivideConquer, factors, None, fit, rate, diagnostics);
    let groups = stages
        .into_iter()
        .zip(omegas)
        .zip(partition.groups())
        .map(|((stage, omega), g)| GroupFit {
            indices: g.clone(),
            factors: stage.wpc.factors,
            eig_diag: stage.wpc.eig_diag,
            weight: stage.weight,
            omega,
        })
        .collect();
    Ok(DcFit { estimate, groups })
}

/// Divide-and-conquer covariance estimate of the target subset.
pub fn dc_estimate(y: &ObservationMatrix, subset: &SubsetSelector, cfg: &PipelineConfig, dc: &DcConfig) -> Result<FactorModelEstimate> {
    Ok(fit_dc(y, subset, cfg, dc)?.estimate)
}
