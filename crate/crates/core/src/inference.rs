//! Hyperspherical angle charts for unit axes and percentile bootstrap
//! intervals for fitted models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::prelude::*;
use crate::{fit, OptimizerConfig, PncModel, ResidualKind};

/// Angles `θ_1 … θ_{m−1}` of the product-of-sines chart:
/// `v_k = (∏_{j<k} sin θ_j) cos θ_k` for `k < m` and `v_m = ∏_j sin θ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypersphericalAngles {
    angles: Vec<f64>,
}

impl HypersphericalAngles {
    /// `θ_1 … θ_{m−2} ∈ [0, π]` and `θ_{m−1} ∈ [0, 2π)`.
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        let Some((last, rest)) = angles.split_last() else {
            return Err(PncError::param("need at least one angle"));
        };
        if let Some(bad) = rest.iter().find(|a| !(0.0..=PI).contains(*a)) {
            return Err(PncError::domain(format!("polar angle {bad} outside [0, π]")));
        }
        if !(0.0..TAU).contains(last) {
            return Err(PncError::domain(format!("azimuth {last} outside [0, 2π)")));
        }
        Ok(Self { angles })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Length of the unit vector these angles describe.
    pub fn dim(&self) -> usize {
        self.angles.len() + 1
    }
}

pub fn to_hyperspherical(v: &Vector) -> Result<HypersphericalAngles> {
    let m = v.len();
    if m < 2 {
        return Err(PncError::param("hyperspherical angles need at least 2 coordinates"));
    }
    let norm = v.norm();
    if !(norm > 0.0) {
        return Err(PncError::domain("the zero vector has no direction"));
    }
    let v = v / norm;
    let mut angles = Vec::with_capacity(m - 1);
    // tail[k] = ‖v_{k..}‖
    let mut tail = vec![0.0; m + 1];
    for k in (0..m).rev() {
        tail[k] = tail[k + 1].hypot(v[k]);
    }
    for k in 0..m - 2 {
        angles.push(tail[k + 1].atan2(v[k]));
    }
    angles.push(wrap_tau(v[m - 1].atan2(v[m - 2])));
    HypersphericalAngles::new(angles)
}

pub fn from_hyperspherical(angles: &HypersphericalAngles) -> Vector {
    let m = angles.dim();
    let mut v = Vector::zeros(m);
    let mut prod = 1.0;
    for (k, a) in angles.angles.iter().enumerate() {
        let (s, c) = a.sin_cos();
        v[k] = prod * c;
        prod *= s;
    }
    v[m - 1] = prod;
    v
}

/// Percentile intervals for every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Interval width divided by the parameter's range, in `[0, 1]`.
    pub normalized_widths: Vec<f64>,
    /// Whether `lower ≤ estimate ≤ upper`; the percentile method can
    /// exclude the estimate.
    pub contains_estimate: Vec<bool>,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub skipped: usize,
}

impl BootstrapSummary {
    pub fn mean_normalized_width(&self) -> f64 {
        self.normalized_widths.iter().sum::<f64>() / self.normalized_widths.len() as f64
    }
}

/// Mean normalized width over repeated runs. `Pooled` averages every
/// parameter's width across all runs at once; `PerRun` averages each run's
/// [`BootstrapSummary::mean_normalized_width`]. The two agree when runs share
/// a parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WidthPooling {
    #[default]
    Pooled,
    PerRun,
}

pub fn mean_width_over_runs(runs: &[BootstrapSummary], pooling: WidthPooling) -> Result<f64> {
    if runs.is_empty() {
        return Err(PncError::param("no bootstrap runs to average"));
    }
    Ok(match pooling {
        WidthPooling::Pooled => {
            let total: usize = runs.iter().map(|r| r.normalized_widths.len()).sum();
            runs.iter().flat_map(|r| r.normalized_widths.iter()).sum::<f64>() / total as f64
        }
        WidthPooling::PerRun => {
            runs.iter().map(BootstrapSummary::mean_normalized_width).sum::<f64>() / runs.len() as f64
        }
    })
}

/// Flattened parameters of a model: for each stage the hyperspherical
/// angles of its axis, then its opening (intermediate stages only).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub names: Vec<String>,
    /// Length of each parameter's range: `π`, `2π` for azimuths, `π/2` for
    /// openings.
    pub ranges: Vec<f64>,
    /// Whether the parameter is an azimuth, defined modulo `2π`.
    pub periodic: Vec<bool>,
}

impl ParameterLayout {
    pub fn for_model(model: &PncModel) -> Self {
        let mut names = Vec::new();
        let mut ranges = Vec::new();
        let mut periodic = Vec::new();
        let d = model.reduced_dim();
        for (k, stage) in model.stages().iter().enumerate() {
            let m = stage.dim();
            for j in 0..m - 1 {
                names.push(format!("stage{}_theta{}", k + 1, j + 1));
                let last = j == m - 2;
                ranges.push(if last { TAU } else { PI });
                periodic.push(last);
            }
            if k + 1 < d {
                names.push(format!("stage{}_alpha", k + 1));
                ranges.push(FRAC_PI_2);
                periodic.push(false);
            }
        }
        Self { names, ranges, periodic }
    }
}

/// Parameter values in the order of [`ParameterLayout::for_model`].
pub fn parameter_vector(model: &PncModel) -> Result<Vec<f64>> {
    let d = model.reduced_dim();
    let mut out = Vec::new();
    for (k, stage) in model.stages().iter().enumerate() {
        out.extend_from_slice(to_hyperspherical(&stage.axis)?.angles());
        if k + 1 < d {
            out.push(stage.opening);
        }
    }
    Ok(out)
}

/// Parameters of a replicate, brought onto the same branch as the estimate:
/// a final axis pointing away from the estimate's is turned by `π`, and each
/// azimuth is unwrapped to within `π` of the estimate's.
pub fn aligned_parameters(replicate: &PncModel, estimate: &PncModel) -> Result<Vec<f64>> {
    let layout = ParameterLayout::for_model(estimate);
    let est = parameter_vector(estimate)?;
    let mut vals = parameter_vector(replicate)?;
    let d = estimate.reduced_dim();
    let rep_final = &replicate.stages()[d - 1].axis;
    let est_final = &estimate.stages()[d - 1].axis;
    if rep_final.dot(est_final) < 0.0 {
        let last = vals.len() - 1;
        vals[last] += PI;
    }
    for i in 0..vals.len() {
        if layout.periodic[i] {
            let diff = vals[i] - est[i];
            let wrapped = diff - TAU * (diff / TAU).round();
            vals[i] = est[i] + wrapped;
        }
    }
    Ok(vals)
}

/// Column indices of bootstrap replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn all_same_direction(data: &Matrix, idx: &[usize]) -> bool {
    let first = data.column(idx[0]).normalize();
    idx.iter().all(|&j| {
        let u = data.column(j).normalize();
        crate::geometry::angle_between(&u, &first) <= 1e-12
    })
}

/// One replicate: resample, refit, align. `None` when the resample collapses
/// to a single direction although the data do not.
pub fn bootstrap_replicate(
    data: &Matrix,
    estimate: &PncModel,
    b: u64,
    kind: ResidualKind,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    let n = data.ncols();
    let idx = resample_indices(n, seed, b);
    if all_same_direction(data, &idx) && !all_same_direction(data, &(0..n).collect::<Vec<_>>()) {
        return Ok(None);
    }
    let sample = data.select_columns(idx.iter());
    let (model, _) = fit(&sample, kind, config)?;
    Ok(Some(aligned_parameters(&model, estimate)?))
}

/// Type-7 sample quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile intervals from replicate parameter vectors (`None` = skipped).
pub fn summarize(
    estimate: &PncModel,
    replicates: &[Option<Vec<f64>>],
    level: f64,
    seed: u64,
) -> Result<BootstrapSummary> {
    let total = replicates.len();
    let kept: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    let skipped = total - kept.len();
    if skipped * 10 > total || kept.len() < 2 {
        return Err(PncError::TooManySkipped { skipped, total });
    }
    let layout = ParameterLayout::for_model(estimate);
    let estimates = parameter_vector(estimate)?;
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = (1.0 + level) / 2.0;
    let count = estimates.len();
    let mut lower = Vec::with_capacity(count);
    let mut upper = Vec::with_capacity(count);
    let mut normalized_widths = Vec::with_capacity(count);
    let mut contains_estimate = Vec::with_capacity(count);
    for i in 0..count {
        let mut vals: Vec<f64> = kept.iter().map(|v| v[i]).collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        let lo = quantile(&vals, lo_q);
        let hi = quantile(&vals, hi_q);
        lower.push(lo);
        upper.push(hi);
        normalized_widths.push(((hi - lo) / layout.ranges[i]).clamp(0.0, 1.0));
        contains_estimate.push(lo <= estimates[i] && estimates[i] <= hi);
    }
    Ok(BootstrapSummary {
        names: layout.names,
        estimates,
        lower,
        upper,
        normalized_widths,
        contains_estimate,
        replicates: total,
        level,
        seed,
        skipped,
    })
}

pub fn check_bootstrap_input(data: &Matrix, replicates: usize, level: f64) -> Result<()> {
    if replicates < 2 {
        return Err(PncError::param(format!("need at least 2 bootstrap replicates, got {replicates}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(PncError::param(format!("confidence level {level} outside (0, 1)")));
    }
    let need = data.nrows() + 1;
    if data.ncols() < need {
        return Err(PncError::param(format!("bootstrap needs at least {need} observations, got {}", data.ncols())));
    }
    Ok(())
}

/// Fits the data, refits `replicates` resamples and summarises percentile
/// intervals at `level`. Replicate `b` draws from its own stream of `seed`,
/// so the result does not depend on evaluation order.
pub fn bootstrap(
    data: &Matrix,
    replicates: usize,
    level: f64,
    kind: ResidualKind,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<BootstrapSummary> {
    check_bootstrap_input(data, replicates, level)?;
    let (estimate, _) = fit(data, kind, config)?;
    let mut reps = Vec::with_capacity(replicates);
    for b in 0..replicates as u64 {
        reps.push(bootstrap_replicate(data, &estimate, b, kind, config, seed)?);
    }
    summarize(&estimate, &reps, level, seed)
}
