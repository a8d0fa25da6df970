//! The `pnc` subcommands. Each `run_*` function does the whole job of one
//! subcommand and is callable without going through argument parsing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use pnc_core::baselines::{backfit_comparison, ComparisonRow, Method};
use pnc_core::fast::p_max;
use pnc_core::geometry::ConePoint;
use pnc_core::inference::{bootstrap_replicate, check_bootstrap_input, summarize, BootstrapSummary};
use pnc_core::simulate::{
    add_ambient_noise, figure_regions, sample_cone_regions, sample_from_model, sample_spiral, GeneratorSpec,
};
use pnc_core::{
    backfit, fast_backfit, fast_fit, fit, pca_inverse, pca_transform, polar_scores, reduce_to_plane, score_path,
    variance_explained, Matrix, OptimizerConfig, ReconstructionRequest, ResidualKind, ScoreMatrix, Vector,
};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::angle::parse_angle;
use crate::error::{CliError, Result};
use crate::formats::{
    check_apex, fmt_f64, load_model, read_json, read_table, sibling, write_json, write_observations, write_rows,
    FastModelFile, GeneratorFile, ModelFile, SavedModel,
};
use crate::manifest::RunManifest;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "PNC_THREADS";

/// Presets accepted by `simulate`.
pub const PRESETS: [&str; 3] = ["fig3", "spiral", "table1"];

/// Mixed into the seed of the noise stream so that it differs from the
/// stream that places the clean points.
pub const NOISE_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// Sizes the global thread pool from `PNC_THREADS`.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Parameter(format!("{THREADS_ENV}={value:?} is not a positive integer")))?;
    // Fails only if the pool was already built, which leaves it usable.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn to_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn residual_kind(name: &str) -> Result<ResidualKind> {
    name.parse().map_err(|e: pnc_core::PncError| CliError::Parameter(e.to_string()))
}

fn optimizer(seed: u64, max_iters: usize, restarts: usize) -> OptimizerConfig {
    OptimizerConfig { max_iters, restarts, seed, ..OptimizerConfig::default() }
}

fn load_data(path: &Path) -> Result<Matrix> {
    let table = read_table(path)?;
    check_apex(&table.data)?;
    Ok(table.data)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// CSV with a header row and one observation per row.
    pub input: PathBuf,
    /// Reduce to p + 1 dimensions by tangent PCA before fitting.
    #[arg(long)]
    pub fast: Option<usize>,
    /// riemannian or chordal.
    #[arg(long, default_value = "riemannian")]
    pub residual: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Score table; polar scores and variance shares go next to it as
    /// `<stem>.polar.csv` and `<stem>.variance.csv`.
    #[arg(long, default_value = "scores.csv")]
    pub scores: PathBuf,
}

pub fn run_fit(args: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let kind = residual_kind(&args.residual)?;
    let config = optimizer(args.seed, args.max_iters, args.restarts);
    let data = load_data(&args.input)?;
    let (scores, polar) = match args.fast {
        Some(p) => {
            let pm = p_max(&data);
            if p < 2 || p > pm {
                return Err(CliError::Parameter(format!("--fast {p} outside 2..={pm} (p_max = {pm})")));
            }
            let (model, scores) = fast_fit(&data, p, kind, &config)?;
            let (_, reduced) = pca_transform(&data, p)?;
            let polar = polar_scores(&model.inner, &reduce_to_plane(&model.inner, &reduced)?)?;
            write_json(&args.out, &FastModelFile::from(&model))?;
            (scores, polar)
        }
        None => {
            let (model, scores) = fit(&data, kind, &config)?;
            let polar = polar_scores(&model, &reduce_to_plane(&model, &data)?)?;
            write_json(&args.out, &ModelFile::from(&model))?;
            (scores, polar)
        }
    };
    write_scores(&args.scores, &scores)?;
    let polar_path = sibling(&args.scores, ".polar.csv");
    let header = vec!["sx".to_string(), "sy".to_string()];
    write_rows(
        &polar_path,
        &header,
        polar.sx.iter().zip(polar.sy.iter()).map(|(x, y)| vec![fmt_f64(*x), fmt_f64(*y)]),
    )?;
    let variance_path = sibling(&args.scores, ".variance.csv");
    // All-zero scores leave the shares undefined.
    let shares = variance_explained(&scores).unwrap_or_else(|_| vec![f64::NAN; scores.components()]);
    let header = vec!["component".to_string(), "share".to_string()];
    write_rows(
        &variance_path,
        &header,
        shares.iter().enumerate().map(|(i, s)| vec![format!("score_{}", i + 1), fmt_f64(*s)]),
    )?;

    let mut manifest = RunManifest::new("fit", to_json(args), Some(args.seed));
    manifest.inputs.push(args.input.clone());
    manifest.outputs.extend([args.out.clone(), args.scores.clone(), polar_path, variance_path]);
    manifest.write(&args.out, start.elapsed())?;
    Ok(())
}

fn write_scores(path: &Path, scores: &ScoreMatrix) -> Result<()> {
    let d = scores.components();
    let mut header: Vec<String> = (1..=d).map(|i| format!("score_{i}")).collect();
    header.push("size".into());
    let rows = (0..scores.n()).map(|i| {
        let mut row: Vec<String> = scores.scores.row(i).iter().map(|x| fmt_f64(*x)).collect();
        row.push(fmt_f64(scores.sizes[i]));
        row
    });
    write_rows(path, &header, rows)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BackfitArgs {
    /// Model JSON written by `fit`.
    pub model: PathBuf,
    /// Score table with columns score_1…score_d and, unless --sizes is
    /// given, size.
    pub scores: Option<PathBuf>,
    /// Number of leading score columns to keep (default: all).
    #[arg(long)]
    pub keep: Option<usize>,
    /// Table whose `size` column (or only column) gives the sizes.
    #[arg(long)]
    pub sizes: Option<PathBuf>,
    /// column:lo:hi:steps. Vary one score at the mean size, others zero.
    #[arg(long, allow_hyphen_values = true)]
    pub sweep: Option<String>,
    #[arg(long, default_value = "recon.csv")]
    pub out: PathBuf,
}

/// A parsed `--sweep column:lo:hi:steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    /// 1-based score column.
    pub column: usize,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Sweep {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || CliError::Parameter(format!("--sweep {s:?}: expected column:lo:hi:steps"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let column = parts[0].trim().parse().map_err(|_| bad())?;
        let lo: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[2].trim().parse().map_err(|_| bad())?;
        let steps = parts[3].trim().parse().map_err(|_| bad())?;
        if steps < 1 || !lo.is_finite() || !hi.is_finite() {
            return Err(bad());
        }
        Ok(Sweep { column, lo, hi, steps })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.lo];
        }
        let last = (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.lo + (self.hi - self.lo) * i as f64 / last).collect()
    }
}

fn read_sizes(path: &Path) -> Result<Vec<f64>> {
    let table = read_table(path)?;
    if let Some(s) = table.column("size") {
        return Ok(s);
    }
    if table.columns.len() == 1 {
        return Ok(table.data.row(0).iter().copied().collect());
    }
    Err(CliError::Input(format!("{}: no size column", path.display())))
}

pub fn run_backfit(args: &BackfitArgs) -> Result<()> {
    let start = Instant::now();
    let saved = load_model(&args.model)?;
    let model = saved.inner();
    let d = model.reduced_dim();
    let table = args.scores.as_deref().map(read_table).transpose()?;
    let sizes = match (&args.sizes, &table) {
        (Some(path), _) => Some(read_sizes(path)?),
        (None, Some(t)) => t.column("size"),
        (None, None) => None,
    };
    let sizes =
        sizes.ok_or_else(|| CliError::Input("no sizes: pass --sizes or a score table with a size column".into()))?;
    if let Some(j) = sizes.iter().position(|r| !(*r > 0.0)) {
        return Err(CliError::Data(format!("size in row {} is {}, must be positive", j + 1, sizes[j])));
    }

    let (recon, extra) = if let Some(spec) = &args.sweep {
        let sweep = Sweep::parse(spec)?;
        let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
        let values = sweep.values();
        let path = score_path(model, mean, sweep.column, &values)?;
        let recon = match &saved {
            SavedModel::Plain(_) => path,
            SavedModel::Fast(f) => pca_inverse(&f.pca, &path)?,
        };
        (recon, Some((format!("score_{}", sweep.column), values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>())))
    } else {
        let table = table.ok_or_else(|| CliError::Input("a score table is required unless --sweep is given".into()))?;
        let mut scores = Matrix::zeros(table.data.ncols(), d);
        for k in 0..d {
            let name = format!("score_{}", k + 1);
            let column = table
                .column(&name)
                .ok_or_else(|| CliError::Input(format!("score table lacks {name}; the model has {d} score columns")))?;
            scores.set_column(k, &Vector::from_vec(column));
        }
        if table.columns.iter().any(|c| c == &format!("score_{}", d + 1)) {
            return Err(CliError::Input(format!("score table has more than the model's {d} score columns")));
        }
        if sizes.len() != scores.nrows() {
            return Err(CliError::Input(format!("{} sizes for {} score rows", sizes.len(), scores.nrows())));
        }
        let keep = args.keep.unwrap_or(d);
        let req = ReconstructionRequest { model, scores, sizes: Vector::from_vec(sizes), keep };
        let recon = match &saved {
            SavedModel::Plain(_) => backfit(&req)?,
            SavedModel::Fast(f) => fast_backfit(f, &req)?,
        };
        (recon, None)
    };
    write_observations(&args.out, &recon, extra.as_ref().map(|(n, v)| (n.as_str(), v.as_slice())))?;

    let mut manifest = RunManifest::new("backfit", to_json(args), None);
    manifest.inputs.push(args.model.clone());
    manifest.inputs.extend(args.scores.iter().cloned());
    manifest.inputs.extend(args.sizes.iter().cloned());
    manifest.outputs.push(args.out.clone());
    manifest.write(&args.out, start.elapsed())?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// fig3, spiral, table1, or a generator JSON file.
    pub source: String,
    /// Cone opening for fig3 (default pi/6) and spiral (default pi/9).
    #[arg(long)]
    pub alpha: Option<String>,
    /// Standard deviation of Gaussian noise added to every coordinate.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Sample count: per region for fig3, total otherwise.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "simulated.csv")]
    pub out: PathBuf,
}

pub fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let alpha = args.alpha.as_deref().map(parse_angle).transpose()?;
    let mut seed = args.seed.unwrap_or(0);
    let mut inputs = Vec::new();
    let (data, labels) = match args.source.as_str() {
        "fig3" => {
            let n = args.n.unwrap_or(100);
            sample_cone_regions(&figure_regions(alpha.unwrap_or(PI / 6.0), n), seed)
                .map(|(x, l)| (x, Some(l.iter().map(|k| k.to_string()).collect::<Vec<_>>())))?
        }
        "spiral" => {
            (sample_spiral(alpha.unwrap_or(PI / 9.0), [2.0, 5.0], [PI, 8.0 * PI], args.n.unwrap_or(100))?, None)
        }
        "table1" => {
            if alpha.is_some() {
                return Err(CliError::Parameter("table1 fixes its openings; --alpha does not apply".into()));
            }
            (sample_from_model(&GeneratorSpec::table1(args.n.unwrap_or(1000), seed))?, None)
        }
        other if Path::new(other).is_file() => {
            if alpha.is_some() {
                return Err(CliError::Parameter("a generator file fixes its openings; --alpha does not apply".into()));
            }
            let path = PathBuf::from(other);
            let file: GeneratorFile = read_json(&path)?;
            let mut spec = file.to_spec()?;
            if let Some(n) = args.n {
                spec.n = n;
            }
            if let Some(s) = args.seed {
                spec.seed = s;
            }
            seed = spec.seed;
            inputs.push(path);
            (sample_from_model(&spec)?, None)
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown preset {other:?} and no such file; presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    let data = match args.sigma {
        Some(sigma) => add_ambient_noise(&data, sigma, seed ^ NOISE_SEED_MIX)?,
        None => data,
    };
    write_observations(&args.out, &data, labels.as_ref().map(|l| ("label", l.as_slice())))?;

    let mut manifest = RunManifest::new("simulate", to_json(args), Some(seed));
    manifest.inputs = inputs;
    manifest.outputs.push(args.out.clone());
    manifest.write(&args.out, start.elapsed())?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BootstrapArgs {
    pub input: PathBuf,
    /// Number of bootstrap replicates.
    #[arg(long = "B", default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "riemannian")]
    pub residual: String,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Summary table; metadata goes to `<stem>.meta.json`.
    #[arg(long, default_value = "bootstrap.csv")]
    pub out: PathBuf,
}

/// Percentile bootstrap with replicates spread over the thread pool. Each
/// replicate draws from its own stream, so the result does not depend on
/// the thread count.
pub fn parallel_bootstrap(
    data: &Matrix,
    replicates: usize,
    level: f64,
    kind: ResidualKind,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<BootstrapSummary> {
    check_bootstrap_input(data, replicates, level)?;
    let (estimate, _) = fit(data, kind, config)?;
    let reps = (0..replicates as u64)
        .into_par_iter()
        .map(|b| bootstrap_replicate(data, &estimate, b, kind, config, seed))
        .collect::<pnc_core::Result<Vec<_>>>()?;
    Ok(summarize(&estimate, &reps, level, seed)?)
}

#[derive(Serialize)]
struct BootstrapMeta {
    #[serde(rename = "B")]
    replicates: usize,
    level: f64,
    seed: u64,
    skipped: usize,
    mean_normalized_width: f64,
}

pub fn run_bootstrap(args: &BootstrapArgs) -> Result<()> {
    let start = Instant::now();
    let kind = residual_kind(&args.residual)?;
    let data = load_data(&args.input)?;
    let config = optimizer(0, args.max_iters, OptimizerConfig::default().restarts);
    let summary = parallel_bootstrap(&data, args.replicates, args.level, kind, &config, args.seed)?;
    let header: Vec<String> =
        ["parameter", "estimate", "lower", "upper", "normalized_width"].iter().map(|s| s.to_string()).collect();
    let rows = (0..summary.names.len()).map(|i| {
        vec![
            summary.names[i].clone(),
            fmt_f64(summary.estimates[i]),
            fmt_f64(summary.lower[i]),
            fmt_f64(summary.upper[i]),
            fmt_f64(summary.normalized_widths[i]),
        ]
    });
    write_rows(&args.out, &header, rows)?;
    let meta_path = sibling(&args.out, ".meta.json");
    write_json(
        &meta_path,
        &BootstrapMeta {
            replicates: summary.replicates,
            level: summary.level,
            seed: summary.seed,
            skipped: summary.skipped,
            mean_normalized_width: summary.mean_normalized_width(),
        },
    )?;

    let mut manifest = RunManifest::new("bootstrap", to_json(args), Some(args.seed));
    manifest.inputs.push(args.input.clone());
    manifest.outputs.extend([args.out.clone(), meta_path]);
    manifest.write(&args.out, start.elapsed())?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// Cone openings, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "pi/12,pi/6,pi/4,pi/3")]
    pub alphas: Vec<String>,
    /// Noise levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,1")]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value = "compare.csv")]
    pub out: PathBuf,
}

/// Replicate-averaged comparison of one method in one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub components: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub mean_backfit_distance: f64,
    pub variance_explained: f64,
    /// 90% normal interval for the mean distance; `None` for one replicate.
    pub ci: Option<(f64, f64)>,
}

/// Standard normal 95th percentile.
const Z_95: f64 = 1.644_853_626_951_472_2;

/// Runs every (α, σ) cell with `reps` replicates. Replicate `r` uses seed
/// `seed + r` in every cell, so cells differ only in α and σ.
pub fn compare_grid(
    alphas: &[f64],
    sigmas: &[f64],
    components: usize,
    reps: usize,
    seed: u64,
    config: &OptimizerConfig,
) -> Result<Vec<CellSummary>> {
    if reps < 1 {
        return Err(CliError::Parameter("--reps must be at least 1".into()));
    }
    let cells: Vec<(f64, f64)> = alphas.iter().flat_map(|a| sigmas.iter().map(move |s| (*a, *s))).collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| (0..reps as u64).map(move |r| (c, r))).collect();
    let results = jobs
        .par_iter()
        .map(|&(c, r)| backfit_comparison(components, cells[c].1, cells[c].0, seed.wrapping_add(r), config))
        .collect::<pnc_core::Result<Vec<Vec<ComparisonRow>>>>()?;
    let mut out = Vec::with_capacity(cells.len() * Method::ALL.len());
    for (c, &(alpha, sigma)) in cells.iter().enumerate() {
        let block = &results[c * reps..(c + 1) * reps];
        for (m, method) in Method::ALL.iter().enumerate() {
            let dists: Vec<f64> = block.iter().map(|rows| rows[m].mean_backfit_distance).collect();
            let shares: Vec<f64> = block.iter().map(|rows| rows[m].variance_explained).collect();
            let mean = dists.iter().sum::<f64>() / reps as f64;
            let ci = (reps > 1).then(|| {
                let var = dists.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (reps - 1) as f64;
                let half = Z_95 * (var / reps as f64).sqrt();
                (mean - half, mean + half)
            });
            out.push(CellSummary {
                method: *method,
                components,
                alpha,
                sigma,
                mean_backfit_distance: mean,
                variance_explained: shares.iter().sum::<f64>() / reps as f64,
                ci,
            });
        }
    }
    Ok(out)
}

pub fn run_compare(args: &CompareArgs) -> Result<()> {
    let start = Instant::now();
    let alphas = args.alphas.iter().map(|a| parse_angle(a)).collect::<Result<Vec<_>>>()?;
    let config = optimizer(0, args.max_iters, OptimizerConfig::default().restarts);
    let cells = compare_grid(&alphas, &args.sigmas, args.components, args.reps, args.seed, &config)?;
    let mut header: Vec<String> =
        ["method", "components", "alpha", "sigma", "mean_backfit_distance", "variance_explained"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    if args.reps > 1 {
        header.extend(["ci_lo".to_string(), "ci_hi".to_string()]);
    }
    let rows = cells.iter().map(|c| {
        let mut row = vec![
            c.method.name().to_string(),
            c.components.to_string(),
            fmt_f64(c.alpha),
            fmt_f64(c.sigma),
            fmt_f64(c.mean_backfit_distance),
            fmt_f64(c.variance_explained),
        ];
        if let Some((lo, hi)) = c.ci {
            row.extend([fmt_f64(lo), fmt_f64(hi)]);
        }
        row
    });
    write_rows(&args.out, &header, rows)?;

    let mut manifest = RunManifest::new("compare", to_json(args), Some(args.seed));
    manifest.outputs.push(args.out.clone());
    manifest.write(&args.out, start.elapsed())?;
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GeodesicArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: String,
    #[arg(long)]
    pub r1: f64,
    #[arg(long)]
    pub r2: f64,
    /// Base angle between the two points, measured about the cone axis.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: String,
}

/// Distance along a three-dimensional cone between points at sizes `r1`,
/// `r2` whose base angles differ by `theta`.
pub fn geodesic(alpha: f64, r1: f64, r2: f64, theta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= PI / 2.0) {
        return Err(CliError::Parameter(format!("--alpha {alpha} outside (0, π/2]")));
    }
    if !(r1 >= 0.0 && r2 >= 0.0 && r1.is_finite() && r2.is_finite()) {
        return Err(CliError::Parameter("sizes must be finite and nonnegative".into()));
    }
    if r1 == 0.0 || r2 == 0.0 {
        return Ok(r1 + r2);
    }
    let point = |r: f64, t: f64| {
        let [x, y, z] = pnc_core::simulate::cone_point(alpha, r, t);
        ConePoint::from_slice(&[x, y, z])
    };
    Ok(pnc_core::geometry::hypercone_geodesic_distance(&point(r1, 0.0)?, &point(r2, theta)?, alpha)?)
}

/// `x` rounded to six significant digits, in fixed notation.
pub fn six_significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn run_geodesic(args: &GeodesicArgs) -> Result<String> {
    let alpha = parse_angle(&args.alpha)?;
    let theta = parse_angle(&args.theta)?;
    Ok(six_significant(geodesic(alpha, args.r1, args.r2, theta)?))
}
