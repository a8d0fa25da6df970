//! Stagewise least-squares fitting of nested cones, scores and polar scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{angle_between, lower_direction, planar_angle, polar_about, unit_angle, Rotation};
use crate::linalg::{mean_direction, unit_columns};
use crate::optim::{golden_section, nelder_mead};
use crate::prelude::*;
use crate::{HyperconeStage, ResidualKind};

/// Openings of intermediate stages stay strictly below this; at `π/2` the
/// cones about `v` and `−v` coincide.
pub const MAX_OPENING: f64 = FRAC_PI_2 - 1e-6;

const FINAL_GRID: usize = 360;
const POLISH_ITERS: usize = 100;
const NEWTON_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Iteration cap for each simplex run.
    pub max_iters: usize,
    /// Absolute tolerance on the (size-normalised) stage objective.
    pub tol: f64,
    /// Extra simplex runs started from the best point so far.
    pub restarts: usize,
    /// Seeds the sign jitter of restart simplices.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-10, restarts: 1, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(PncError::param("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(PncError::param(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// How one stage's optimisation ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDiagnostics {
    /// Stage objective at the initial guess.
    pub initial_objective: f64,
    /// Stage objective at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A fitted sequence of nested cones.
#[derive(Debug, Clone, PartialEq)]
pub struct PncModel {
    ambient_dim: usize,
    stages: Vec<HyperconeStage>,
    residual_kind: ResidualKind,
    diagnostics: Vec<StageDiagnostics>,
    reference_angle: f64,
}

impl PncModel {
    /// Checks the nesting: stage `k` (1-based) has an axis of length
    /// `d + 2 − k`, and the last stage is a planar axis with opening zero.
    pub fn new(stages: Vec<HyperconeStage>, residual_kind: ResidualKind) -> Result<Self> {
        let Some(first) = stages.first() else {
            return Err(PncError::param("a model needs at least one stage"));
        };
        let ambient_dim = first.dim();
        if ambient_dim < 3 {
            return Err(PncError::param(format!("ambient dimension must be at least 3, got {ambient_dim}")));
        }
        let d = ambient_dim - 1;
        if stages.len() != d {
            return Err(PncError::DimensionMismatch { context: "model stages", expected: d, found: stages.len() });
        }
        for (k, s) in stages.iter().enumerate() {
            if s.dim() != ambient_dim - k {
                return Err(PncError::DimensionMismatch {
                    context: "stage axis length",
                    expected: ambient_dim - k,
                    found: s.dim(),
                });
            }
        }
        let last = &stages[d - 1];
        if last.opening != 0.0 {
            return Err(PncError::param(format!("the final stage must have opening 0, got {}", last.opening)));
        }
        let reference_angle = wrap_tau(last.axis[1].atan2(last.axis[0]));
        Ok(Self { ambient_dim, stages, residual_kind, diagnostics: Vec::new(), reference_angle })
    }

    pub fn with_diagnostics(mut self, diagnostics: Vec<StageDiagnostics>) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Number of stages and of score columns, `d`.
    pub fn reduced_dim(&self) -> usize {
        self.ambient_dim - 1
    }

    pub fn stages(&self) -> &[HyperconeStage] {
        &self.stages
    }

    pub fn residual_kind(&self) -> ResidualKind {
        self.residual_kind
    }

    /// Per-stage optimiser outcomes; empty for models built with [`PncModel::new`].
    pub fn diagnostics(&self) -> &[StageDiagnostics] {
        &self.diagnostics
    }

    /// Counterclockwise angle in `[0, 2π)` from `(1, 0)` to the final axis.
    pub fn reference_angle(&self) -> f64 {
        self.reference_angle
    }

    /// `∏_{i<k} sin α_i` for each stage `k`.
    pub fn scale_factors(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut f = 1.0;
        for s in &self.stages {
            out.push(f);
            f *= s.opening.sin();
        }
        out
    }

    /// Free parameters: `d(d+5)/2 − 1`.
    pub fn parameter_count(&self) -> usize {
        let d = self.reduced_dim();
        d * (d + 5) / 2 - 1
    }
}

/// Scores in reverse stage order: column 0 comes from the final stage and
/// column `d − 1` from stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// `n × d`, one row per observation.
    pub scores: Matrix,
    pub sizes: Vector,
    /// Indexed by stage, not by column.
    pub scale_factors: Vec<f64>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn components(&self) -> usize {
        self.scores.ncols()
    }

    /// Score column holding stage `k` (1-based).
    pub fn column_of_stage(&self, k: usize) -> usize {
        self.components() - k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarScores {
    pub sx: Vector,
    pub sy: Vector,
}

fn stage_loss(kind: ResidualKind, delta: f64) -> f64 {
    let g = kind.residual(delta, 1.0);
    g * g
}

/// `Σ ξ_i²` for the cone `(axis, opening)`.
pub fn stage_objective(data: &Matrix, axis: &Vector, opening: f64, kind: ResidualKind) -> Result<f64> {
    let m = data.nrows();
    if axis.len() != m {
        return Err(PncError::DimensionMismatch { context: "stage_objective", expected: m, found: axis.len() });
    }
    if m < 2 {
        return Err(PncError::param("stage data needs at least 2 rows"));
    }
    if m == 2 && opening != 0.0 {
        return Err(PncError::param("the planar stage has opening 0"));
    }
    if !(0.0..=FRAC_PI_2).contains(&opening) {
        return Err(PncError::domain(format!("opening {opening} outside [0, π/2]")));
    }
    let (sizes, dirs) = unit_columns(data)?;
    let weights: Vec<f64> = sizes.iter().map(|r| r * r).collect();
    Ok(weighted_objective(&dirs, &weights, axis, opening, kind))
}

fn weighted_objective(dirs: &Matrix, weights: &[f64], axis: &Vector, opening: f64, kind: ResidualKind) -> f64 {
    let axis = axis.as_slice();
    let mut total = 0.0;
    for (u, w) in dirs.as_slice().chunks_exact(dirs.nrows()).zip(weights) {
        total += w * stage_loss(kind, unit_angle(u, axis) - opening);
    }
    total
}

/// Fits one stage to the columns of `data`. Rows `m ≥ 3` give a cone
/// `(axis, opening)`; `m = 2` gives the planar axis with opening 0.
pub fn fit_stage(
    data: &Matrix,
    kind: ResidualKind,
    config: &OptimizerConfig,
) -> Result<(HyperconeStage, StageDiagnostics)> {
    config.validate()?;
    if data.ncols() < 2 {
        return Err(PncError::param(format!("need at least 2 observations, got {}", data.ncols())));
    }
    let (sizes, dirs) = unit_columns(data)?;
    match data.nrows() {
        0 | 1 => Err(PncError::param("stage data needs at least 2 rows")),
        2 => fit_planar(&dirs, &sizes, kind),
        _ => fit_cone(&dirs, &sizes, kind, config, 0),
    }
}

/// Objective of a cone stage in local coordinates: tangent coordinates of the
/// axis at a centre, plus a raw opening folded into `[0, MAX_OPENING]`.
struct ConeProblem<'a> {
    dirs: &'a Matrix,
    /// `r_i² / Σ r²`, so the objective does not depend on the data scale.
    weights: Vec<f64>,
    kind: ResidualKind,
}

impl ConeProblem<'_> {
    fn value(&self, axis: &Vector, opening: f64) -> f64 {
        weighted_objective(self.dirs, &self.weights, axis, opening, self.kind)
    }
}

/// Tangent chart of the unit sphere at `center`.
struct Chart {
    center: Vector,
    rot: Rotation,
}

impl Chart {
    fn new(center: Vector) -> Self {
        let rot = Rotation::to_last_axis(&center);
        Self { center, rot }
    }

    /// Exponential map of the tangent vector with coordinates `t`.
    fn point(&self, t: &[f64]) -> Vector {
        let m = self.center.len();
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.center.clone();
        }
        let mut local = Vector::zeros(m);
        for (i, x) in t.iter().enumerate() {
            local[i] = *x;
        }
        let tangent = self.rot.apply_transpose(&local);
        let v = &self.center * norm.cos() + tangent * (norm.sin() / norm);
        let n = v.norm();
        v / n
    }
}

/// Reflects `a` into `[0, MAX_OPENING]`.
fn fold_opening(a: f64) -> f64 {
    let period = 2.0 * MAX_OPENING;
    let y = a % period;
    let y = if y < 0.0 { y + period } else { y };
    if y > MAX_OPENING {
        period - y
    } else {
        y
    }
}

fn fit_cone(
    dirs: &Matrix,
    sizes: &[f64],
    kind: ResidualKind,
    config: &OptimizerConfig,
    stage_index: u64,
) -> Result<(HyperconeStage, StageDiagnostics)> {
    let m = dirs.nrows();
    let total: f64 = sizes.iter().map(|r| r * r).sum();
    let problem = ConeProblem { dirs, weights: sizes.iter().map(|r| r * r / total).collect(), kind };

    let first = dirs.column(0).into_owned();
    let center = mean_direction(dirs).unwrap_or_else(|| first.clone());
    let angles: Vec<f64> = dirs.column_iter().map(|c| angle_between(&c.into_owned(), &center)).collect();
    let spread = angles.iter().fold(0.0f64, |a, b| a.max(*b));
    if spread <= 1e-12 {
        let stage = HyperconeStage::new(first, 0.0)?;
        let objective = total * problem.value(&stage.axis, 0.0);
        let diag = StageDiagnostics { initial_objective: objective, objective, iterations: 0, converged: true };
        return Ok((stage, diag));
    }
    let opening0 = (angles.iter().sum::<f64>() / angles.len() as f64).clamp(0.0, MAX_OPENING);
    let initial = problem.value(&center, opening0);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stage_index);
    let mut axis = center;
    let mut opening = opening0;
    let mut best = initial;
    let mut iterations = 0;
    let mut converged = false;
    for run in 0..=config.restarts {
        let chart = Chart::new(axis.clone());
        let mut steps = vec![0.1; m];
        if run > 0 {
            for s in steps.iter_mut() {
                if rng.random::<bool>() {
                    *s = -*s;
                }
            }
        }
        let mut x0 = vec![0.0; m];
        x0[m - 1] = opening;
        let result = nelder_mead(
            |x: &[f64]| problem.value(&chart.point(&x[..m - 1]), fold_opening(x[m - 1])),
            &x0,
            &steps,
            config.max_iters,
            config.tol,
        );
        iterations += result.iterations;
        converged = result.converged;
        if result.value <= best {
            best = result.value;
            axis = chart.point(&result.x[..m - 1]);
            opening = fold_opening(result.x[m - 1]);
        }
    }

    let (axis, opening, polish_iters) = polish_cone(&problem, axis, opening, best);
    iterations += polish_iters;
    let stage = HyperconeStage::new(axis, opening)?;
    let objective = total * problem.value(&stage.axis, stage.opening);
    let diag = StageDiagnostics { initial_objective: total * initial, objective, iterations, converged };
    Ok((stage, diag))
}

/// Gauss–Newton normal equations `(JᵀJ, Jᵀr)` of the residuals
/// `√w_i·g(θ_i − α)` in the tangent chart at `axis`, opening last.
fn normal_equations(problem: &ConeProblem<'_>, chart: &Chart, axis: &Vector, opening: f64) -> (Matrix, Vector) {
    let m = axis.len();
    let mut jtj = Matrix::zeros(m, m);
    let mut jtr = Vector::zeros(m);
    let mut row = Vector::zeros(m);
    for (j, w_j) in problem.weights.iter().enumerate() {
        let u = problem.dirs.column(j).into_owned();
        let (theta, w) = polar_about(&u, axis);
        let delta = theta - opening;
        let s = w_j.sqrt();
        let res = problem.kind.residual(delta, s);
        let slope = problem.kind.residual_slope(delta, s);
        let local = chart.rot.apply(&w);
        for i in 0..m - 1 {
            row[i] = -slope * local[i];
        }
        row[m - 1] = -slope;
        jtj.ger(1.0, &row, &row, 1.0);
        jtr.axpy(res, &row, 1.0);
    }
    (jtj, jtr)
}

/// Central-difference Hessian of the objective in chart coordinates at the
/// chart centre, opening last. Truncation and rounding errors are both near
/// 1e-8 relative, which is enough for Newton steps to reach the rounding
/// floor of the gradient.
fn objective_hessian(problem: &ConeProblem<'_>, chart: &Chart, opening: f64) -> Matrix {
    const H: f64 = 1e-4;
    let m = chart.center.len();
    let f = |t: &[f64]| problem.value(&chart.point(&t[..m - 1]), opening + t[m - 1]);
    let mut t = vec![0.0; m];
    let f0 = f(&t);
    let mut hess = Matrix::zeros(m, m);
    for i in 0..m {
        t[i] = H;
        let fp = f(&t);
        t[i] = -H;
        let fm = f(&t);
        t[i] = 0.0;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (H * H);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                t[i] = si * H;
                t[j] = sj * H;
                let v = f(&t);
                t[i] = 0.0;
                t[j] = 0.0;
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * H * H);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// `Jᵀr`, with the opening component dropped when the opening sits at a
/// bound and descent would push it further out; the flag reports that case.
fn projected_gradient(mut jtr: Vector, opening: f64) -> (Vector, bool) {
    let last = jtr.len() - 1;
    let held = (opening >= MAX_OPENING && jtr[last] < 0.0) || (opening <= 0.0 && jtr[last] > 0.0);
    if held {
        jtr[last] = 0.0;
    }
    (jtr, held)
}

fn step_from(chart: &Chart, opening: f64, step: &Vector) -> (Vector, f64) {
    let m = step.len();
    let t: Vec<f64> = step.rows(0, m - 1).iter().copied().collect();
    (chart.point(&t), (opening + step[m - 1]).clamp(0.0, MAX_OPENING))
}

/// Levenberg–Marquardt on the residuals `r_i·g(θ_i − α)`, accepting steps
/// that lower the objective, then Newton steps accepted while the gradient
/// shrinks. Near the minimum the objective is flat to rounding, so
/// only the gradient pins the parameters down to working precision; without
/// that the estimate would depend on the data scale through rounding.
fn polish_cone(problem: &ConeProblem<'_>, mut axis: Vector, mut opening: f64, mut value: f64) -> (Vector, f64, usize) {
    let m = axis.len();
    let mut lambda = 1e-6;
    let mut iters = 0;
    while iters < POLISH_ITERS {
        iters += 1;
        let chart = Chart::new(axis.clone());
        let (jtj, jtr) = normal_equations(problem, &chart, &axis, opening);
        if jtr.norm() == 0.0 {
            return (axis, opening, iters);
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for i in 0..m {
                a[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let (cand_axis, cand_opening) = step_from(&chart, opening, &step);
            let cand = problem.value(&cand_axis, cand_opening);
            if cand < value {
                axis = cand_axis;
                opening = cand_opening;
                value = cand;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let (_, jtr) = normal_equations(problem, &Chart::new(axis.clone()), &axis, opening);
    let (mut grad, mut held) = projected_gradient(jtr, opening);
    for _ in 0..NEWTON_STEPS {
        let g_norm = grad.norm();
        if g_norm == 0.0 {
            break;
        }
        iters += 1;
        let chart = Chart::new(axis.clone());
        let mut hess = objective_hessian(problem, &chart, opening);
        if held {
            // Opening held at its bound: Newton in the axis coordinates only.
            hess.row_mut(m - 1).fill(0.0);
            hess.column_mut(m - 1).fill(0.0);
            hess[(m - 1, m - 1)] = 1.0;
        }
        // Objective gradient is 2Jᵀr.
        let Some(step) = hess.lu().solve(&(-2.0 * &grad)) else {
            break;
        };
        let (cand_axis, cand_opening) = step_from(&chart, opening, &step);
        let (_, cand_jtr) = normal_equations(problem, &Chart::new(cand_axis.clone()), &cand_axis, cand_opening);
        let (cand_grad, cand_held) = projected_gradient(cand_jtr, cand_opening);
        let cand_value = problem.value(&cand_axis, cand_opening);
        // The value test only guards against leaving the basin.
        if !(cand_grad.norm() < g_norm) || cand_value > value * (1.0 + 1e-9) + 1e-300 {
            break;
        }
        axis = cand_axis;
        opening = cand_opening;
        value = cand_value.min(value);
        grad = cand_grad;
        held = cand_held;
    }
    (axis, opening, iters)
}

fn fit_planar(dirs: &Matrix, sizes: &[f64], kind: ResidualKind) -> Result<(HyperconeStage, StageDiagnostics)> {
    let weights: Vec<f64> = sizes.iter().map(|r| r * r).collect();
    let psi: Vec<f64> = dirs.column_iter().map(|c| c[1].atan2(c[0])).collect();
    let objective = |phi: f64| -> f64 {
        let (s, c) = phi.sin_cos();
        let mut total = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let u = dirs.column(j);
            let theta = (c * u[1] - s * u[0]).atan2(c * u[0] + s * u[1]);
            total += w * stage_loss(kind, theta);
        }
        total
    };
    let first = psi[0];
    let initial = objective(first);

    let mut phi;
    let mut iterations = FINAL_GRID;
    let mut converged = true;
    // Chordal loss is 2r²(1 − cos(ψ − φ)): minimised by the weighted resultant.
    let (sy, sx) = weights.iter().zip(&psi).fold((0.0, 0.0), |(a, b), (w, p)| (a + w * p.sin(), b + w * p.cos()));
    if kind == ResidualKind::Chordal && sx.hypot(sy) > 1e-12 * weights.iter().sum::<f64>() {
        phi = sy.atan2(sx);
        iterations = 1;
    } else {
        let step = TAU / FINAL_GRID as f64;
        let (mut best_phi, mut best) = (0.0, f64::INFINITY);
        for i in 0..FINAL_GRID {
            let p = i as f64 * step;
            let v = objective(p);
            if v < best {
                best = v;
                best_phi = p;
            }
        }
        let refined = golden_section(objective, best_phi - step, best_phi + step, 1e-13, 200);
        iterations += refined.iterations;
        converged = refined.converged;
        phi = if refined.value <= best { refined.x[0] } else { best_phi };
        let value = objective(phi);
        // Gauss–Newton steps: Q'(φ) = −2Σ r²·g·g' and Q''(φ) ≈ 2Σ r² away from
        // the cut. Accepted while |Q'| shrinks, which still moves φ once Q is
        // flat to rounding.
        let total: f64 = weights.iter().sum();
        let half_gradient = |phi: f64| -> f64 {
            let (s, c) = phi.sin_cos();
            let mut num = 0.0;
            for (j, w) in weights.iter().enumerate() {
                let u = dirs.column(j);
                let theta = (c * u[1] - s * u[0]).atan2(c * u[0] + s * u[1]);
                num += w * kind.residual(theta, 1.0) * kind.residual_slope(theta, 1.0);
            }
            num
        };
        let mut num = half_gradient(phi);
        for _ in 0..20 {
            if num == 0.0 {
                break;
            }
            let cand = phi + num / total;
            let cand_num = half_gradient(cand);
            iterations += 1;
            if cand_num.abs() < num.abs() && objective(cand) <= value * (1.0 + 1e-9) + 1e-300 {
                phi = cand;
                num = cand_num;
            } else {
                break;
            }
        }
    }
    phi = wrap_tau(phi);
    let axis = Vector::from_column_slice(&[phi.cos(), phi.sin()]);
    let value = objective(phi);
    let stage = HyperconeStage::new(axis, 0.0)?;
    let diag = StageDiagnostics { initial_objective: initial.max(value), objective: value, iterations, converged };
    Ok((stage, diag))
}

/// Residuals of one intermediate stage and the unit directions one
/// dimension down.
fn apply_cone(stage: &HyperconeStage, dirs: &Matrix, sizes: &[f64], kind: ResidualKind) -> Result<(Vec<f64>, Matrix)> {
    let m = dirs.nrows();
    let rot = Rotation::to_last_axis(&stage.axis);
    let mut residuals = Vec::with_capacity(dirs.ncols());
    let mut next = Matrix::zeros(m - 1, dirs.ncols());
    for (j, col) in dirs.column_iter().enumerate() {
        let u = col.into_owned();
        let (theta, w) = polar_about(&u, &stage.axis);
        residuals.push(kind.residual(theta - stage.opening, sizes[j]));
        let rw = rot.apply(&w);
        let low_norm = rw.rows(0, m - 1).norm();
        if (low_norm - 1.0).abs() > 1e-10 {
            return Err(PncError::Numerical(format!(
                "observation {j} changed size by a factor {low_norm} when mapped down"
            )));
        }
        next.set_column(j, &lower_direction(&rot, &w));
    }
    Ok((residuals, next))
}

fn apply_planar(axis: &Vector, dirs: &Matrix, sizes: &[f64], kind: ResidualKind) -> Vec<f64> {
    dirs.column_iter().enumerate().map(|(j, c)| kind.residual(planar_angle(&c.into_owned(), axis), sizes[j])).collect()
}

fn check_input(data: &Matrix, context: &'static str) -> Result<()> {
    if data.nrows() < 3 {
        return Err(PncError::param(format!(
            "{context} needs at least 3 coordinates per observation, got {}",
            data.nrows()
        )));
    }
    if data.ncols() < 1 {
        return Err(PncError::param(format!("{context} needs at least one observation")));
    }
    Ok(())
}

fn assemble(model_stages: &[HyperconeStage], residuals: &[Vec<f64>], sizes: Vec<f64>) -> ScoreMatrix {
    let d = model_stages.len();
    let n = sizes.len();
    let mut scale_factors = Vec::with_capacity(d);
    let mut f = 1.0;
    for s in model_stages {
        scale_factors.push(f);
        f *= s.opening.sin();
    }
    let mut scores = Matrix::zeros(n, d);
    for (k, res) in residuals.iter().enumerate() {
        let col = d - 1 - k;
        for (i, xi) in res.iter().enumerate() {
            scores[(i, col)] = scale_factors[k] * xi;
        }
    }
    ScoreMatrix { scores, sizes: Vector::from_vec(sizes), scale_factors }
}

/// Fits all `d` stages to `(d+1) × n` data and scores the training data.
pub fn fit(data: &Matrix, kind: ResidualKind, config: &OptimizerConfig) -> Result<(PncModel, ScoreMatrix)> {
    config.validate()?;
    check_input(data, "fit")?;
    if data.ncols() < 2 {
        return Err(PncError::param(format!("fit needs at least 2 observations, got {}", data.ncols())));
    }
    let (sizes, mut dirs) = unit_columns(data)?;
    let d = data.nrows() - 1;
    let mut stages = Vec::with_capacity(d);
    let mut diagnostics = Vec::with_capacity(d);
    let mut residuals = Vec::with_capacity(d);
    for k in 0..d - 1 {
        let (stage, diag) = fit_cone(&dirs, &sizes, kind, config, k as u64)?;
        let (res, next) = apply_cone(&stage, &dirs, &sizes, kind)?;
        residuals.push(res);
        stages.push(stage);
        diagnostics.push(diag);
        dirs = next;
    }
    let (stage, diag) = fit_planar(&dirs, &sizes, kind)?;
    residuals.push(apply_planar(&stage.axis, &dirs, &sizes, kind));
    stages.push(stage);
    diagnostics.push(diag);
    let scores = assemble(&stages, &residuals, sizes);
    let model = PncModel::new(stages, kind)?.with_diagnostics(diagnostics);
    Ok((model, scores))
}

fn run_stages(model: &PncModel, data: &Matrix) -> Result<(Vec<Vec<f64>>, Vec<f64>, Matrix)> {
    if data.nrows() != model.ambient_dim {
        return Err(PncError::DimensionMismatch {
            context: "model ambient dimension",
            expected: model.ambient_dim,
            found: data.nrows(),
        });
    }
    let (sizes, mut dirs) = unit_columns(data)?;
    let d = model.reduced_dim();
    let mut residuals = Vec::with_capacity(d);
    for stage in &model.stages[..d - 1] {
        let (res, next) = apply_cone(stage, &dirs, &sizes, model.residual_kind)?;
        residuals.push(res);
        dirs = next;
    }
    residuals.push(apply_planar(&model.stages[d - 1].axis, &dirs, &sizes, model.residual_kind));
    Ok((residuals, sizes, dirs))
}

/// Scores of new data under a fitted model.
pub fn transform(model: &PncModel, data: &Matrix) -> Result<ScoreMatrix> {
    let (residuals, sizes, _) = run_stages(model, data)?;
    Ok(assemble(&model.stages, &residuals, sizes))
}

/// The `2 × n` final-stage representation of the data: each observation
/// mapped down through every intermediate stage, at its original size.
pub fn reduce_to_plane(model: &PncModel, data: &Matrix) -> Result<Matrix> {
    let (_, sizes, mut dirs) = run_stages(model, data)?;
    for (mut col, r) in dirs.column_iter_mut().zip(&sizes) {
        col *= *r;
    }
    Ok(dirs)
}

/// `(r cos β, r sin β)` with `β` the counterclockwise angle from the final
/// axis to each column of the final-stage representation.
pub fn polar_scores(model: &PncModel, data_at_final_stage: &Matrix) -> Result<PolarScores> {
    if data_at_final_stage.nrows() != 2 {
        return Err(PncError::DimensionMismatch {
            context: "polar_scores",
            expected: 2,
            found: data_at_final_stage.nrows(),
        });
    }
    let (sizes, dirs) = unit_columns(data_at_final_stage)?;
    let axis = &model.stages[model.stages.len() - 1].axis;
    let n = sizes.len();
    let mut sx = Vector::zeros(n);
    let mut sy = Vector::zeros(n);
    for (j, c) in dirs.column_iter().enumerate() {
        let beta = wrap_tau(planar_angle(&c.into_owned(), axis));
        sx[j] = sizes[j] * beta.cos();
        sy[j] = sizes[j] * beta.sin();
    }
    Ok(PolarScores { sx, sy })
}

/// Share of the total squared score carried by each column.
pub fn variance_explained(scores: &ScoreMatrix) -> Result<Vec<f64>> {
    let per: Vec<f64> = scores.scores.column_iter().map(|c| c.norm_squared()).collect();
    let total: f64 = per.iter().sum();
    if !(total > 0.0) {
        return Err(PncError::domain("all scores are zero; variance shares are undefined"));
    }
    Ok(per.into_iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// Points on the cone `(e_3 rotated onto axis, alpha)` at the given
    /// sizes and base angles.
    fn cone_data(axis: &Vector, alpha: f64, sizes: &[f64], thetas: &[f64]) -> Matrix {
        let rot = Rotation::to_last_axis(axis);
        let mut out = Matrix::zeros(3, sizes.len());
        for (j, (r, t)) in sizes.iter().zip(thetas).enumerate() {
            let local = col(&[alpha.sin() * t.cos(), alpha.sin() * t.sin(), alpha.cos()]);
            out.set_column(j, &(rot.apply_transpose(&local) * *r));
        }
        out
    }

    #[test]
    fn objective_on_cone_is_zero() {
        let axis = col(&[0.0, 0.6, 0.8]);
        let x = cone_data(&axis, 0.5, &[1.0, 2.0, 3.0], &[0.1, 2.0, 4.0]);
        let q = stage_objective(&x, &axis, 0.5, ResidualKind::Riemannian).unwrap();
        assert!(q < 1e-28);
    }

    #[test]
    fn objective_at_unit_size_is_angular() {
        let x = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.6, 0.8]);
        let axis = col(&[0.0, 0.0, 1.0]);
        let alpha = 0.3;
        let expected = (FRAC_PI_2 - alpha).powi(2) + (0.8f64.acos() - alpha).powi(2);
        let q = stage_objective(&x, &axis, alpha, ResidualKind::Riemannian).unwrap();
        assert!((q - expected).abs() < 1e-14);
        let q3 = stage_objective(&(x * 3.0), &axis, alpha, ResidualKind::Riemannian).unwrap();
        assert!((q3 - 9.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn objective_names_apex_column() {
        let x = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let err = stage_objective(&x, &col(&[0.0, 0.0, 1.0]), 0.1, ResidualKind::Riemannian).unwrap_err();
        assert_eq!(err, PncError::Apex { column: 1, size: 0.0 });
    }

    #[test]
    fn noiseless_cone_is_recovered() {
        let axis = col(&[0.3, -0.4, 0.5]).normalize();
        let n = 40;
        let sizes: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let thetas: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
        let x = cone_data(&axis, 0.7, &sizes, &thetas);
        let (stage, diag) = fit_stage(&x, ResidualKind::Riemannian, &OptimizerConfig::default()).unwrap();
        assert!(angle_between(&stage.axis, &axis) < 1e-4);
        assert!((stage.opening - 0.7).abs() < 1e-4);
        assert!(diag.objective <= diag.initial_objective);
    }

    #[test]
    fn identical_points_give_zero_opening() {
        let v0 = col(&[1.0, 2.0, 2.0]) / 3.0;
        let x = Matrix::from_fn(3, 5, |i, _| v0[i] * 4.0);
        let (stage, _) = fit_stage(&x, ResidualKind::Riemannian, &OptimizerConfig::default()).unwrap();
        assert_eq!(stage.opening, 0.0);
        assert!((&stage.axis - &v0).norm() < 1e-15);
    }

    #[test]
    fn planar_stage_bisects_two_points() {
        let ray = 0.4;
        let t0 = 0.9;
        let x =
            Matrix::from_column_slice(2, 2, &[(ray + t0).cos(), (ray + t0).sin(), (ray - t0).cos(), (ray - t0).sin()])
                * 2.0;
        // Grid oracle over φ ∈ [0, 2π).
        let q = |phi: f64| {
            [ray + t0, ray - t0]
                .iter()
                .map(|p| {
                    let th = (p - phi).sin().atan2((p - phi).cos());
                    4.0 * th * th
                })
                .sum::<f64>()
        };
        let grid = (0..200_000).map(|i| TAU * i as f64 / 200_000.0);
        let best = grid.fold(f64::INFINITY, |b, p| b.min(q(p)));
        let (stage, _) = fit_stage(&x, ResidualKind::Riemannian, &OptimizerConfig::default()).unwrap();
        let phi = stage.axis[1].atan2(stage.axis[0]);
        assert!(q(phi) <= best + 1e-9);
        let bisect = (phi - ray).rem_euclid(PI);
        assert!(bisect.abs() < 1e-8 || (bisect - PI).abs() < 1e-8, "{phi}");
    }

    #[test]
    fn two_dimensional_reduction_has_six_parameters() {
        let axis = col(&[0.0, 0.0, 1.0]);
        let x = cone_data(&axis, 0.4, &[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 2.0, 3.0]);
        let (model, scores) = fit(&x, ResidualKind::Riemannian, &OptimizerConfig::default()).unwrap();
        assert_eq!(model.parameter_count(), 6);
        assert_eq!(scores.scale_factors[0], 1.0);
        assert_eq!(scores.scores.shape(), (4, 2));
    }

    #[test]
    fn transform_reproduces_fit_scores() {
        let x = Matrix::from_fn(4, 12, |i, j| 1.0 + ((i * 7 + j * 3) % 5) as f64 * 0.3 + (j as f64).sin());
        let (model, scores) = fit(&x, ResidualKind::Chordal, &OptimizerConfig::default()).unwrap();
        let again = transform(&model, &x).unwrap();
        assert_eq!(scores, again);
    }

    #[test]
    fn on_cone_point_has_zero_scores() {
        let x = Matrix::from_fn(4, 12, |i, j| 1.0 + ((i * 7 + j * 3) % 5) as f64 * 0.3 + (j as f64).cos());
        let (model, _) = fit(&x, ResidualKind::Riemannian, &OptimizerConfig::default()).unwrap();
        let req = crate::ReconstructionRequest {
            model: &model,
            scores: Matrix::zeros(1, 3),
            sizes: Vector::from_element(1, 2.5),
            keep: 3,
        };
        let mean = crate::backfit(&req).unwrap();
        let s = transform(&model, &mean).unwrap();
        assert!(s.scores.amax() < 1e-12, "{}", s.scores);
    }

    #[test]
    fn polar_scores_examples() {
        let model = PncModel::new(
            vec![
                HyperconeStage::new(col(&[0.0, 0.0, 1.0]), 0.5).unwrap(),
                HyperconeStage::new(col(&[0.0, 1.0]), 0.0).unwrap(),
            ],
            ResidualKind::Riemannian,
        )
        .unwrap();
        let delta: f64 = 1e-3;
        let plane = Matrix::from_column_slice(2, 3, &[0.0, 3.0, delta.sin(), delta.cos(), -delta.sin(), delta.cos()]);
        let p = polar_scores(&model, &plane).unwrap();
        assert!((p.sx[0] - 3.0).abs() < 1e-15 && p.sy[0].abs() < 1e-15);
        for j in 0..3 {
            let r = plane.column(j).norm();
            assert!((p.sx[j].hypot(p.sy[j]) - r).abs() < 1e-12);
        }
        let gap = (p.sx[1] - p.sx[2]).hypot(p.sy[1] - p.sy[2]);
        assert!(gap < 3.0 * delta);
    }

    #[test]
    fn variance_shares() {
        let mk =
            |m: Matrix| ScoreMatrix { sizes: Vector::zeros(m.nrows()), scale_factors: vec![1.0; m.ncols()], scores: m };
        let single = mk(Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, -2.0, 0.0, 0.0]));
        assert_eq!(variance_explained(&single).unwrap(), vec![1.0, 0.0, 0.0]);
        let equal = mk(Matrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]));
        assert_eq!(variance_explained(&equal).unwrap(), vec![0.25; 4]);
        assert!(variance_explained(&mk(Matrix::zeros(2, 2))).is_err());
    }

    #[test]
    fn model_rejects_bad_nesting() {
        let s = |xs: &[f64], a: f64| HyperconeStage::new(col(xs), a).unwrap();
        let kind = ResidualKind::Riemannian;
        assert!(PncModel::new(vec![s(&[0.0, 0.0, 1.0], 0.2), s(&[1.0, 0.0], 0.0)], kind).is_ok());
        assert!(PncModel::new(vec![s(&[0.0, 0.0, 1.0], 0.2), s(&[1.0, 0.0, 0.0], 0.0)], kind).is_err());
        assert!(PncModel::new(vec![s(&[0.0, 0.0, 1.0], 0.2), s(&[1.0, 0.0], 0.2)], kind).is_err());
        assert!(PncModel::new(vec![s(&[0.0, 0.0, 1.0], 0.2)], kind).is_err());
    }

    fn dataset(m: usize, n: usize, raw: &[f64]) -> Matrix {
        Matrix::from_fn(m, n, |i, j| raw[(i * n + j) % raw.len()] + if i == m - 1 { 3.0 } else { 0.0 })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fit_is_scale_invariant(m in 3usize..=5, raw in prop::collection::vec(-1.0f64..1.0, 60),
                                  c in prop::sample::select(vec![0.1, 3.0, 100.0])) {
            let x = dataset(m, 15, &raw);
            let cfg = OptimizerConfig::default();
            let (a, sa) = fit(&x, ResidualKind::Riemannian, &cfg).unwrap();
            let (b, sb) = fit(&(&x * c), ResidualKind::Riemannian, &cfg).unwrap();
            for (p, q) in a.stages().iter().zip(b.stages()) {
                prop_assert!((&p.axis - &q.axis).norm() < 1e-9, "axis {} opening {} vs {}", (&p.axis - &q.axis).norm(), p.opening, q.opening);
                prop_assert!((p.opening - q.opening).abs() < 1e-9);
            }
            prop_assert!((sb.scores - sa.scores * c).amax() <= 1e-9 * c * sa.sizes.amax());
        }

        #[test]
        fn stage_objective_never_increases(m in 3usize..=6, raw in prop::collection::vec(-1.0f64..1.0, 60)) {
            let x = dataset(m, 12, &raw);
            let (model, _) = fit(&x, ResidualKind::Chordal, &OptimizerConfig::default()).unwrap();
            for d in model.diagnostics() {
                prop_assert!(d.objective <= d.initial_objective);
            }
        }

        #[test]
        fn score_signs_follow_residual_signs(raw in prop::collection::vec(-1.0f64..1.0, 60)) {
            let x = dataset(4, 15, &raw);
            let (model, scores) = fit(&x, ResidualKind::Riemannian, &OptimizerConfig::default()).unwrap();
            let stage = &model.stages()[0];
            for j in 0..x.ncols() {
                let p = crate::ConePoint::new(x.column(j).into_owned()).unwrap();
                let r = crate::geometry::residual(&p, stage, ResidualKind::Riemannian).unwrap();
                let s = scores.scores[(j, 2)];
                prop_assert!(r * s >= 0.0);
                prop_assert!((r - s).abs() <= 1e-12 * (1.0 + r.abs()));
            }
        }
    }
}
