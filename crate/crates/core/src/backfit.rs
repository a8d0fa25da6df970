//! Reconstruction of ambient data from scores, sizes and a fitted model.

use crate::geometry::Rotation;
use crate::prelude::*;
use crate::{PncModel, ResidualKind};

/// Scores to invert. Columns `keep..d` (the earliest stages) are treated as
/// zero.
#[derive(Debug, Clone)]
pub struct ReconstructionRequest<'a> {
    pub model: &'a PncModel,
    /// `n × d`, in the column order produced by [`crate::fit`].
    pub scores: Matrix,
    pub sizes: Vector,
    pub keep: usize,
}

/// `2·asin(ξ / 2r)`: the angle whose chordal residual at size `r` is `ξ`.
pub fn chordal_residual_adjust(xi: f64, size: f64) -> Result<f64> {
    if !(size > 0.0) {
        return Err(PncError::domain(format!("size must be positive, got {size}")));
    }
    let ratio = xi / (2.0 * size);
    if !(ratio.abs() <= 1.0) {
        return Err(PncError::domain(format!("chordal residual {xi} exceeds the diameter at size {size}")));
    }
    Ok(2.0 * ratio.asin())
}

/// Inverts every stage, returning `(d+1) × n` data.
pub fn backfit(req: &ReconstructionRequest<'_>) -> Result<Matrix> {
    let model = req.model;
    let d = model.reduced_dim();
    let n = req.scores.nrows();
    if req.scores.ncols() != d {
        return Err(PncError::DimensionMismatch { context: "score columns", expected: d, found: req.scores.ncols() });
    }
    if req.sizes.len() != n {
        return Err(PncError::DimensionMismatch { context: "sizes", expected: n, found: req.sizes.len() });
    }
    if req.keep > d {
        return Err(PncError::param(format!("keep {} exceeds the {d} score columns", req.keep)));
    }
    if let Some(j) = req.sizes.iter().position(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(PncError::param(format!("size of observation {j} must be positive, got {}", req.sizes[j])));
    }

    let stages = model.stages();
    let kind = model.residual_kind();
    let factors = model.scale_factors();
    let rotations: Vec<Rotation> = stages[..d - 1].iter().map(|s| Rotation::to_last_axis(&s.axis)).collect();
    let phi = model.reference_angle();
    let mut out = Matrix::zeros(d + 1, n);
    let mut increments = vec![0.0; d];
    for i in 0..n {
        let r = req.sizes[i];
        for (k, inc) in increments.iter_mut().enumerate() {
            let column = d - 1 - k;
            let score = if column < req.keep { req.scores[(i, column)] } else { 0.0 };
            let xi = if factors[k] == 0.0 { 0.0 } else { score / factors[k] };
            *inc = angle_increment(kind, xi, r)
                .map_err(|e| PncError::domain(format!("observation {i}, stage {}: {e}", k + 1)))?;
        }
        let beta = phi + increments[d - 1];
        let mut y = Vector::from_column_slice(&[r * beta.cos(), r * beta.sin()]);
        for k in (0..d - 1).rev() {
            let theta = stages[k].opening + increments[k];
            let (s, c) = theta.sin_cos();
            let mut z = Vector::zeros(y.len() + 1);
            for (zi, yi) in z.iter_mut().zip(y.iter()) {
                *zi = s * yi;
            }
            z[y.len()] = c * r;
            y = rotations[k].apply_transpose(&z);
        }
        out.set_column(i, &y);
    }
    Ok(out)
}

fn angle_increment(kind: ResidualKind, xi: f64, r: f64) -> Result<f64> {
    match kind {
        ResidualKind::Riemannian => Ok(xi / r),
        ResidualKind::Chordal => chordal_residual_adjust(xi, r),
    }
}

/// Backfit of all-zero scores at the mean size: a single `(d+1) × 1` column.
pub fn mean_size_and_shape(model: &PncModel, sizes: &[f64]) -> Result<Matrix> {
    if sizes.is_empty() {
        return Err(PncError::param("mean size-and-shape needs at least one size"));
    }
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let d = model.reduced_dim();
    backfit(&ReconstructionRequest {
        model,
        scores: Matrix::zeros(1, d),
        sizes: Vector::from_element(1, mean),
        keep: d,
    })
}

/// Configurations at a fixed size with score `column` (1-based) set to each
/// of `values` and every other score zero.
pub fn score_path(model: &PncModel, size: f64, column: usize, values: &[f64]) -> Result<Matrix> {
    let d = model.reduced_dim();
    if column < 1 || column > d {
        return Err(PncError::param(format!("score column {column} outside 1..={d}")));
    }
    let mut scores = Matrix::zeros(values.len(), d);
    for (i, v) in values.iter().enumerate() {
        scores[(i, column - 1)] = *v;
    }
    backfit(&ReconstructionRequest { model, scores, sizes: Vector::from_element(values.len(), size), keep: d })
}
