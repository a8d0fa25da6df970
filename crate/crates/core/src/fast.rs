//! Fast PNC: a size-preserving tangent PCA down to `p + 1` coordinates,
//! followed by an ordinary fit.

use crate::geometry::{unit_angle, Rotation};
use crate::linalg::{fix_sign, mean_direction, sorted_symmetric_eigen, unit_columns};
use crate::prelude::*;
use crate::{backfit, fit, OptimizerConfig, PncModel, ReconstructionRequest, ResidualKind, ScoreMatrix};

/// Eigenvalues below this fraction of the largest are treated as null.
pub const NULL_EIGEN_RATIO: f64 = 1e-12;
/// Eigenvalues below this fraction of the total squared size are null too:
/// tangent parts that small are rounding noise.
const NULL_EIGEN_FLOOR: f64 = 1e-24;

/// Orthonormal frame `(x̄, V)` of the reduced representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    mean_direction: Vector,
    directions: Matrix,
    rank: usize,
}

impl PcaTransform {
    /// Checks that `(mean_direction, directions)` is an orthonormal frame.
    pub fn new(mean_direction: Vector, directions: Matrix) -> Result<Self> {
        let dim = mean_direction.len();
        if directions.nrows() != dim {
            return Err(PncError::DimensionMismatch {
                context: "principal directions",
                expected: dim,
                found: directions.nrows(),
            });
        }
        let p = directions.ncols();
        if p < 1 || p >= dim {
            return Err(PncError::param(format!("need 1 ≤ p < {dim}, got {p}")));
        }
        let mut frame = Matrix::zeros(dim, p + 1);
        frame.set_column(0, &mean_direction);
        frame.columns_mut(1, p).copy_from(&directions);
        let gram = frame.transpose() * &frame;
        if (gram - Matrix::identity(p + 1, p + 1)).amax() > 1e-10 {
            return Err(PncError::param("mean direction and principal directions are not orthonormal"));
        }
        Ok(Self { mean_direction, directions, rank: p })
    }

    pub fn mean_direction(&self) -> &Vector {
        &self.mean_direction
    }

    /// `(d+1) × p`, one principal direction per column.
    pub fn directions(&self) -> &Matrix {
        &self.directions
    }

    /// Retained component count.
    pub fn p(&self) -> usize {
        self.directions.ncols()
    }

    /// Number of retained components with non-null variance. Any further
    /// directions complete the frame deterministically and carry zero
    /// scores up to rounding.
    pub fn rank(&self) -> usize {
        self.rank
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastPncModel {
    pub pca: PcaTransform,
    pub inner: PncModel,
}

/// Largest usable `p` for `(d+1) × n` data: `min(d, n − 1)`. The tangent
/// space at the mean direction has dimension `d`, and the weighted tangent
/// vectors sum to zero, so their span has dimension at most `n − 1`.
pub fn p_max(data: &Matrix) -> usize {
    (data.nrows().saturating_sub(1)).min(data.ncols().saturating_sub(1))
}

pub fn pca_transform(data: &Matrix, p: usize) -> Result<(PcaTransform, Matrix)> {
    let pm = p_max(data);
    if p < 1 || p > pm {
        return Err(PncError::param(format!("p = {p} outside 1..={pm} (p_max = {pm})")));
    }
    let (sizes, dirs) = unit_columns(data)?;
    let mean =
        mean_direction(&dirs).ok_or_else(|| PncError::Degenerate("the unit directions average to zero".into()))?;
    let dim = data.nrows();
    let n = data.ncols();

    let mut unit_tangents = Matrix::zeros(dim, n);
    let mut tangents = Matrix::zeros(dim, n);
    let mut rho = Vec::with_capacity(n);
    for j in 0..n {
        let u = dirs.column(j);
        let t = u - &mean * mean.dot(&u);
        rho.push(unit_angle(u.as_slice(), mean.as_slice()));
        tangents.set_column(j, &(&t * sizes[j]));
        let tn = t.norm();
        if tn > 0.0 {
            unit_tangents.set_column(j, &(t / tn));
        }
    }

    let floor = NULL_EIGEN_FLOOR * sizes.iter().map(|r| r * r).sum::<f64>();
    let (directions, rank) = principal_directions(&tangents, &mean, p, floor);
    let mut reduced = Matrix::zeros(p + 1, n);
    for j in 0..n {
        let r = sizes[j];
        let q = directions.transpose() * unit_tangents.column(j) * (rho[j] * r);
        let qn = q.norm();
        reduced[(0, j)] = r * (qn / r).cos();
        if qn > 0.0 {
            let s = (qn / r).sin() * r / qn;
            for i in 0..p {
                reduced[(i + 1, j)] = s * q[i];
            }
        }
    }
    Ok((PcaTransform { mean_direction: mean, directions, rank }, reduced))
}

/// Top `p` uncentred principal directions of the tangent vectors, completed
/// with fixed directions when fewer than `p` have non-null variance.
fn principal_directions(tangents: &Matrix, mean: &Vector, p: usize, floor: f64) -> (Matrix, usize) {
    let (dim, n) = tangents.shape();
    let mut kept: Vec<Vector> = Vec::with_capacity(p);
    if dim > n {
        let (vals, vecs) = sorted_symmetric_eigen(tangents.transpose() * tangents);
        let top = vals.first().copied().unwrap_or(0.0);
        for (k, &l) in vals.iter().enumerate().take(p) {
            if !(l > NULL_EIGEN_RATIO * top) || !(l > floor) {
                break;
            }
            let mut v = tangents * vecs.column(k) / l.sqrt();
            v /= v.norm();
            fix_sign(&mut v);
            kept.push(v);
        }
    } else {
        let (vals, vecs) = sorted_symmetric_eigen(tangents * tangents.transpose());
        let top = vals.first().copied().unwrap_or(0.0);
        for (k, &l) in vals.iter().enumerate().take(p) {
            if !(l > NULL_EIGEN_RATIO * top) || !(l > floor) {
                break;
            }
            kept.push(vecs.column(k).into_owned());
        }
    }
    // Re-orthogonalise against the mean direction and each other; rounding in
    // the eigensolver leaves components of order 1e-16.
    let mut frame: Vec<Vector> = vec![mean.clone()];
    let rank = kept.len();
    for v in kept {
        frame.push(orthonormalize(v, &frame).expect("non-null direction"));
    }
    let rot = Rotation::to_last_axis(mean);
    let mut i = 0;
    while frame.len() < p + 1 && i < dim {
        let mut e = Vector::zeros(dim);
        e[i] = 1.0;
        if let Some(mut v) = orthonormalize(rot.apply_transpose(&e), &frame) {
            fix_sign(&mut v);
            frame.push(v);
        }
        i += 1;
    }
    let mut out = Matrix::zeros(dim, p);
    for (k, v) in frame.iter().skip(1).enumerate() {
        out.set_column(k, v);
    }
    (out, rank)
}

fn orthonormalize(mut v: Vector, frame: &[Vector]) -> Option<Vector> {
    for _ in 0..2 {
        for f in frame {
            let c = f.dot(&v);
            v.axpy(-c, f, 1.0);
        }
    }
    let n = v.norm();
    if n > 1e-6 {
        Some(v / n)
    } else {
        None
    }
}

/// `x̄·g₁ + Σ V_j·g_{j+1}` for each column `g` of `reduced`.
pub fn pca_inverse(pca: &PcaTransform, reduced: &Matrix) -> Result<Matrix> {
    let p = pca.p();
    if reduced.nrows() != p + 1 {
        return Err(PncError::DimensionMismatch { context: "pca_inverse", expected: p + 1, found: reduced.nrows() });
    }
    let mut out = &pca.mean_direction * reduced.row(0);
    out.gemm(1.0, &pca.directions, &reduced.rows(1, p), 1.0);
    Ok(out)
}

pub fn fast_fit(
    data: &Matrix,
    p: usize,
    kind: ResidualKind,
    config: &OptimizerConfig,
) -> Result<(FastPncModel, ScoreMatrix)> {
    if p < 2 {
        return Err(PncError::param(format!("fast fits need p ≥ 2, got {p}")));
    }
    let (pca, reduced) = pca_transform(data, p)?;
    let (inner, scores) = fit(&reduced, kind, config)?;
    Ok((FastPncModel { pca, inner }, scores))
}

/// Inverts the inner model, then the PCA transform. `req.model` must be
/// `model.inner` (or an equally shaped model).
pub fn fast_backfit(model: &FastPncModel, req: &ReconstructionRequest<'_>) -> Result<Matrix> {
    if req.model.ambient_dim() != model.pca.p() + 1 {
        return Err(PncError::DimensionMismatch {
            context: "fast_backfit inner model",
            expected: model.pca.p() + 1,
            found: req.model.ambient_dim(),
        });
    }
    pca_inverse(&model.pca, &backfit(req)?)
}
