//! Reference methods: centred PCA, and nested spheres realised as PNC on
//! unit-size data.

use crate::linalg::sorted_symmetric_eigen;
use crate::prelude::*;
use crate::simulate::{add_ambient_noise, figure_regions, sample_cone_regions};
use crate::{
    backfit, fit, variance_explained, OptimizerConfig, PncModel, ReconstructionRequest, ResidualKind, ScoreMatrix,
};

/// Centred PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vector,
    /// Orthonormal, one retained direction per column.
    pub directions: Matrix,
    /// All eigenvalues of the sample covariance, nonincreasing, clamped at 0.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    /// `mean + V·scoresᵀ`, returned with one observation per column.
    pub fn reconstruct(&self, scores: &Matrix) -> Result<Matrix> {
        if scores.ncols() != self.directions.ncols() {
            return Err(PncError::DimensionMismatch {
                context: "PCA scores",
                expected: self.directions.ncols(),
                found: scores.ncols(),
            });
        }
        let mut out = &self.directions * scores.transpose();
        for mut c in out.column_iter_mut() {
            c += &self.mean;
        }
        Ok(out)
    }

    /// Share of total variance carried by the retained directions.
    pub fn explained(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total > 0.0 {
            self.eigenvalues.iter().take(self.directions.ncols()).sum::<f64>() / total
        } else {
            1.0
        }
    }
}

/// Fits centred PCA with `k` components; scores are `n × k`.
pub fn pca_fit_transform(data: &Matrix, k: usize) -> Result<(PcaModel, Matrix)> {
    let (dim, n) = data.shape();
    if n < 2 {
        return Err(PncError::param("PCA needs at least 2 observations"));
    }
    let kmax = dim.min(n - 1);
    if k < 1 || k > kmax {
        return Err(PncError::param(format!("k = {k} outside 1..={kmax}")));
    }
    let mean = data.column_mean();
    let mut centered = data.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let denom = (n - 1) as f64;
    let mut directions = Matrix::zeros(dim, k);
    let eigenvalues: Vec<f64>;
    if dim > n {
        let (vals, vecs) = sorted_symmetric_eigen(centered.transpose() * &centered);
        for i in 0..k {
            let l = vals[i].max(0.0);
            let mut v = &centered * vecs.column(i);
            if l > 0.0 {
                v /= v.norm();
            }
            crate::linalg::fix_sign(&mut v);
            directions.set_column(i, &v);
        }
        eigenvalues = vals.iter().map(|l| (l / denom).max(0.0)).collect();
    } else {
        let (vals, vecs) = sorted_symmetric_eigen(&centered * centered.transpose());
        directions.copy_from(&vecs.columns(0, k));
        eigenvalues = vals.iter().map(|l| (l / denom).max(0.0)).collect();
    }
    let scores = centered.transpose() * &directions;
    Ok((PcaModel { mean, directions, eigenvalues }, scores))
}

/// Each column scaled to unit size.
pub fn normalize_columns(data: &Matrix) -> Result<Matrix> {
    let (_, dirs) = crate::linalg::unit_columns(data)?;
    Ok(dirs)
}

/// Nested spheres: PNC on unit-size data. Returned sizes are all 1.
pub fn pns_fit(data: &Matrix, kind: ResidualKind, config: &OptimizerConfig) -> Result<(PncModel, ScoreMatrix)> {
    fit(&normalize_columns(data)?, kind, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Pnc,
    Pns,
    Pca,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pnc, Method::Pns, Method::Pca];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pnc => "PNC",
            Method::Pns => "PNS",
            Method::Pca => "PCA",
        }
    }
}

/// One method's reconstruction quality at a component count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub method: Method,
    pub components: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub mean_backfit_distance: f64,
    pub variance_explained: f64,
}

fn mean_distance(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.ncols();
    (0..n).map(|j| (a.column(j) - b.column(j)).norm()).sum::<f64>() / n as f64
}

/// Share of squared scores in the first `c` columns.
fn leading_share(scores: &ScoreMatrix, c: usize) -> f64 {
    match variance_explained(scores) {
        Ok(shares) => shares.iter().take(c).sum(),
        // All scores zero: nothing is left unexplained.
        Err(_) => 1.0,
    }
}

/// Reconstructs `data` from `components` components with each method.
///
/// For PNC and PNS the components are the size followed by score columns, so
/// `c` components keep `c − 1` score columns. PNS reconstructions are scaled
/// by the original sizes. PCA keeps its top `c` directions.
pub fn compare_methods(data: &Matrix, components: usize, config: &OptimizerConfig) -> Result<[(Method, f64, f64); 3]> {
    let dim = data.nrows();
    if components < 1 || components > dim {
        return Err(PncError::param(format!("components {components} outside 1..={dim}")));
    }
    let keep = components - 1;

    let (pnc, scores) = fit(data, ResidualKind::Riemannian, config)?;
    let recon = backfit(&ReconstructionRequest {
        model: &pnc,
        scores: scores.scores.clone(),
        sizes: scores.sizes.clone(),
        keep,
    })?;
    let pnc_row = (Method::Pnc, mean_distance(&recon, data), leading_share(&scores, keep));

    let (pns, pns_scores) = pns_fit(data, ResidualKind::Riemannian, config)?;
    let mut pns_recon = backfit(&ReconstructionRequest {
        model: &pns,
        scores: pns_scores.scores.clone(),
        sizes: pns_scores.sizes.clone(),
        keep,
    })?;
    for (j, mut c) in pns_recon.column_iter_mut().enumerate() {
        c *= data.column(j).norm();
    }
    let pns_row = (Method::Pns, mean_distance(&pns_recon, data), leading_share(&pns_scores, keep));

    let (pca, pca_scores) = pca_fit_transform(data, components.min(data.ncols() - 1))?;
    let pca_recon = pca.reconstruct(&pca_scores)?;
    let pca_row = (Method::Pca, mean_distance(&pca_recon, data), pca.explained());

    Ok([pnc_row, pns_row, pca_row])
}

/// Observations per region in the comparison design.
pub const COMPARISON_REGION_COUNT: usize = 50;

/// One replicate of the reconstruction comparison: the three cone regions at
/// `opening`, `N(0, σ²)` noise, and every method at `components`.
pub fn backfit_comparison(
    components: usize,
    sigma: f64,
    opening: f64,
    seed: u64,
    config: &OptimizerConfig,
) -> Result<Vec<ComparisonRow>> {
    let (clean, _) = sample_cone_regions(&figure_regions(opening, COMPARISON_REGION_COUNT), seed)?;
    let data = if sigma > 0.0 { add_ambient_noise(&clean, sigma, seed ^ 0x9e37_79b9_7f4a_7c15)? } else { clean };
    Ok(compare_methods(&data, components, config)?
        .into_iter()
        .map(|(method, dist, share)| ComparisonRow {
            method,
            components,
            alpha: opening,
            sigma,
            mean_backfit_distance: dist,
            variance_explained: share,
        })
        .collect())
}

/// Leave-one-out 1-nearest-neighbour error between classes `a` and `b`,
/// divided by the error expected when labels carry no information
/// (`2·p_a·p_b`). Near 0 for separated classes, near 1 for
/// indistinguishable ones. Points are the columns of `points`.
pub fn nearest_neighbor_confusion(points: &Matrix, labels: &[usize], a: usize, b: usize) -> Result<f64> {
    if labels.len() != points.ncols() {
        return Err(PncError::DimensionMismatch { context: "labels", expected: points.ncols(), found: labels.len() });
    }
    let idx: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == a || labels[j] == b).collect();
    let na = idx.iter().filter(|&&j| labels[j] == a).count();
    let nb = idx.len() - na;
    if na == 0 || nb == 0 {
        return Err(PncError::param(format!("classes {a} and {b} both need members")));
    }
    let mut errors = 0;
    for &i in &idx {
        let mut best = (f64::INFINITY, i);
        for &j in &idx {
            if j == i {
                continue;
            }
            let d = (points.column(i) - points.column(j)).norm_squared();
            if d < best.0 {
                best = (d, j);
            }
        }
        if labels[best.1] != labels[i] {
            errors += 1;
        }
    }
    let n = idx.len() as f64;
    let chance = 2.0 * (na as f64 / n) * (nb as f64 / n);
    Ok(errors as f64 / n / chance)
}
