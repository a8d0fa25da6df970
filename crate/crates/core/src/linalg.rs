use nalgebra::SymmetricEigen;

use crate::prelude::*;

/// Eigenpairs of a symmetric matrix, eigenvalues nonincreasing, each
/// eigenvector signed so its largest-magnitude entry (lowest index on ties)
/// is positive.
pub(crate) fn sorted_symmetric_eigen(a: Matrix) -> (Vec<f64>, Matrix) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap_or(core::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let mut values = Vec::with_capacity(n);
    let mut vectors = Matrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        let mut col = eig.eigenvectors.column(i).into_owned();
        fix_sign(&mut col);
        vectors.set_column(k, &col);
    }
    (values, vectors)
}

pub(crate) fn fix_sign(v: &mut Vector) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Unit directions of the columns; errors on any apex column.
pub(crate) fn unit_columns(data: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let mut sizes = Vec::with_capacity(data.ncols());
    let mut dirs = data.clone();
    for (j, mut col) in dirs.column_iter_mut().enumerate() {
        let r = col.norm();
        if !r.is_finite() {
            return Err(PncError::domain(format!("observation {j} has a non-finite coordinate")));
        }
        if r < crate::geometry::APEX_EPS {
            return Err(PncError::Apex { column: j, size: r });
        }
        col /= r;
        sizes.push(r);
    }
    Ok((sizes, dirs))
}

/// Normalised mean of the columns of a matrix of unit vectors, or `None` when
/// the mean vanishes.
pub(crate) fn mean_direction(dirs: &Matrix) -> Option<Vector> {
    let mean = dirs.column_mean();
    let n = mean.norm();
    if n > 1e-12 {
        Some(mean / n)
    } else {
        None
    }
}
