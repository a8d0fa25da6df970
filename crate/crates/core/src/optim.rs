//! Derivative-free minimisers used by the stage fits.

use crate::prelude::*;

/// Outcome of a minimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead with dimension-adaptive coefficients (Gao and Han, 2012).
///
/// The initial simplex is `x0` plus `steps[i]` along each coordinate. Stops
/// when the spread of simplex values drops below `tol` (plus a relative
/// allowance of `1e-12·|f_best|`), when the simplex collapses, or after
/// `max_iters` iterations.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], max_iters: usize, tol: f64) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");
    if n == 0 {
        let value = f(x0);
        return Minimum { x: Vec::new(), value, iterations: 0, converged: true };
    }
    let nf = n as f64;
    let (alpha, beta, gamma, delta) =
        if n >= 2 { (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf) } else { (1.0, 2.0, 0.5, 0.5) };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| sanitize(f(p))).collect();
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(core::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];
        let spread = values[worst] - values[best];
        if spread <= tol + 1e-12 * values[best].abs() || diameter(&simplex, best) <= 1e-15 {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= nf);

        along(&centroid, &simplex[worst], -alpha, &mut trial);
        let fr = sanitize(f(&trial));
        if fr < values[best] {
            along(&centroid, &simplex[worst], -beta, &mut trial2);
            let fe = sanitize(f(&trial2));
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        let (fc, accept) = if fr < values[worst] {
            along(&centroid, &simplex[worst], -alpha * gamma, &mut trial2);
            let fc = sanitize(f(&trial2));
            (fc, fc <= fr)
        } else {
            along(&centroid, &simplex[worst], gamma, &mut trial2);
            let fc = sanitize(f(&trial2));
            (fc, fc < values[worst])
        };
        if accept {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = fc;
            continue;
        }
        let anchor = simplex[best].clone();
        for i in 0..=n {
            if i == best {
                continue;
            }
            for (x, a) in simplex[i].iter_mut().zip(&anchor) {
                *x = a + delta * (*x - a);
            }
            values[i] = sanitize(f(&simplex[i]));
        }
    }

    let best =
        (0..=n).min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(core::cmp::Ordering::Equal)).unwrap_or(0);
    Minimum { x: simplex[best].clone(), value: values[best], iterations, converged }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// `out = c + t·(p − c)`
fn along(c: &[f64], p: &[f64], t: f64, out: &mut [f64]) {
    for ((o, ci), pi) in out.iter_mut().zip(c).zip(p) {
        *o = ci + t * (pi - ci);
    }
}

fn diameter(simplex: &[Vec<f64>], best: usize) -> f64 {
    let b = &simplex[best];
    let scale = 1.0 + b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    simplex.iter().map(|p| p.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))).fold(0.0f64, f64::max)
        / scale
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iters: usize) -> Minimum
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a).abs() > tol && iterations < max_iters {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let (x, value) = if fc <= fd { (c, fc) } else { (d, fd) };
    Minimum { x: vec![x], value, iterations, converged: (b - a).abs() <= tol }
}
