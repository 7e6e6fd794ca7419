//! Dense vector helpers and a matrix-free conjugate gradient solver.

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn scale(a: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= a;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Outcome of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` for a symmetric positive definite operator given only
/// through its action `apply(v, out)` (which overwrites `out` with `A v`).
///
/// Stops once `||b - A x|| <= tol`. Returns `NoConvergence` if the residual
/// is still above tolerance after `max_iters` iterations or the search
/// direction loses positive curvature.
pub fn conjugate_gradient<F>(
    mut apply: F,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = norm_sq(&r);

    for it in 0..max_iters {
        if rr.sqrt() <= tol {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                residual: rr.sqrt(),
            });
        }
        apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::NoConvergence {
                solver: "conjugate gradient",
                iterations: it,
                residual: rr.sqrt(),
            });
        }
        let step = rr / curvature;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        let rr_next = norm_sq(&r);
        let ratio = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + ratio * *pi;
        }
    }

    // The recursive residual drifts; confirm with a true residual.
    apply(&x, &mut ax);
    let true_res = b
        .iter()
        .zip(&ax)
        .map(|(bi, ai)| (bi - ai) * (bi - ai))
        .sum::<f64>()
        .sqrt();
    if true_res <= tol {
        Ok(CgOutcome {
            solution: x,
            iterations: max_iters,
            residual: true_res,
        })
    } else {
        Err(Error::NoConvergence {
            solver: "conjugate gradient",
            iterations: max_iters,
            residual: true_res,
        })
    }
}
