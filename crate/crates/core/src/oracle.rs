//! Exact reference computations: `y*(x)`, `z*(x)`, `grad H(x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, conjugate_gradient};
use crate::model::BilevelProblem;
use crate::solver::StationarityProbe;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Target `||grad_y g(x, y*)||`.
    pub ll_tol: f64,
    /// Target `||hess_yy g z* - grad_y f||`.
    pub lin_tol: f64,
    pub max_iters: usize,
    /// Finite-difference step; `None` uses `eps^(1/3) (1 + ||x||)`.
    pub fd_step: Option<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            ll_tol: 1e-10,
            lin_tol: 1e-10,
            max_iters: 100_000,
            fd_step: None,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ll_tol > 0.0 && self.lin_tol > 0.0) {
            return Err(invalid("oracle tolerances must be positive"));
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0) {
                return Err(invalid("finite-difference step must be positive"));
            }
        }
        Ok(())
    }
}

fn lower_grad<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; p.dim_y()];
    let w = 1.0 / p.m() as f64;
    for j in 0..p.m() {
        p.grad2_g(j, x, y, w, &mut g);
    }
    g
}

fn lower_hvp<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], y: &[f64], v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let w = 1.0 / p.m() as f64;
    for j in 0..p.m() {
        p.hvp22_g(j, x, y, v, w, out);
    }
}

/// Dense averaged lower-level Hessian, assembled column by column.
pub fn lower_hessian<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], y: &[f64]) -> DMatrix<f64> {
    let d = p.dim_y();
    let mut h = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    let mut col = vec![0.0; d];
    for k in 0..d {
        e[k] = 1.0;
        lower_hvp(p, x, y, &e, &mut col);
        e[k] = 0.0;
        for r in 0..d {
            h[(r, k)] = col[r];
        }
    }
    // Symmetrise away rounding.
    (&h + h.transpose()) * 0.5
}

/// `y*(x)` from a zero start.
pub fn solve_lower<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], cfg: &OracleConfig) -> Result<Vec<f64>> {
    solve_lower_from(p, x, &vec![0.0; p.dim_y()], cfg)
}

pub fn solve_lower_from<P: BilevelProblem + ?Sized>(
    p: &P,
    x: &[f64],
    y0: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.len() != p.dim_x() || y0.len() != p.dim_y() {
        return Err(invalid("dimension mismatch in lower-level solve"));
    }
    let mut y = y0.to_vec();
    if p.lower_is_quadratic() {
        let h = lower_hessian(p, x, &y);
        let chol = h
            .cholesky()
            .ok_or_else(|| invalid("lower-level Hessian is not positive definite"))?;
        // Newton steps are exact for a quadratic; repeat to refine rounding.
        for _ in 0..4 {
            let g = lower_grad(p, x, &y);
            if linalg::norm(&g) <= cfg.ll_tol {
                return Ok(y);
            }
            let dy = chol.solve(&DVector::from_vec(g));
            linalg::axpy(-1.0, dy.as_slice(), &mut y);
        }
        let res = linalg::norm(&lower_grad(p, x, &y));
        if res <= cfg.ll_tol {
            return Ok(y);
        }
        return Err(Error::NoConvergence {
            solver: "lower-level direct solve",
            iterations: 4,
            residual: res,
        });
    }
    let (mu, l) = p.lower_curvature(x);
    let step = 2.0 / (mu + l);
    let mut res = f64::INFINITY;
    for it in 0..cfg.max_iters {
        let g = lower_grad(p, x, &y);
        res = linalg::norm(&g);
        if res <= cfg.ll_tol {
            return Ok(y);
        }
        if !res.is_finite() {
            return Err(Error::NoConvergence {
                solver: "lower-level gradient descent",
                iterations: it,
                residual: res,
            });
        }
        linalg::axpy(-step, &g, &mut y);
    }
    Err(Error::NoConvergence {
        solver: "lower-level gradient descent",
        iterations: cfg.max_iters,
        residual: res,
    })
}

/// `z*(x) = [hess_yy g(x, y)]^{-1} grad_y f(x, y)` by conjugate gradient.
pub fn solve_implicit<P: BilevelProblem + ?Sized>(
    p: &P,
    x: &[f64],
    y: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut b = vec![0.0; p.dim_y()];
    let w = 1.0 / p.n() as f64;
    for i in 0..p.n() {
        p.grad2_f(i, x, y, w, &mut b);
    }
    let out = conjugate_gradient(
        |v, out| lower_hvp(p, x, y, v, out),
        &b,
        None,
        cfg.lin_tol,
        cfg.max_iters.min(50 * p.dim_y() + 100),
    )?;
    Ok(out.solution)
}

/// Hypergradient together with the solves that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPoint {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub grad: Vec<f64>,
}

pub fn hyper_point<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], cfg: &OracleConfig) -> Result<HyperPoint> {
    let y = solve_lower(p, x, cfg)?;
    let z = solve_implicit(p, x, &y, cfg)?;
    let mut grad = vec![0.0; p.dim_x()];
    let wf = 1.0 / p.n() as f64;
    for i in 0..p.n() {
        p.grad1_f(i, x, &y, wf, &mut grad);
    }
    let wg = -1.0 / p.m() as f64;
    for j in 0..p.m() {
        p.jvp12_g(j, x, &y, &z, wg, &mut grad);
    }
    Ok(HyperPoint { y, z, grad })
}

pub fn hypergradient<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], cfg: &OracleConfig) -> Result<Vec<f64>> {
    Ok(hyper_point(p, x, cfg)?.grad)
}

/// `||grad H(x)||^2`
pub fn stationarity_metric<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], cfg: &OracleConfig) -> Result<f64> {
    Ok(linalg::norm_sq(&hypergradient(p, x, cfg)?))
}

/// `H(x) = f(x, y*(x))`
pub fn hyper_objective<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], cfg: &OracleConfig) -> Result<f64> {
    let y = solve_lower(p, x, cfg)?;
    Ok(p.upper_value(x, &y))
}

/// Central finite differences of `H`.
pub fn fd_hypergradient<P: BilevelProblem + ?Sized>(p: &P, x: &[f64], cfg: &OracleConfig) -> Result<Vec<f64>> {
    let h = cfg
        .fd_step
        .unwrap_or_else(|| f64::EPSILON.cbrt() * (1.0 + linalg::norm(x)));
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let up = hyper_objective(p, &xp, cfg)?;
        xp[k] = x[k] - h;
        let down = hyper_objective(p, &xp, cfg)?;
        xp[k] = x[k];
        g[k] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// Stationarity probe backed by the exact oracle.
pub struct OracleProbe<'a, P: ?Sized> {
    pub problem: &'a P,
    pub config: OracleConfig,
}

impl<P: BilevelProblem + ?Sized> StationarityProbe for OracleProbe<'_, P> {
    fn grad_h_sq(&self, x: &[f64]) -> Result<f64> {
        stationarity_metric(self.problem, x, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy::ScalarToy;

    /// `ScalarToy` without the quadratic flag, to exercise gradient descent.
    struct IterativeToy;

    impl BilevelProblem for IterativeToy {
        fn n(&self) -> usize {
            1
        }
        fn m(&self) -> usize {
            1
        }
        fn dim_x(&self) -> usize {
            1
        }
        fn dim_y(&self) -> usize {
            1
        }
        fn grad1_f(&self, i: usize, x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            ScalarToy.grad1_f(i, x, y, s, out)
        }
        fn grad2_f(&self, i: usize, x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            ScalarToy.grad2_f(i, x, y, s, out)
        }
        fn grad2_g(&self, j: usize, x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            ScalarToy.grad2_g(j, x, y, s, out)
        }
        fn hvp22_g(&self, j: usize, x: &[f64], y: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
            ScalarToy.hvp22_g(j, x, y, v, s, out)
        }
        fn jvp12_g(&self, j: usize, x: &[f64], y: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
            ScalarToy.jvp12_g(j, x, y, v, s, out)
        }
        fn value_f(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
            ScalarToy.value_f(i, x, y)
        }
        fn value_g(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
            ScalarToy.value_g(j, x, y)
        }
        fn lower_curvature(&self, _: &[f64]) -> (f64, f64) {
            (1.0, 1.0)
        }
    }

    #[test]
    fn scalar_toy_closed_forms() {
        let cfg = OracleConfig::default();
        for x in [-2.0, 0.0, 0.7, 3.0] {
            assert_eq!(solve_lower(&ScalarToy, &[x], &cfg).unwrap(), vec![x]);
            assert!((solve_lower(&IterativeToy, &[x], &cfg).unwrap()[0] - x).abs() < 1e-14);
            assert!((solve_implicit(&ScalarToy, &[x], &[x], &cfg).unwrap()[0] - x).abs() < 1e-14);
            let g = hypergradient(&ScalarToy, &[x], &cfg).unwrap();
            assert!((g[0] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn stationarity_examples() {
        let cfg = OracleConfig::default();
        assert_eq!(stationarity_metric(&ScalarToy, &[0.0], &cfg).unwrap(), 0.0);
        let a = stationarity_metric(&ScalarToy, &[1.5], &cfg).unwrap();
        let b = stationarity_metric(&ScalarToy, &[3.0], &cfg).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_matches_on_toy() {
        let cfg = OracleConfig::default();
        let fd = fd_hypergradient(&IterativeToy, &[1.3], &cfg).unwrap();
        assert!((fd[0] - 1.3).abs() < 1e-8);
    }

    #[test]
    fn iteration_budget_reports_residual() {
        let cfg = OracleConfig {
            max_iters: 0,
            ..Default::default()
        };
        let err = solve_lower(&IterativeToy, &[1.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }
}
