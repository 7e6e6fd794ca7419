//! Bilevel problem abstraction and the three decoupled update directions.
//!
//! A problem is a pair of finite sums
//! `f(x, y) = (1/n) sum_i F_i(x, y)` (upper level) and
//! `g(x, y) = (1/m) sum_j G_j(x, y)` (lower level), exposed through
//! per-sample first-order oracles and Hessian/Jacobian-vector products.
//! All accessors accumulate `scale * value` into `out` so that minibatch
//! means can be formed without temporaries.

use crate::error::{invalid, Result};
use crate::linalg;

/// Per-sample oracle of a finite-sum bilevel problem.
///
/// Implementations must be safe to share read-only across threads.
pub trait BilevelProblem: Send + Sync {
    /// Number of upper-level components `F_i`.
    fn n(&self) -> usize;
    /// Number of lower-level components `G_j`.
    fn m(&self) -> usize;
    fn dim_x(&self) -> usize;
    /// Dimension of the lower-level variable (and of the implicit variable).
    fn dim_y(&self) -> usize;

    /// `out += scale * grad_x F_i(x, y)`
    fn grad1_f(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]);
    /// `out += scale * grad_y F_i(x, y)`
    fn grad2_f(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]);
    /// `out += scale * grad_y G_j(x, y)`
    fn grad2_g(&self, j: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]);
    /// `out += scale * hess_yy G_j(x, y) v`
    fn hvp22_g(&self, j: usize, x: &[f64], y: &[f64], v: &[f64], scale: f64, out: &mut [f64]);
    /// `out += scale * hess_xy G_j(x, y) v` (a vector in the x-space)
    fn jvp12_g(&self, j: usize, x: &[f64], y: &[f64], v: &[f64], scale: f64, out: &mut [f64]);

    fn value_f(&self, i: usize, x: &[f64], y: &[f64]) -> f64;
    fn value_g(&self, j: usize, x: &[f64], y: &[f64]) -> f64;

    /// Bounds `(mu, L)` on the spectrum of the averaged lower-level Hessian
    /// `hess_yy g(x, .)`, valid for every `y`.
    fn lower_curvature(&self, x: &[f64]) -> (f64, f64);

    /// True when `g(x, .)` is quadratic, which lets the oracle replace
    /// gradient descent by a direct linear solve.
    fn lower_is_quadratic(&self) -> bool {
        false
    }

    /// Declared smoothness constants, when the problem knows them.
    fn smoothness(&self) -> Option<crate::theory::SmoothnessParams> {
        None
    }

    /// Task-specific evaluation metric (e.g. test error); `None` if the
    /// problem has none.
    fn test_metric(&self, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// Full-batch upper objective `f(x, y)`.
    fn upper_value(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.n();
        (0..n).map(|i| self.value_f(i, x, y)).sum::<f64>() / n as f64
    }

    /// Full-batch lower objective `g(x, y)`.
    fn lower_value(&self, x: &[f64], y: &[f64]) -> f64 {
        let m = self.m();
        (0..m).map(|j| self.value_g(j, x, y)).sum::<f64>() / m as f64
    }
}

/// The joint state `(x, y, z)` of the single-loop method.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Iterate {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if y.len() != z.len() {
            return Err(invalid("y and z must share a dimension"));
        }
        let it = Self { x, y, z };
        if !it.is_finite() {
            return Err(invalid("iterate has non-finite entries"));
        }
        Ok(it)
    }

    pub fn zeros<P: BilevelProblem + ?Sized>(problem: &P) -> Self {
        Self {
            x: vec![0.0; problem.dim_x()],
            y: vec![0.0; problem.dim_y()],
            z: vec![0.0; problem.dim_y()],
        }
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.x) && linalg::all_finite(&self.y) && linalg::all_finite(&self.z)
    }

    pub fn check_dims<P: BilevelProblem + ?Sized>(&self, problem: &P) -> Result<()> {
        if self.x.len() != problem.dim_x()
            || self.y.len() != problem.dim_y()
            || self.z.len() != problem.dim_y()
        {
            return Err(invalid(format!(
                "iterate dims ({}, {}, {}) do not match problem ({}, {})",
                self.x.len(),
                self.y.len(),
                self.z.len(),
                problem.dim_x(),
                problem.dim_y()
            )));
        }
        Ok(())
    }
}

/// Index sets `I` (upper level) and `J` (lower level) drawn at one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleDraw {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
}

impl SampleDraw {
    pub fn new(upper: Vec<usize>, lower: Vec<usize>) -> Self {
        Self { upper, lower }
    }

    /// `I = [n]`, `J = [m]`.
    pub fn full(n: usize, m: usize) -> Self {
        Self {
            upper: (0..n).collect(),
            lower: (0..m).collect(),
        }
    }

    /// Checks that both sets are non-empty, in range and duplicate-free.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        check_index_set(&self.upper, n, "I")?;
        check_index_set(&self.lower, m, "J")
    }
}

fn check_index_set(set: &[usize], bound: usize, name: &str) -> Result<()> {
    if set.is_empty() {
        return Err(invalid(format!("index set {name} is empty")));
    }
    let mut seen = vec![false; bound];
    for &i in set {
        if i >= bound {
            return Err(invalid(format!("index {i} in {name} out of range 0..{bound}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(invalid(format!("index {i} repeated in {name}")));
        }
    }
    Ok(())
}

/// `(1/|I|) sum_I grad_x F_i - (1/|J|) sum_J hess_xy G_j z`
pub fn direction_x<P: BilevelProblem + ?Sized>(
    problem: &P,
    it: &Iterate,
    upper: &[usize],
    lower: &[usize],
) -> Result<Vec<f64>> {
    it.check_dims(problem)?;
    check_index_set(upper, problem.n(), "I")?;
    check_index_set(lower, problem.m(), "J")?;
    let mut out = vec![0.0; problem.dim_x()];
    let wf = 1.0 / upper.len() as f64;
    for &i in upper {
        problem.grad1_f(i, &it.x, &it.y, wf, &mut out);
    }
    let wg = -1.0 / lower.len() as f64;
    for &j in lower {
        problem.jvp12_g(j, &it.x, &it.y, &it.z, wg, &mut out);
    }
    Ok(out)
}

/// `(1/|J|) sum_J grad_y G_j`
pub fn direction_y<P: BilevelProblem + ?Sized>(
    problem: &P,
    it: &Iterate,
    lower: &[usize],
) -> Result<Vec<f64>> {
    it.check_dims(problem)?;
    check_index_set(lower, problem.m(), "J")?;
    let mut out = vec![0.0; problem.dim_y()];
    let w = 1.0 / lower.len() as f64;
    for &j in lower {
        problem.grad2_g(j, &it.x, &it.y, w, &mut out);
    }
    Ok(out)
}

/// `(1/|J|) sum_J hess_yy G_j z - (1/|I|) sum_I grad_y F_i`
pub fn direction_z<P: BilevelProblem + ?Sized>(
    problem: &P,
    it: &Iterate,
    upper: &[usize],
    lower: &[usize],
) -> Result<Vec<f64>> {
    it.check_dims(problem)?;
    check_index_set(upper, problem.n(), "I")?;
    check_index_set(lower, problem.m(), "J")?;
    let mut out = vec![0.0; problem.dim_y()];
    let wg = 1.0 / lower.len() as f64;
    for &j in lower {
        problem.hvp22_g(j, &it.x, &it.y, &it.z, wg, &mut out);
    }
    let wf = -1.0 / upper.len() as f64;
    for &i in upper {
        problem.grad2_f(i, &it.x, &it.y, wf, &mut out);
    }
    Ok(out)
}

/// Radial projection onto the ball of radius `radius`:
/// `min(1, radius / ||z||) * z`.
pub fn clip(z: &[f64], radius: f64) -> Result<Vec<f64>> {
    let mut out = z.to_vec();
    clip_in_place(&mut out, radius)?;
    Ok(out)
}

pub fn clip_in_place(z: &mut [f64], radius: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(invalid(format!("clipping radius must be positive, got {radius}")));
    }
    let nz = linalg::norm(z);
    if nz > radius {
        let s = radius / nz;
        linalg::scale(s, z);
        // Rounding can leave the norm a few ulps above the radius.
        let mut nz = linalg::norm(z);
        while nz > radius {
            linalg::scale(1.0 - f64::EPSILON, z);
            nz = linalg::norm(z);
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod toy {
    //! Scalar toy `f = y^2/2`, `g = (y - x)^2/2` with `n = m = 1`.
    use super::BilevelProblem;

    pub struct ScalarToy;

    impl BilevelProblem for ScalarToy {
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
        fn grad1_f(&self, _: usize, _: &[f64], _: &[f64], _: f64, _: &mut [f64]) {}
        fn grad2_f(&self, _: usize, _: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            out[0] += s * y[0];
        }
        fn grad2_g(&self, _: usize, x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            out[0] += s * (y[0] - x[0]);
        }
        fn hvp22_g(&self, _: usize, _: &[f64], _: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
            out[0] += s * v[0];
        }
        fn jvp12_g(&self, _: usize, _: &[f64], _: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
            out[0] -= s * v[0];
        }
        fn value_f(&self, _: usize, _: &[f64], y: &[f64]) -> f64 {
            0.5 * y[0] * y[0]
        }
        fn value_g(&self, _: usize, x: &[f64], y: &[f64]) -> f64 {
            0.5 * (y[0] - x[0]).powi(2)
        }
        fn lower_curvature(&self, _: &[f64]) -> (f64, f64) {
            (1.0, 1.0)
        }
        fn lower_is_quadratic(&self) -> bool {
            true
        }
    }
}
