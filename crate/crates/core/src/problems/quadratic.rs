//! Synthetic quadratic bilevel problem with closed-form solution maps.
//!
//! `F_i(x, y) = 1/2 w^T M_i w + r_i^T w` with `w = [x; y]`, and
//! `G_j(x, y) = 1/2 y^T A_j y - y^T (B_j x + d_j)`.
//! The averaged lower Hessian `A = mean A_j` has its spectrum spread
//! linearly over `[mu, L]`; the per-sample matrices scatter around their
//! means with zero-mean symmetric perturbations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::BilevelProblem;
use crate::rng::{self, Stream};
use crate::solver::StationarityProbe;
use crate::theory::SmoothnessParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSpec {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub mu: f64,
    pub l: f64,
    /// Spread of the per-sample upper-level terms around their mean.
    pub upper_noise: f64,
    /// Spread of the per-sample lower-level terms around their mean.
    pub lower_noise: f64,
    /// Radius of the `(x, y)` ball over which `C^f` is declared.
    pub domain_radius: f64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 100,
            m: 100,
            dim_x: 5,
            dim_y: 5,
            mu: 0.5,
            l: 2.0,
            upper_noise: 0.2,
            lower_noise: 0.1,
            domain_radius: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticBilevel {
    n: usize,
    m: usize,
    dx: usize,
    dy: usize,
    /// Row-major `(dx + dy)^2` blocks.
    mats_f: Vec<Vec<f64>>,
    lin_f: Vec<Vec<f64>>,
    /// Row-major `dy x dy`.
    mats_a: Vec<Vec<f64>>,
    /// Row-major `dy x dx`.
    mats_b: Vec<Vec<f64>>,
    lin_d: Vec<Vec<f64>>,
    mean_m: DMatrix<f64>,
    mean_r: DVector<f64>,
    mean_a: DMatrix<f64>,
    mean_b: DMatrix<f64>,
    mean_d: DVector<f64>,
    chol_a: Cholesky<f64, Dyn>,
    declared: SmoothnessParams,
    mu: f64,
    l: f64,
}

fn gaussian(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_orthogonal(rng: &mut impl rand::Rng, d: usize) -> DMatrix<f64> {
    gaussian(rng, d, d).qr().q()
}

fn spectrum(lo: f64, hi: f64, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |k, _| {
        if d == 1 {
            lo
        } else {
            lo + (hi - lo) * k as f64 / (d - 1) as f64
        }
    })
}

/// Zero-mean symmetric perturbations with unit-order entries.
fn symmetric_scatter(rng: &mut impl rand::Rng, count: usize, d: usize, scale: f64) -> Vec<DMatrix<f64>> {
    let mut mats: Vec<DMatrix<f64>> = (0..count)
        .map(|_| {
            let g = gaussian(rng, d, d);
            (&g + g.transpose()) * (scale / (2.0 * (d as f64).sqrt()))
        })
        .collect();
    center(&mut mats);
    mats
}

fn center(mats: &mut [DMatrix<f64>]) {
    if mats.is_empty() {
        return;
    }
    let mean = mats.iter().fold(DMatrix::zeros(mats[0].nrows(), mats[0].ncols()), |a, b| a + b) / mats.len() as f64;
    for m in mats.iter_mut() {
        *m -= &mean;
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

pub fn make_quadratic(spec: &QuadraticSpec) -> Result<QuadraticBilevel> {
    let QuadraticSpec {
        seed,
        n,
        m,
        dim_x: dx,
        dim_y: dy,
        mu,
        l,
        upper_noise,
        lower_noise,
        domain_radius,
    } = *spec;
    if dx == 0 || dy == 0 || n == 0 || m == 0 {
        return Err(invalid("dimensions and sample counts must be positive"));
    }
    if !(mu > 0.0 && mu <= l && l.is_finite()) {
        return Err(invalid(format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
    }
    if !(upper_noise >= 0.0 && lower_noise >= 0.0 && domain_radius > 0.0) {
        return Err(invalid("noise levels must be nonnegative and the domain radius positive"));
    }
    let mut up = rng::stream(seed, Stream::UpperSampling);
    let mut lo = rng::stream(seed, Stream::LowerSampling);
    let d = dx + dy;

    // Upper level: mean Hessian with spectrum in [0.5, 1.5].
    let q = random_orthogonal(&mut up, d);
    let mean_m = &q * DMatrix::from_diagonal(&spectrum(0.5, 1.5, d)) * q.transpose();
    let mean_r = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut up));
    let dm = symmetric_scatter(&mut up, n, d, upper_noise);
    let mut dr: Vec<DMatrix<f64>> = (0..n).map(|_| gaussian(&mut up, d, 1) * upper_noise).collect();
    center(&mut dr);

    // Lower level.
    let q = random_orthogonal(&mut lo, dy);
    let mean_a = &q * DMatrix::from_diagonal(&spectrum(mu, l, dy)) * q.transpose();
    let mean_a = (&mean_a + mean_a.transpose()) * 0.5;
    let mean_b = gaussian(&mut lo, dy, dx) / (dx as f64).sqrt();
    let mean_d = DVector::from_fn(dy, |_, _| StandardNormal.sample(&mut lo));
    let da = symmetric_scatter(&mut lo, m, dy, lower_noise * l);
    let mut db: Vec<DMatrix<f64>> = (0..m)
        .map(|_| gaussian(&mut lo, dy, dx) * (lower_noise / (dx as f64).sqrt()))
        .collect();
    center(&mut db);
    let mut dd: Vec<DMatrix<f64>> = (0..m).map(|_| gaussian(&mut lo, dy, 1) * lower_noise).collect();
    center(&mut dd);

    let f_mats: Vec<DMatrix<f64>> = dm.iter().map(|e| &mean_m + e).collect();
    let f_lin: Vec<DVector<f64>> = dr.iter().map(|e| &mean_r + e.column(0)).collect();
    let a_mats: Vec<DMatrix<f64>> = da.iter().map(|e| &mean_a + e).collect();
    let b_mats: Vec<DMatrix<f64>> = db.iter().map(|e| &mean_b + e).collect();
    let d_lin: Vec<DVector<f64>> = dd.iter().map(|e| &mean_d + e.column(0)).collect();
    assemble(
        Parts {
            f_mats,
            f_lin,
            a_mats,
            b_mats,
            d_lin,
        },
        Some((mu, l)),
        domain_radius,
    )
}

/// Per-sample terms of a quadratic bilevel problem.
#[derive(Debug, Clone)]
pub struct Parts {
    /// Symmetric `(dx + dy)`-square upper Hessians `M_i`.
    pub f_mats: Vec<DMatrix<f64>>,
    pub f_lin: Vec<DVector<f64>>,
    /// Symmetric `dy x dy` lower Hessians `A_j`.
    pub a_mats: Vec<DMatrix<f64>>,
    /// `dy x dx` couplings `B_j`.
    pub b_mats: Vec<DMatrix<f64>>,
    pub d_lin: Vec<DVector<f64>>,
}

fn mean_of<T>(items: &[T]) -> T
where
    T: Clone + std::ops::Add<Output = T> + std::ops::Div<f64, Output = T>,
{
    let sum = items[1..].iter().cloned().fold(items[0].clone(), |a, b| a + b);
    sum / items.len() as f64
}

fn assemble(parts: Parts, bounds: Option<(f64, f64)>, domain_radius: f64) -> Result<QuadraticBilevel> {
    let Parts {
        f_mats,
        f_lin,
        a_mats,
        b_mats,
        d_lin,
    } = parts;
    let (n, m) = (f_mats.len(), a_mats.len());
    if n == 0 || m == 0 || f_lin.len() != n || b_mats.len() != m || d_lin.len() != m {
        return Err(invalid("need matching, non-empty upper and lower term lists"));
    }
    let (dy, dx) = b_mats[0].shape();
    let d = dx + dy;
    if dx == 0 || dy == 0 {
        return Err(invalid("dimensions must be positive"));
    }
    let shapes_ok = f_mats.iter().all(|mm| mm.shape() == (d, d))
        && f_lin.iter().all(|r| r.len() == d)
        && a_mats.iter().all(|a| a.shape() == (dy, dy))
        && b_mats.iter().all(|b| b.shape() == (dy, dx))
        && d_lin.iter().all(|v| v.len() == dy);
    if !shapes_ok {
        return Err(invalid("inconsistent term shapes"));
    }
    let symmetric = |mm: &DMatrix<f64>| (mm - mm.transpose()).amax() <= 1e-12 * (1.0 + mm.amax());
    if !f_mats.iter().chain(&a_mats).all(symmetric) {
        return Err(invalid("Hessian terms must be symmetric"));
    }
    let mean_m = mean_of(&f_mats);
    let mean_r = mean_of(&f_lin);
    let mean_a = mean_of(&a_mats);
    let mean_b = mean_of(&b_mats);
    let mean_d = mean_of(&d_lin);
    let (mu, l) = match bounds {
        Some(b) => b,
        None => {
            let ev = SymmetricEigen::new(mean_a.clone()).eigenvalues;
            (ev.min(), ev.max())
        }
    };
    if !(mu > 0.0) {
        return Err(invalid(format!("mean lower Hessian must be positive definite, min eigenvalue {mu}")));
    }

    let lf = f_mats.iter().map(spectral_norm).fold(0.0, f64::max);
    let lg1 = a_mats
        .iter()
        .zip(&b_mats)
        .map(|(a, b)| {
            let mut h = DMatrix::zeros(d, d);
            h.view_mut((dx, dx), (dy, dy)).copy_from(a);
            h.view_mut((dx, 0), (dy, dx)).copy_from(&(-b));
            h.view_mut((0, dx), (dx, dy)).copy_from(&(-b.transpose()));
            SymmetricEigen::new(h).eigenvalues.amax()
        })
        .fold(l, f64::max);
    let cf = f_mats
        .iter()
        .zip(&f_lin)
        .map(|(mm, r)| spectral_norm(&mm.rows(dx, dy).into_owned()) * domain_radius + r.rows(dx, dy).norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let declared = SmoothnessParams {
        lf: lf.max(f64::MIN_POSITIVE),
        lg1,
        // Hessians are constant; a tiny positive value keeps the ledger finite.
        lg2: 1e-12,
        mu,
        cf,
    };
    let chol_a = mean_a.clone().cholesky().ok_or_else(|| invalid("mean lower Hessian not SPD"))?;
    Ok(QuadraticBilevel {
        n,
        m,
        dx,
        dy,
        mats_f: f_mats.iter().map(row_major).collect(),
        lin_f: f_lin.iter().map(|v| v.as_slice().to_vec()).collect(),
        mats_a: a_mats.iter().map(row_major).collect(),
        mats_b: b_mats.iter().map(row_major).collect(),
        lin_d: d_lin.iter().map(|v| v.as_slice().to_vec()).collect(),
        mean_m,
        mean_r,
        mean_a,
        mean_b,
        mean_d,
        chol_a,
        declared,
        mu,
        l,
    })
}

impl PartialEq for QuadraticBilevel {
    fn eq(&self, o: &Self) -> bool {
        self.mats_f == o.mats_f
            && self.lin_f == o.lin_f
            && self.mats_a == o.mats_a
            && self.mats_b == o.mats_b
            && self.lin_d == o.lin_d
            && self.declared == o.declared
    }
}

impl QuadraticBilevel {
    /// Builds a problem from explicit per-sample terms. `mu` and `L` are
    /// read off the averaged lower Hessian; `C^f` is declared over the
    /// `(x, y)` ball of radius `domain_radius`.
    pub fn from_parts(parts: Parts, domain_radius: f64) -> Result<Self> {
        if !(domain_radius > 0.0) {
            return Err(invalid("domain radius must be positive"));
        }
        assemble(parts, None, domain_radius)
    }

    pub fn mean_lower_hessian(&self) -> &DMatrix<f64> {
        &self.mean_a
    }

    pub fn declared_params(&self) -> SmoothnessParams {
        self.declared
    }

    /// `y*(x) = A^{-1} (B x + d)`
    pub fn y_star(&self, x: &[f64]) -> Vec<f64> {
        let rhs = &self.mean_b * DVector::from_column_slice(x) + &self.mean_d;
        self.chol_a.solve(&rhs).as_slice().to_vec()
    }

    fn grad_f_mean(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        let w = DVector::from_iterator(self.dx + self.dy, x.iter().chain(y).copied());
        &self.mean_m * w + &self.mean_r
    }

    /// `z*(x) = A^{-1} grad_y f(x, y*(x))`
    pub fn z_star(&self, x: &[f64]) -> Vec<f64> {
        let y = self.y_star(x);
        let g = self.grad_f_mean(x, &y);
        self.chol_a.solve(&g.rows(self.dx, self.dy).into_owned()).as_slice().to_vec()
    }

    /// `grad H(x) = grad_x f + B^T z*`
    pub fn grad_h(&self, x: &[f64]) -> Vec<f64> {
        let y = self.y_star(x);
        let g = self.grad_f_mean(x, &y);
        let z = self.chol_a.solve(&g.rows(self.dx, self.dy).into_owned());
        let out = g.rows(0, self.dx) + self.mean_b.transpose() * z;
        out.as_slice().to_vec()
    }

    pub fn h_value(&self, x: &[f64]) -> f64 {
        let y = self.y_star(x);
        let w = DVector::from_iterator(self.dx + self.dy, x.iter().chain(&y).copied());
        0.5 * w.dot(&(&self.mean_m * &w)) + self.mean_r.dot(&w)
    }

    /// Unique minimiser of `H`.
    pub fn x_star(&self) -> Vec<f64> {
        let (dx, dy) = (self.dx, self.dy);
        let s = self.chol_a.solve(&self.mean_b);
        let t0 = self.chol_a.solve(&self.mean_d);
        let mut t = DMatrix::zeros(dx + dy, dx);
        t.view_mut((0, 0), (dx, dx)).fill_with_identity();
        t.view_mut((dx, 0), (dy, dx)).copy_from(&s);
        let mut off = DVector::zeros(dx + dy);
        off.rows_mut(dx, dy).copy_from(&t0);
        let hess = t.transpose() * &self.mean_m * &t;
        let rhs = -(t.transpose() * (&self.mean_m * off + &self.mean_r));
        hess.cholesky().expect("upper Hessian is SPD").solve(&rhs).as_slice().to_vec()
    }

    #[inline]
    fn f_row(&self, i: usize, a: usize, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dx + self.dy;
        let row = &self.mats_f[i][a * d..(a + 1) * d];
        let mut s = self.lin_f[i][a];
        for (k, &v) in x.iter().enumerate() {
            s += row[k] * v;
        }
        for (k, &v) in y.iter().enumerate() {
            s += row[self.dx + k] * v;
        }
        s
    }
}

impl BilevelProblem for QuadraticBilevel {
    fn n(&self) -> usize {
        self.n
    }
    fn m(&self) -> usize {
        self.m
    }
    fn dim_x(&self) -> usize {
        self.dx
    }
    fn dim_y(&self) -> usize {
        self.dy
    }

    fn grad1_f(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o += scale * self.f_row(i, a, x, y);
        }
    }

    fn grad2_f(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o += scale * self.f_row(i, self.dx + a, x, y);
        }
    }

    fn grad2_g(&self, j: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let (a, b, d) = (&self.mats_a[j], &self.mats_b[j], &self.lin_d[j]);
        for r in 0..self.dy {
            let mut s = -d[r];
            for c in 0..self.dy {
                s += a[r * self.dy + c] * y[c];
            }
            for c in 0..self.dx {
                s -= b[r * self.dx + c] * x[c];
            }
            out[r] += scale * s;
        }
    }

    fn hvp22_g(&self, j: usize, _x: &[f64], _y: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let a = &self.mats_a[j];
        for r in 0..self.dy {
            let s: f64 = (0..self.dy).map(|c| a[r * self.dy + c] * v[c]).sum();
            out[r] += scale * s;
        }
    }

    fn jvp12_g(&self, j: usize, _x: &[f64], _y: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let b = &self.mats_b[j];
        for r in 0..self.dy {
            let w = scale * v[r];
            for c in 0..self.dx {
                out[c] -= b[r * self.dx + c] * w;
            }
        }
    }

    fn value_f(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dx + self.dy;
        let w: Vec<f64> = x.iter().chain(y).copied().collect();
        let mut quad = 0.0;
        for a in 0..d {
            let row: f64 = (0..d).map(|b| self.mats_f[i][a * d + b] * w[b]).sum();
            quad += w[a] * row;
        }
        0.5 * quad + self.lin_f[i].iter().zip(&w).map(|(r, v)| r * v).sum::<f64>()
    }

    fn value_g(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let (a, b, d) = (&self.mats_a[j], &self.mats_b[j], &self.lin_d[j]);
        let mut v = 0.0;
        for r in 0..self.dy {
            let ay: f64 = (0..self.dy).map(|c| a[r * self.dy + c] * y[c]).sum();
            let bx: f64 = (0..self.dx).map(|c| b[r * self.dx + c] * x[c]).sum();
            v += y[r] * (0.5 * ay - bx - d[r]);
        }
        v
    }

    fn lower_curvature(&self, _x: &[f64]) -> (f64, f64) {
        (self.mu, self.l)
    }

    fn lower_is_quadratic(&self) -> bool {
        true
    }

    fn smoothness(&self) -> Option<SmoothnessParams> {
        Some(self.declared)
    }
}

impl StationarityProbe for QuadraticBilevel {
    fn grad_h_sq(&self, x: &[f64]) -> Result<f64> {
        Ok(self.grad_h(x).iter().map(|v| v * v).sum())
    }
}
