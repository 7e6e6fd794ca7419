use nalgebra::{DMatrix, DVector};
use pnpbo::model::{direction_x, direction_y, direction_z, BilevelProblem, Iterate};
use pnpbo::oracle::{self, OracleConfig};
use pnpbo::problems::{
    make_hypercleaning, make_quadratic, make_regpath, DigitSource, HyperCleaningSpec, Parts, Penalty,
    QuadraticBilevel, QuadraticSpec, RegPathSpec, TabularSource,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(k: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(k, v.len() / k, v)
}

/// Three-dimensional instance with two upper and three lower terms.
/// Expected values below come from an independent numpy evaluation.
fn fixed_instance() -> QuadraticBilevel {
    #[rustfmt::skip]
    let f_mats = vec![
        mat(6, &[4.72, 0.05, 2.19, 0.89, 0.37, 1.15, 0.05, 3.05, -1.12, 0.59, 0.39, -0.02, 2.19, -1.12, 3.64, 0.53, 1.18, 1.49, 0.89, 0.59, 0.53, 1.48, -0.85, 0.05, 0.37, 0.39, 1.18, -0.85, 2.96, -1.12, 1.15, -0.02, 1.49, 0.05, -1.12, 4.28]),
        mat(6, &[2.87, -0.01, 0.27, -0.43, -0.48, -0.79, -0.01, 3.71, -1.86, 1.36, -0.34, -0.21, 0.27, -1.86, 2.36, -0.62, -0.52, 1.42, -0.43, 1.36, -0.62, 2.98, 0.3, -0.36, -0.48, -0.34, -0.52, 0.3, 3.57, 0.61, -0.79, -0.21, 1.42, -0.36, 0.61, 2.37]),
    ];
    let f_lin = vec![
        DVector::from_vec(vec![-1.66, -1.05, 0.36, 0.25, 1.23, -0.3]),
        DVector::from_vec(vec![0.35, 0.05, -1.0, -1.62, 0.82, 0.49]),
    ];
    #[rustfmt::skip]
    let a_mats = vec![
        mat(3, &[0.44999999999999996, -0.51, 0.62, -0.51, 3.3200000000000003, 0.06, 0.62, 0.06, 2.13]),
        mat(3, &[1.78, -0.04, 0.41, -0.04, 1.74, 0.46, 0.41, 0.46, 1.72]),
        mat(3, &[1.54, 0.06, 0.45, 0.06, 2.59, -0.04, 0.45, -0.04, 2.13]),
    ];
    let b_mats = vec![
        mat(3, &[1.49, 1.15, -1.52, -1.41, 0.13, -0.64, 1.09, -0.05, 0.28]),
        mat(3, &[1.02, 0.23, 0.34, 1.31, -0.63, -2.82, 0.98, 0.43, 0.31]),
        mat(3, &[1.11, 0.32, 0.62, 0.47, -0.39, -1.72, 1.7, -1.42, 0.1]),
    ];
    let d_lin = vec![
        DVector::from_vec(vec![-1.28, -0.9, 0.49]),
        DVector::from_vec(vec![-1.14, -1.24, 1.68]),
        DVector::from_vec(vec![-0.85, -0.14, -0.93]),
    ];
    QuadraticBilevel::from_parts(
        Parts {
            f_mats,
            f_lin,
            a_mats,
            b_mats,
            d_lin,
        },
        5.0,
    )
    .unwrap()
}

fn fixed_iterate() -> Iterate {
    Iterate::new(vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75], vec![-0.4, 0.9, 0.3]).unwrap()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol * (1.0 + w.abs()), "got {got:?}, want {want:?}");
    }
}

#[test]
fn fixed_instance_directions() {
    let q = fixed_instance();
    let it = fixed_iterate();
    let dx = direction_x(&q, &it, &[0], &[1]).unwrap();
    assert_close(&dx, &[6.66, -5.847500000000001, 7.246499999999999], 1e-12);
    let dy = direction_y(&q, &it, &[0, 2]).unwrap();
    assert_close(&dy, &[3.085, 3.37875, -2.385], 1e-12);
    let dz = direction_z(&q, &it, &[1], &[0]).unwrap();
    assert_close(&dz, &[-0.8329999999999993, 2.4450000000000003, -0.5349999999999998], 1e-12);
}

#[test]
fn fixed_instance_closed_forms() {
    let q = fixed_instance();
    let x = [0.5, -1.0, 2.0];
    assert_close(&q.y_star(&x), &[-1.9710639053752894, -1.735546048121109, 1.5543874051929034], 1e-10);
    assert_close(&q.z_star(&x), &[-7.531202075994058, -2.4236815845009296, 6.6369227496058585], 1e-10);
    assert_close(&q.grad_h(&x), &[2.5582284222284857, -14.843386036732507, 16.67980817691744], 1e-10);
    let (mu, l) = q.lower_curvature(&x);
    assert!((mu - 0.97908283).abs() < 1e-7 && (l - 2.59372836).abs() < 1e-7);
}

#[test]
fn from_parts_rejects_asymmetric_hessian() {
    let parts = Parts {
        f_mats: vec![DMatrix::identity(2, 2)],
        f_lin: vec![DVector::zeros(2)],
        a_mats: vec![mat(1, &[1.0])],
        b_mats: vec![mat(1, &[1.0])],
        d_lin: vec![DVector::zeros(1)],
    };
    assert!(QuadraticBilevel::from_parts(parts.clone(), 1.0).is_ok());
    let mut bad = parts;
    bad.f_mats[0][(0, 1)] = 0.5;
    assert!(QuadraticBilevel::from_parts(bad, 1.0).is_err());
}

fn randn(rng: &mut ChaCha8Rng, k: usize, s: f64) -> Vec<f64> {
    (0..k).map(|_| s * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

fn add(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u + t * v).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn rel_ok(fd: f64, an: f64, scale: f64, tol: f64) -> bool {
    (fd - an).abs() <= tol * (scale + an.abs()).max(1.0)
}

/// Central-difference checks of every per-sample accessor along random
/// directions, at `points` random `(x, y)`.
fn derivative_checks<P: BilevelProblem>(p: &P, points: usize, spread: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let tol = 1e-6;
    let (dx, dy) = (p.dim_x(), p.dim_y());
    for _ in 0..points {
        let x = randn(&mut rng, dx, spread);
        let y = randn(&mut rng, dy, spread);
        let u = randn(&mut rng, dx, 1.0);
        let v = randn(&mut rng, dy, 1.0);
        let w = randn(&mut rng, dy, 1.0);
        let i = rng.random_range(0..p.n());
        let j = rng.random_range(0..p.m());

        let mut g = vec![0.0; dx];
        p.grad1_f(i, &x, &y, 1.0, &mut g);
        let fd = (p.value_f(i, &add(&x, &u, h), &y) - p.value_f(i, &add(&x, &u, -h), &y)) / (2.0 * h);
        assert!(rel_ok(fd, dot(&g, &u), p.value_f(i, &x, &y).abs() * 1e-4, tol), "grad1_f");

        let mut g = vec![0.0; dy];
        p.grad2_f(i, &x, &y, 1.0, &mut g);
        let fd = (p.value_f(i, &x, &add(&y, &v, h)) - p.value_f(i, &x, &add(&y, &v, -h))) / (2.0 * h);
        assert!(rel_ok(fd, dot(&g, &v), p.value_f(i, &x, &y).abs() * 1e-4, tol), "grad2_f");

        let mut g = vec![0.0; dy];
        p.grad2_g(j, &x, &y, 1.0, &mut g);
        let fd = (p.value_g(j, &x, &add(&y, &v, h)) - p.value_g(j, &x, &add(&y, &v, -h))) / (2.0 * h);
        assert!(rel_ok(fd, dot(&g, &v), p.value_g(j, &x, &y).abs() * 1e-4, tol), "grad2_g: {fd} vs {}", dot(&g, &v));

        // hvp: derivative of <grad2_g, w> along v.
        let gw = |yy: &[f64]| {
            let mut g = vec![0.0; dy];
            p.grad2_g(j, &x, yy, 1.0, &mut g);
            dot(&g, &w)
        };
        let mut hv = vec![0.0; dy];
        p.hvp22_g(j, &x, &y, &v, 1.0, &mut hv);
        let fd = (gw(&add(&y, &v, h)) - gw(&add(&y, &v, -h))) / (2.0 * h);
        assert!(rel_ok(fd, dot(&hv, &w), 0.0, tol), "hvp22_g: {fd} vs {}", dot(&hv, &w));

        // jvp: derivative of <grad2_g, w> along u in x.
        let gx = |xx: &[f64]| {
            let mut g = vec![0.0; dy];
            p.grad2_g(j, xx, &y, 1.0, &mut g);
            dot(&g, &w)
        };
        let mut jv = vec![0.0; dx];
        p.jvp12_g(j, &x, &y, &w, 1.0, &mut jv);
        let fd = (gx(&add(&x, &u, h)) - gx(&add(&x, &u, -h))) / (2.0 * h);
        assert!(rel_ok(fd, dot(&jv, &u), 0.0, tol), "jvp12_g: {fd} vs {}", dot(&jv, &u));

        // Symmetry of the lower Hessian as a bilinear form.
        let mut hw = vec![0.0; dy];
        p.hvp22_g(j, &x, &y, &w, 1.0, &mut hw);
        let (a, b) = (dot(&v, &hw), dot(&w, &hv));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0), "hvp symmetry");
    }
}

/// `<v, mean_j H_j v> >= mu ||v||^2` for the declared `mu`.
fn strong_convexity_probe<P: BilevelProblem>(p: &P, probes: usize, spread: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let x = randn(&mut rng, p.dim_x(), spread);
        let y = randn(&mut rng, p.dim_y(), spread);
        let v = randn(&mut rng, p.dim_y(), 1.0);
        let mut hv = vec![0.0; p.dim_y()];
        for j in 0..p.m() {
            p.hvp22_g(j, &x, &y, &v, 1.0 / p.m() as f64, &mut hv);
        }
        let (mu, _) = p.lower_curvature(&x);
        assert!(dot(&v, &hv) >= mu * dot(&v, &v) * (1.0 - 1e-12));
    }
}

fn small_hypercleaning() -> pnpbo::problems::HyperCleaning {
    make_hypercleaning(
        &HyperCleaningSpec {
            seed: 4,
            n_train: 40,
            n_val: 20,
            n_test: 20,
            source: DigitSource::Synthetic { side: 4 },
            ..Default::default()
        },
        None,
    )
    .unwrap()
}

fn small_regpath(penalty: Penalty) -> pnpbo::problems::RegPathLogReg {
    let classes = if penalty == Penalty::PerFeature { 2 } else { 3 };
    make_regpath(
        &RegPathSpec {
            seed: 8,
            penalty,
            n_train: 40,
            n_val: 20,
            n_test: 10,
            source: TabularSource::Synthetic {
                dim: 5,
                classes,
                separation: 2.0,
            },
        },
        None,
    )
    .unwrap()
}

#[test]
fn quadratic_derivatives() {
    let q = make_quadratic(&QuadraticSpec {
        seed: 2,
        n: 10,
        m: 10,
        ..Default::default()
    })
    .unwrap();
    derivative_checks(&q, 50, 2.0, 1);
    strong_convexity_probe(&q, 50, 2.0, 2);
}

#[test]
fn hypercleaning_derivatives() {
    let hc = small_hypercleaning();
    derivative_checks(&hc, 50, 1.0, 3);
    strong_convexity_probe(&hc, 20, 1.0, 4);
}

#[test]
fn regpath_derivatives() {
    for penalty in [Penalty::PerFeature, Penalty::PerClass] {
        let rp = small_regpath(penalty);
        derivative_checks(&rp, 50, 1.0, 5);
        strong_convexity_probe(&rp, 20, 1.0, 6);
    }
}

#[test]
fn hypercleaning_lower_solve_residual() {
    let hc = small_hypercleaning();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, hc.dim_x(), 2.0);
    let cfg = OracleConfig::default();
    let y = oracle::solve_lower(&hc, &x, &cfg).unwrap();
    let mut g = vec![0.0; hc.dim_y()];
    for j in 0..hc.m() {
        hc.grad2_g(j, &x, &y, 1.0 / hc.m() as f64, &mut g);
    }
    assert!(dot(&g, &g).sqrt() <= 1e-10);
}

#[test]
fn implicit_solve_matches_dense_factorisation() {
    let q = make_quadratic(&QuadraticSpec {
        seed: 12,
        n: 30,
        m: 30,
        dim_x: 4,
        dim_y: 6,
        ..Default::default()
    })
    .unwrap();
    let cfg = OracleConfig::default();
    let x = [0.2, -0.3, 1.0, 0.5];
    let y = oracle::solve_lower(&q, &x, &cfg).unwrap();
    let z = oracle::solve_implicit(&q, &x, &y, &cfg).unwrap();
    let hess = oracle::lower_hessian(&q, &x, &y);
    let mut rhs = vec![0.0; q.dim_y()];
    for i in 0..q.n() {
        q.grad2_f(i, &x, &y, 1.0 / q.n() as f64, &mut rhs);
    }
    let dense = hess.lu().solve(&DVector::from_vec(rhs)).unwrap();
    assert_close(&z, dense.as_slice(), 1e-8);
}

#[test]
fn oracle_metric_equals_closed_form() {
    let q = make_quadratic(&QuadraticSpec::default()).unwrap();
    let cfg = OracleConfig::default();
    let x = [1.0, -2.0, 0.5, 0.0, 3.0];
    let m = oracle::stationarity_metric(&q, &x, &cfg).unwrap();
    let g = q.grad_h(&x);
    assert!((m - dot(&g, &g)).abs() <= 1e-8 * dot(&g, &g));
}

#[test]
fn oracle_matches_closed_form_on_stationary_point() {
    let q = make_quadratic(&QuadraticSpec::default()).unwrap();
    let g = oracle::hypergradient(&q, &q.x_star(), &OracleConfig::default()).unwrap();
    assert!(dot(&g, &g).sqrt() <= 1e-8);
}

#[test]
fn solution_maps_are_lipschitz() {
    let q = make_quadratic(&QuadraticSpec::default()).unwrap();
    let l = pnpbo::theory::build_ledger(q.declared_params(), q.n(), q.m()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let a = randn(&mut rng, 5, 3.0);
        let b = randn(&mut rng, 5, 3.0);
        let dxn = pnpbo::linalg::dist(&a, &b);
        assert!(pnpbo::linalg::dist(&q.y_star(&a), &q.y_star(&b)) <= l.l_ystar * dxn * (1.0 + 1e-12));
        assert!(pnpbo::linalg::dist(&q.z_star(&a), &q.z_star(&b)) <= l.l_zstar * dxn * (1.0 + 1e-12));
    }
}
