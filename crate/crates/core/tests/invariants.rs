use pnpbo::model::{clip, direction_x, direction_y, direction_z, Iterate};
use pnpbo::problems::{make_quadratic, QuadraticBilevel, QuadraticSpec};
use pnpbo::solver::{Preset, SolverConfig, SolverState};
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn small_problem(seed: u64) -> QuadraticBilevel {
    make_quadratic(&QuadraticSpec {
        seed,
        n: 8,
        m: 8,
        dim_x: 3,
        dim_y: 4,
        ..QuadraticSpec::default()
    })
    .unwrap()
}

fn vec_of(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-scale..scale, len)
}

fn subset(n: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n)
}

const PRESETS: [Preset; 8] = [
    Preset::Soba,
    Preset::MaSoba,
    Preset::Saba,
    Preset::MaSaba,
    Preset::Spaba,
    Preset::Sffba,
    Preset::Mseba,
    Preset::Srmba,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clip_stays_in_ball(z in vec_of(6, 1e3), r in 1e-3f64..1e3) {
        let c = clip(&z, r).unwrap();
        prop_assert!(norm(&c) <= r);
        if norm(&z) <= r {
            prop_assert_eq!(&c, &z);
        }
    }

    #[test]
    fn clip_is_idempotent(z in vec_of(6, 1e3), r in 1e-3f64..1e3) {
        let once = clip(&z, r).unwrap();
        prop_assert_eq!(clip(&once, r).unwrap(), once);
    }

    #[test]
    fn clip_is_non_expansive(a in vec_of(5, 50.0), b in vec_of(5, 50.0), r in 1e-2f64..60.0) {
        let (ca, cb) = (clip(&a, r).unwrap(), clip(&b, r).unwrap());
        prop_assert!(dist(&ca, &cb) <= dist(&a, &b) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn clip_keeps_direction(z in vec_of(4, 100.0), r in 1e-2f64..100.0) {
        let c = clip(&z, r).unwrap();
        let nz = norm(&z);
        prop_assume!(nz > 0.0);
        let s = norm(&c) / nz;
        prop_assert!(s <= 1.0);
        for (ci, zi) in c.iter().zip(&z) {
            prop_assert!((ci - s * zi).abs() <= 1e-12 * (1.0 + zi.abs()));
        }
    }

    #[test]
    fn clip_rejects_bad_radius(z in vec_of(3, 1.0), r in -10.0f64..=0.0) {
        prop_assert!(clip(&z, r).is_err());
    }

    #[test]
    fn directions_are_affine_in_z(
        seed in 0u64..20,
        x in vec_of(3, 2.0),
        y in vec_of(4, 2.0),
        u in vec_of(4, 2.0),
        w in vec_of(4, 2.0),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        upper in subset(8),
        lower in subset(8),
    ) {
        let p = small_problem(seed);
        let at = |z: Vec<f64>| Iterate::new(x.clone(), y.clone(), z).unwrap();
        let combo: Vec<f64> = u.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let dx = |z: Vec<f64>| direction_x(&p, &at(z), &upper, &lower).unwrap();
        let dz = |z: Vec<f64>| direction_z(&p, &at(z), &upper, &lower).unwrap();
        let zero = vec![0.0; 4];
        for d in [&dx as &dyn Fn(Vec<f64>) -> Vec<f64>, &dz] {
            let d0 = d(zero.clone());
            let lin = |z: Vec<f64>| -> Vec<f64> { d(z).iter().zip(&d0).map(|(v, o)| v - o).collect() };
            let (lu, lw, lc) = (lin(u.clone()), lin(w.clone()), lin(combo.clone()));
            for k in 0..lc.len() {
                let expect = a * lu[k] + b * lw[k];
                prop_assert!((lc[k] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
            }
        }
        prop_assert_eq!(
            direction_y(&p, &at(u.clone()), &lower).unwrap(),
            direction_y(&p, &at(w.clone()), &lower).unwrap()
        );
    }

    #[test]
    fn directions_average_over_disjoint_halves(
        seed in 0u64..20,
        x in vec_of(3, 2.0),
        y in vec_of(4, 2.0),
        z in vec_of(4, 2.0),
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let p = small_problem(seed);
        let it = Iterate::new(x, y, z).unwrap();
        let (h1, h2) = perm.split_at(4);
        let whole = direction_x(&p, &it, &perm, &perm).unwrap();
        let a = direction_x(&p, &it, h1, h1).unwrap();
        let b = direction_x(&p, &it, h2, h2).unwrap();
        let c = direction_x(&p, &it, h1, h2).unwrap();
        let d = direction_x(&p, &it, h2, h1).unwrap();
        for k in 0..whole.len() {
            let mean = (a[k] + b[k] + c[k] + d[k]) / 4.0;
            prop_assert!((whole[k] - mean).abs() <= 1e-10 * (1.0 + mean.abs()));
        }
    }

    #[test]
    fn z_stays_in_ball_for_every_preset(
        seed in 0u64..1000,
        preset in proptest::sample::select(PRESETS.to_vec()),
        radius in 0.05f64..5.0,
        step in 0.01f64..0.6,
    ) {
        let p = small_problem(seed % 7);
        let mut cfg = SolverConfig::from_preset(preset, 8, 8).with_steps(step, step, step);
        cfg.radius = radius;
        cfg.seed = seed;
        let mut s = SolverState::new(&p, cfg, Iterate::new(vec![0.3; 3], vec![0.0; 4], vec![9.0; 4]).unwrap()).unwrap();
        prop_assert!(norm(&s.iterate.z) <= radius);
        let mut last = s.samples();
        for _ in 0..30 {
            if s.step(&p).is_err() {
                break;
            }
            prop_assert!(norm(&s.iterate.z) <= radius);
            let now = s.samples();
            prop_assert!(now.0 >= last.0 && now.1 >= last.1);
            last = now;
        }
    }

    #[test]
    fn moving_average_is_a_convex_recursion(
        seed in 0u64..1000,
        rho in 0.01f64..=1.0,
        preset in proptest::sample::select(vec![Preset::MaSoba, Preset::MaSaba]),
    ) {
        let p = small_problem(seed % 5);
        let mut cfg = SolverConfig::from_preset(preset, 8, 8).with_steps(0.05, 0.1, 0.1);
        cfg.rho = rho;
        cfg.seed = seed;
        let mut s = SolverState::new(&p, cfg, Iterate::zeros(&p)).unwrap();
        let first = s.step(&p).unwrap();
        prop_assert_eq!(&first.v_x, &first.v_hat_x);
        let mut prev = first.v_x;
        for _ in 0..20 {
            let r = s.step(&p).unwrap();
            for k in 0..prev.len() {
                let expect = (1.0 - rho) * prev[k] + rho * r.v_hat_x[k];
                prop_assert!((r.v_x[k] - expect).abs() <= 1e-14 * (1.0 + expect.abs()));
            }
            prev = r.v_x;
        }
    }

    #[test]
    fn solver_is_deterministic(seed in any::<u64>(), preset in proptest::sample::select(PRESETS.to_vec())) {
        let p = small_problem(3);
        let mut cfg = SolverConfig::from_preset(preset, 8, 8).with_steps(0.1, 0.1, 0.1);
        cfg.seed = seed;
        let run = |cfg: SolverConfig| {
            let mut s = SolverState::new(&p, cfg, Iterate::zeros(&p)).unwrap();
            for _ in 0..15 {
                s.step(&p).unwrap();
            }
            (*s.meters(), s.iterate)
        };
        prop_assert_eq!(run(cfg.clone()), run(cfg));
    }
}
