//! Smoothness constants and step-size certificates.
//!
//! [`build_ledger`] turns the five problem constants
//! `(L^f, L_1^g, L_2^g, mu, C^f)` into every derived quantity the
//! convergence conditions use. [`check_biased`] and [`check_unbiased`]
//! evaluate those conditions for concrete step sizes and estimator
//! coefficients; [`suggest_steps`] finds the largest certified constant
//! `alpha` with `beta`, `gamma` tied to it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::solver::{theory_defaults, Preset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessParams {
    pub lf: f64,
    pub lg1: f64,
    pub lg2: f64,
    pub mu: f64,
    pub cf: f64,
}

impl SmoothnessParams {
    pub fn unit() -> Self {
        Self {
            lf: 1.0,
            lg1: 1.0,
            lg2: 1.0,
            mu: 1.0,
            cf: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lf", self.lf),
            ("lg1", self.lg1),
            ("lg2", self.lg2),
            ("mu", self.mu),
            ("cf", self.cf),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.mu > self.lg1 {
            return Err(invalid(format!("mu = {} exceeds lg1 = {}", self.mu, self.lg1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub params: SmoothnessParams,
    pub n: usize,
    pub m: usize,
    pub r: f64,
    pub l_ystar: f64,
    pub l_zstar: f64,
    pub l_h: f64,
    pub c_bar: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub l_z_sq: f64,
    pub l_dd: f64,
    pub tau: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn build_ledger(params: SmoothnessParams, n: usize, m: usize) -> Result<ConstantsLedger> {
    params.validate()?;
    if n == 0 || m == 0 {
        return Err(invalid("sample counts must be positive"));
    }
    let SmoothnessParams { lf, lg1, lg2, mu, cf } = params;
    let r = cf / mu;
    let l_ystar = lg1 / mu;
    let l_zstar = (lf / mu + cf * lg2 / (mu * mu)) * (1.0 + lg1 / mu);
    let l_h = lf
        + (2.0 * lf * lg2 + cf * cf * lg2) / mu
        + (lf * lg1 * lg1 + 2.0 * cf * lg1 * lg2) / (mu * mu)
        + cf * lg1 * lg1 * lg2 / (mu * mu * mu);
    let c1 = lf * lf + (lg2 * r).powi(2);
    let c2 = lg1 * lg1;
    let c_bar = ((mu + lg1) / (mu * lg1)).min(1.0 / (mu + lg1));
    let c3 = mu * lg1 / (2.0 * (mu + lg1));
    let c4 = 6.0 * (mu + lg1) / (mu * lg1);
    let c5 = 2.0 * (mu + lg1) * l_ystar * l_ystar / (mu * lg1);
    let c6 = 2.0 * l_ystar * l_ystar / mu;
    let c7 = l_zstar * l_zstar / c3;
    let c8 = 8.0 * c1 / mu;
    let c9 = 3.0 * l_zstar * l_zstar / mu;
    let l_z_sq = (3.0 * lg1 * lg1).max(3.0 * r * r * lg2 * lg2 + 3.0 * lf * lf);
    let l_dd = (4.0 * lf * lf).max(8.0 * lg2 * lg2 * r * r).max(8.0 * lg1 * lg1);
    let tau = n.max(m) as f64;
    let m1 = min_of(&[
        1.0 / (64.0 * c1),
        c3 * c3 / (288.0 * c1 * c2),
        c3 * c3 / (192.0 * c2 * l_z_sq),
        1.0 / (32.0 * c2),
        l_ystar * l_ystar / (96.0 * c1),
        l_zstar * l_zstar / (96.0 * c1),
    ]);
    let m2 = min_of(&[
        mu / (264.0 * c1 * c2),
        11.0 * c8 * c8 / (24.0 * c2 * l_z_sq * mu),
        1.0 / (384.0 * c1),
        11.0 * c8 / (120.0 * c2 * l_z_sq),
        11.0 * c8 / (384.0 * c2 * mu),
    ]);
    let m3 = m2.min(c6 / (4.0 * c1));
    Ok(ConstantsLedger {
        params,
        n,
        m,
        r,
        l_ystar,
        l_zstar,
        l_h,
        c_bar,
        c1,
        c2,
        c3,
        c4,
        c5,
        c6,
        c7,
        c8,
        c9,
        l_z_sq,
        l_dd,
        tau,
        m1,
        m2,
        m3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Steps {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Biased,
    Unbiased,
}

/// One evaluated inequality `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub id: &'static str,
    pub group: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl Inequality {
    fn new(group: &'static str, id: &'static str, lhs: f64, rhs: f64) -> Self {
        Self {
            id,
            group,
            lhs,
            rhs,
            satisfied: lhs <= rhs,
        }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// `lhs / rhs`, with `0/0 = 0`.
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSizeCertificate {
    pub regime: Regime,
    pub rows: Vec<Inequality>,
    pub feasible: bool,
    /// First violated row, or the tightest row when feasible.
    pub binding: Option<&'static str>,
    /// `log10(max rhs / min rhs)` over rows with a positive constant bound.
    pub rhs_span_log10: f64,
}

impl StepSizeCertificate {
    fn from_rows(regime: Regime, rows: Vec<Inequality>) -> Self {
        let feasible = rows.iter().all(|r| r.satisfied);
        let binding = if feasible {
            // Ties (within rounding) go to the earliest row.
            let top = rows.iter().map(Inequality::ratio).fold(0.0, f64::max);
            rows.iter()
                .find(|r| r.lhs > 0.0 && r.ratio() >= top * (1.0 - 1e-12))
                .map(|r| r.id)
        } else {
            rows.iter().find(|r| !r.satisfied).map(|r| r.id)
        };
        let positive: Vec<f64> = rows.iter().map(|r| r.rhs).filter(|v| *v > 0.0 && v.is_finite()).collect();
        let rhs_span_log10 = if positive.is_empty() {
            0.0
        } else {
            let hi = positive.iter().copied().fold(0.0, f64::max);
            let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
            (hi / lo).log10()
        };
        Self {
            regime,
            rows,
            feasible,
            binding,
            rhs_span_log10,
        }
    }

    pub fn row(&self, id: &str) -> Option<&Inequality> {
        self.rows.iter().find(|r| r.id == id)
    }
}

/// Extra conditions attached to a specific algorithm's theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TheoremExtras {
    None,
    /// `beta <= c_beta`, `alpha beta <= c_ab`, `gamma beta <= c_gb`
    Products { c_beta: f64, c_ab: f64, c_gb: f64 },
}

/// Coefficient brackets `(A eta + A' eta_hat)` etc. for the biased regime,
/// stored per unit of the matching step: the A-bracket equals
/// `a * alpha`, the B-bracket `b * beta`, the C-bracket `c * gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasedCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub extras: TheoremExtras,
}

impl BiasedCoeffs {
    /// ZeroSARAH on every channel with batch `b` and momentum `rho_bar`.
    pub fn sffba(l: &ConstantsLedger, batch: usize, rho_bar: f64) -> Self {
        let b = batch as f64;
        let zs = |c: f64| 2.0 / (b * rho_bar) + 3.0 * rho_bar * l.tau * l.l_dd / (2.0 * c * b);
        let k = 16.0 * l.c1 + 3.0 * l.l_dd;
        let c_ab = (4.0 * l.c1 * l.m1 / k).sqrt();
        Self {
            a: zs(l.c1),
            b: zs(l.c1),
            c: zs(l.c2),
            extras: TheoremExtras::Products {
                c_beta: sffba_c_beta(l),
                c_ab,
                c_gb: c_ab,
            },
        }
    }

    /// PAGE on x and z, ZeroSARAH on y.
    pub fn mseba(l: &ConstantsLedger, batch: usize, p: f64, rho_bar: f64) -> Self {
        let b = batch as f64;
        let page = (1.0 - p) / (p * b);
        let zs = 2.0 / (b * rho_bar) + 3.0 * rho_bar * l.tau * l.l_dd / (2.0 * l.c1 * b);
        Self {
            a: page,
            b: zs,
            c: page,
            extras: TheoremExtras::Products {
                c_beta: sffba_c_beta(l),
                c_ab: l.m1,
                c_gb: l.m1,
            },
        }
    }

    /// PAGE on every channel.
    pub fn spaba(batch: usize, p: f64) -> Self {
        let page = (1.0 - p) / (p * batch as f64);
        Self {
            a: page,
            b: page,
            c: page,
            extras: TheoremExtras::None,
        }
    }
}

fn sffba_c_beta(l: &ConstantsLedger) -> f64 {
    let k = 16.0 * l.c1 + 3.0 * l.l_dd;
    min_of(&[
        l.c_bar,
        (l.c1 / (4.0 * l.c2 * k)).sqrt(),
        (l.c1 * l.c3 * l.c3 / (18.0 * l.c2 * l.c2 * k)).sqrt(),
        (l.c1 * l.l_ystar * l.l_ystar / (12.0 * l.c2 * k)).sqrt(),
    ])
}

pub fn check_biased(l: &ConstantsLedger, s: Steps, co: &BiasedCoeffs) -> StepSizeCertificate {
    let Steps { alpha, beta, gamma } = s;
    let mut rows = vec![
        Inequality::new("decoupling", "alpha <= 1/(2 L^H)", alpha, 1.0 / (2.0 * l.l_h)),
        Inequality::new("decoupling", "beta <= c_bar", beta, l.c_bar),
        Inequality::new("decoupling", "gamma <= c_bar", gamma, l.c_bar),
        Inequality::new(
            "decoupling",
            "B-bracket beta <= min{1/(16 c2), c3^2/(72 c2^2), L_y*^2/(48 c2)}",
            co.b * beta * beta,
            min_of(&[
                1.0 / (16.0 * l.c2),
                l.c3 * l.c3 / (72.0 * l.c2 * l.c2),
                l.l_ystar * l.l_ystar / (48.0 * l.c2),
            ]),
        ),
        Inequality::new(
            "coupling",
            "alpha <= 3 beta/(4 L_y*^2)",
            alpha,
            3.0 * beta / (4.0 * l.l_ystar * l.l_ystar),
        ),
        Inequality::new("coupling", "alpha <= c3^2 beta/(108 c1)", alpha, l.c3 * l.c3 * beta / (108.0 * l.c1)),
        Inequality::new(
            "coupling",
            "alpha <= 3 gamma/(8 L_z*^2)",
            alpha,
            3.0 * gamma / (8.0 * l.l_zstar * l.l_zstar),
        ),
        Inequality::new("coupling", "alpha <= c3^2 gamma/(36 c2)", alpha, l.c3 * l.c3 * gamma / (36.0 * l.c2)),
        Inequality::new("coupling", "gamma <= 2 beta/3", gamma, 2.0 * beta / 3.0),
        Inequality::new("coupling", "A-bracket beta <= M1", co.a * alpha * beta, l.m1),
        Inequality::new("coupling", "C-bracket beta <= M1", co.c * gamma * beta, l.m1),
    ];
    if let TheoremExtras::Products { c_beta, c_ab, c_gb } = co.extras {
        rows.push(Inequality::new("theorem", "beta <= c_beta", beta, c_beta));
        rows.push(Inequality::new("theorem", "alpha beta <= c_ab", alpha * beta, c_ab));
        rows.push(Inequality::new("theorem", "gamma beta <= c_gb", gamma * beta, c_gb));
    }
    StepSizeCertificate::from_rows(Regime::Biased, rows)
}

/// Coefficients for the unbiased regime. Brackets are per unit step as in
/// [`BiasedCoeffs`]; the moving-average coefficient is
/// `A'' = a_dd * alpha / rho`; `eta_a` is the x-estimator variance factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnbiasedCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_dd: f64,
    pub eta_a: f64,
}

impl Default for UnbiasedCoeffs {
    fn default() -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            a_dd: 0.5,
            eta_a: 0.0,
        }
    }
}

pub fn check_unbiased(l: &ConstantsLedger, s: Steps, rho: f64, co: &UnbiasedCoeffs) -> StepSizeCertificate {
    let Steps { alpha, beta, gamma } = s;
    let mu = l.params.mu;
    let a_dd = if rho > 0.0 { co.a_dd * alpha / rho } else { f64::INFINITY };
    let a_dd = if co.a_dd == 0.0 || alpha == 0.0 { 0.0 } else { a_dd };
    let rows = vec![
        Inequality::new("decoupling", "alpha <= 1/(2 L^H)", alpha, 1.0 / (2.0 * l.l_h)),
        Inequality::new(
            "decoupling",
            "beta <= min{1/4, 1/(mu + L_1^g)}",
            beta,
            (0.25f64).min(1.0 / (mu + l.params.lg1)),
        ),
        Inequality::new("decoupling", "gamma <= min{1/4, 1/(10 mu)}", gamma, (0.25f64).min(1.0 / (10.0 * mu))),
        Inequality::new(
            "decoupling",
            "B-bracket beta <= min{1/(8 c2), mu/(22 c2^2), c6/c2}",
            co.b * beta * beta,
            min_of(&[1.0 / (8.0 * l.c2), mu / (22.0 * l.c2 * l.c2), l.c6 / l.c2]),
        ),
        Inequality::new("coupling", "alpha <= beta/(32 c6)", alpha, beta / (32.0 * l.c6)),
        Inequality::new("coupling", "alpha <= gamma/(32 c9)", alpha, gamma / (32.0 * l.c9)),
        Inequality::new("coupling", "gamma <= mu beta/(11 c8)", gamma, mu * beta / (11.0 * l.c8)),
        Inequality::new("coupling", "rho A'' <= mu beta/(99 c1)", rho * a_dd, mu * beta / (99.0 * l.c1)),
        Inequality::new("coupling", "rho A'' <= mu gamma/(45 c2)", rho * a_dd, mu * gamma / (45.0 * l.c2)),
        Inequality::new(
            "coupling",
            "(alpha/rho) A'' <= 1/(96 (L^H)^2)",
            if a_dd == 0.0 { 0.0 } else { alpha / rho * a_dd },
            1.0 / (96.0 * l.l_h * l.l_h),
        ),
        Inequality::new("coupling", "rho beta A'' <= M3", rho * beta * a_dd, l.m3),
        Inequality::new(
            "coupling",
            "rho^2 A'' eta_A beta <= M3",
            rho * rho * a_dd * co.eta_a * beta,
            l.m3,
        ),
        Inequality::new("coupling", "A-bracket beta <= M2", co.a * alpha * beta, l.m2),
        Inequality::new("coupling", "C-bracket beta <= M2", co.c * gamma * beta, l.m2),
    ];
    StepSizeCertificate::from_rows(Regime::Unbiased, rows)
}

/// Which certificate an algorithm is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coefficients {
    Biased(BiasedCoeffs),
    Unbiased { rho: f64, coeffs: UnbiasedCoeffs },
}

impl Coefficients {
    pub fn check(&self, l: &ConstantsLedger, s: Steps) -> StepSizeCertificate {
        match self {
            Coefficients::Biased(c) => check_biased(l, s, c),
            Coefficients::Unbiased { rho, coeffs } => check_unbiased(l, s, *rho, coeffs),
        }
    }

    /// `(beta, gamma)` as functions of `alpha` along the tightest coupling.
    pub fn tie(&self, l: &ConstantsLedger, alpha: f64) -> (f64, f64) {
        match self {
            Coefficients::Biased(_) => {
                let kg = (3.0 / (8.0 * l.l_zstar * l.l_zstar)).min(l.c3 * l.c3 / (36.0 * l.c2));
                let kb = (3.0 / (4.0 * l.l_ystar * l.l_ystar)).min(l.c3 * l.c3 / (108.0 * l.c1));
                let gamma = alpha / kg;
                (f64::max(alpha / kb, 1.5 * gamma), gamma)
            }
            Coefficients::Unbiased { .. } => {
                let gamma = 32.0 * l.c9 * alpha;
                let beta = f64::max(32.0 * l.c6 * alpha, 11.0 * l.c8 * gamma / l.params.mu);
                (beta, gamma)
            }
        }
    }
}

/// Theory-driven parameters of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub preset: Preset,
    pub batch: usize,
    pub rho_bar: Option<f64>,
    pub p: Option<f64>,
    pub rho: Option<f64>,
    pub steps: Steps,
    pub coefficients: Coefficients,
    pub certificate: StepSizeCertificate,
}

/// Default coefficients for `preset` at the theory batch size.
pub fn coefficients_for(l: &ConstantsLedger, preset: Preset) -> (Coefficients, usize, Option<f64>, Option<f64>, Option<f64>) {
    let d = theory_defaults(l.n, l.m);
    match preset {
        Preset::Sffba => (
            Coefficients::Biased(BiasedCoeffs::sffba(l, d.batch, d.rho_bar)),
            d.batch,
            Some(d.rho_bar),
            None,
            None,
        ),
        Preset::Mseba => (
            Coefficients::Biased(BiasedCoeffs::mseba(l, d.batch, d.p, d.rho_bar)),
            d.batch,
            Some(d.rho_bar),
            Some(d.p),
            None,
        ),
        Preset::Spaba => (
            Coefficients::Biased(BiasedCoeffs::spaba(d.batch, d.p)),
            d.batch,
            None,
            Some(d.p),
            None,
        ),
        _ => {
            let rho = if preset.uses_moving_average() { 0.1 } else { 1.0 };
            (
                Coefficients::Unbiased {
                    rho,
                    coeffs: UnbiasedCoeffs::default(),
                },
                d.batch,
                None,
                None,
                Some(rho),
            )
        }
    }
}

/// Largest `alpha` in `[0, hi]` for which `feasible` holds, assuming
/// feasibility is monotone (true at 0 side, false beyond the threshold).
pub fn bisect_max(hi: f64, mut feasible: impl FnMut(f64) -> bool) -> Option<f64> {
    if feasible(hi) {
        return Some(hi);
    }
    let mut lo = hi;
    // Find a feasible lower end by shrinking geometrically.
    for _ in 0..2000 {
        lo *= 0.5;
        if lo == 0.0 {
            return None;
        }
        if feasible(lo) {
            break;
        }
    }
    if !feasible(lo) {
        return None;
    }
    let mut hi = lo * 2.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

pub fn suggest_steps(l: &ConstantsLedger, preset: Preset) -> Result<Suggestion> {
    let (coefficients, batch, rho_bar, p, rho) = coefficients_for(l, preset);
    suggest_with(l, preset, coefficients, batch, rho_bar, p, rho)
}

pub fn suggest_with(
    l: &ConstantsLedger,
    preset: Preset,
    coefficients: Coefficients,
    batch: usize,
    rho_bar: Option<f64>,
    p: Option<f64>,
    rho: Option<f64>,
) -> Result<Suggestion> {
    let steps_at = |alpha: f64| {
        let (beta, gamma) = coefficients.tie(l, alpha);
        Steps { alpha, beta, gamma }
    };
    let hi = 1.0 / (2.0 * l.l_h);
    if !(hi > 0.0 && hi.is_finite()) {
        return Err(Error::Infeasible(format!("degenerate ledger: L^H = {}", l.l_h)));
    }
    let alpha = bisect_max(hi, |a| coefficients.check(l, steps_at(a)).feasible)
        .ok_or_else(|| Error::Infeasible(format!("no positive alpha certifies {preset}")))?;
    let steps = steps_at(alpha);
    let certificate = coefficients.check(l, steps);
    Ok(Suggestion {
        preset,
        batch,
        rho_bar,
        p,
        rho,
        steps,
        coefficients,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, m: usize) -> ConstantsLedger {
        build_ledger(SmoothnessParams::unit(), n, m).unwrap()
    }

    #[test]
    fn unit_ledger_values() {
        let l = unit(50, 50);
        assert_eq!(l.r, 1.0);
        assert_eq!(l.l_ystar, 1.0);
        assert_eq!(l.l_zstar, 4.0);
        assert_eq!(l.l_h, 8.0);
        assert_eq!(l.c1, 2.0);
        assert_eq!(l.c2, 1.0);
        assert_eq!(l.c3, 0.25);
        assert_eq!(l.c4, 12.0);
        assert_eq!(l.c6, 2.0);
        assert_eq!(l.c_bar, 0.5);
        assert_eq!(l.l_z_sq, 6.0);
        assert_eq!(l.l_dd, 8.0);
        assert_eq!(l.tau, 50.0);
        assert_eq!(l.m1, 1.0 / 18432.0);
    }

    #[test]
    fn c3_increases_toward_lg1_over_4() {
        let mut prev = 0.0;
        for k in 1..=20 {
            let mu = 2.0 * k as f64 / 20.0;
            let l = build_ledger(
                SmoothnessParams {
                    mu,
                    lg1: 2.0,
                    ..SmoothnessParams::unit()
                },
                10,
                10,
            )
            .unwrap();
            assert!(l.c3 > prev);
            assert!(l.c3 < l.params.mu.min(l.params.lg1));
            prev = l.c3;
        }
        assert!((prev - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = SmoothnessParams {
            mu: 0.0,
            ..SmoothnessParams::unit()
        };
        assert!(matches!(build_ledger(bad, 1, 1), Err(Error::InvalidArgument(_))));
        let bad = SmoothnessParams {
            mu: 2.0,
            ..SmoothnessParams::unit()
        };
        assert!(build_ledger(bad, 1, 1).is_err());
    }

    #[test]
    fn zero_steps_feasible() {
        let l = unit(50, 50);
        let d = theory_defaults(50, 50);
        let c = BiasedCoeffs::sffba(&l, d.batch, d.rho_bar);
        assert!(check_biased(&l, Steps::default(), &c).feasible);
        assert!(check_unbiased(&l, Steps::default(), 1.0, &UnbiasedCoeffs::default()).feasible);
    }

    #[test]
    fn alpha_one_over_lh_binds_first_row() {
        let l = unit(50, 50);
        let s = Steps {
            alpha: 1.0 / l.l_h,
            beta: 0.1,
            gamma: 0.05,
        };
        let c = check_biased(&l, s, &BiasedCoeffs::spaba(10, 0.1));
        assert!(!c.feasible);
        assert_eq!(c.binding, Some("alpha <= 1/(2 L^H)"));
        let c = check_unbiased(&l, s, 1.0, &UnbiasedCoeffs::default());
        assert!(!c.feasible);
        assert_eq!(c.binding, Some("alpha <= 1/(2 L^H)"));
    }

    #[test]
    fn rho_one_zero_a_dd_trivial_rows() {
        let l = unit(50, 50);
        let co = UnbiasedCoeffs {
            a_dd: 0.0,
            ..Default::default()
        };
        let c = check_unbiased(
            &l,
            Steps {
                alpha: 1e-3,
                beta: 0.2,
                gamma: 0.05,
            },
            1.0,
            &co,
        );
        for r in c.rows.iter().filter(|r| r.id.contains("A''")) {
            assert_eq!(r.lhs, 0.0);
            assert!(r.satisfied);
        }
    }

    #[test]
    fn suggestions_recertify() {
        let l = unit(50, 50);
        for p in Preset::ALL {
            let s = suggest_steps(&l, p).unwrap();
            assert!(s.certificate.feasible, "{p}");
            assert!(s.steps.alpha > 0.0);
        }
    }

    #[test]
    fn doubling_lh_halves_alpha_when_first_row_binds() {
        let mut l = unit(50, 50);
        l.l_h = 1e6;
        let co = Coefficients::Biased(BiasedCoeffs::spaba(10, 0.1));
        let s1 = suggest_with(&l, Preset::Spaba, co, 10, None, None, None).unwrap();
        assert_eq!(s1.certificate.binding, Some("alpha <= 1/(2 L^H)"));
        l.l_h *= 2.0;
        let s2 = suggest_with(&l, Preset::Spaba, co, 10, None, None, None).unwrap();
        assert_eq!(s2.certificate.binding, Some("alpha <= 1/(2 L^H)"));
        assert_eq!(s1.steps.alpha, 2.0 * s2.steps.alpha);
    }
}
