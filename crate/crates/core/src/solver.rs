//! The single-loop solver.
//!
//! Each step draws one pair of index sets `(I, J)`, asks the three channel
//! estimators for `v^x`, `v^y`, `v^z` at the pre-step iterate, optionally
//! smooths `v^x` with a moving average (unbiased x-estimators only) and
//! then applies
//! `x -= alpha v^x`, `y -= beta v^y`, `z = Clip(z - gamma v^z; R)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{ChannelKind, EstimatorKind, EstimatorState, EvalMeter, ProblemChannel};
use crate::linalg;
use crate::model::{clip_in_place, BilevelProblem, Iterate, SampleDraw};
use crate::rng::{self, Stream};

/// Step-size sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    /// `base / (1 + k / k0)^power`
    Decay { base: f64, k0: f64, power: f64 },
}

impl Schedule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Decay { base, k0, power } => base / (1.0 + k as f64 / k0).powf(power),
        }
    }

    pub fn initial(&self) -> f64 {
        self.at(0)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Schedule::Constant(v) => v >= 0.0 && v.is_finite(),
            Schedule::Decay { base, k0, power } => {
                base >= 0.0 && base.is_finite() && k0 > 0.0 && power >= 0.0 && power.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("step size {name} must be a finite nonnegative schedule")))
        }
    }
}

impl From<f64> for Schedule {
    fn from(v: f64) -> Self {
        Schedule::Constant(v)
    }
}

/// Named estimator wirings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "SOBA")]
    Soba,
    #[serde(rename = "MA-SOBA")]
    MaSoba,
    #[serde(rename = "SABA")]
    Saba,
    #[serde(rename = "MA-SABA")]
    MaSaba,
    #[serde(rename = "SPABA")]
    Spaba,
    #[serde(rename = "SFFBA")]
    Sffba,
    #[serde(rename = "MSEBA")]
    Mseba,
    #[serde(rename = "SRMBA")]
    Srmba,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Soba,
        Preset::MaSoba,
        Preset::Saba,
        Preset::MaSaba,
        Preset::Spaba,
        Preset::Sffba,
        Preset::Mseba,
        Preset::Srmba,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Soba => "SOBA",
            Preset::MaSoba => "MA-SOBA",
            Preset::Saba => "SABA",
            Preset::MaSaba => "MA-SABA",
            Preset::Spaba => "SPABA",
            Preset::Sffba => "SFFBA",
            Preset::Mseba => "MSEBA",
            Preset::Srmba => "SRMBA",
        }
    }

    pub fn uses_moving_average(self) -> bool {
        matches!(self, Preset::MaSoba | Preset::MaSaba | Preset::Srmba)
    }

    /// Whether the x-channel estimator is biased (certified by `check_biased`).
    pub fn is_biased(self) -> bool {
        matches!(self, Preset::Spaba | Preset::Sffba | Preset::Mseba)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                invalid(format!("unknown preset {s:?}; valid names: {}", names.join(", ")))
            })
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    name.parse()
}

/// Default parameters derived from `N = n + m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryDefaults {
    pub batch: usize,
    pub rho_bar: f64,
    pub p: f64,
}

/// `b = ceil(sqrt(N))`, `rho_bar = b / (2N)`, `p = b / (N + b)`.
pub fn theory_defaults(n: usize, m: usize) -> TheoryDefaults {
    let big_n = (n + m) as f64;
    let mut batch = big_n.sqrt().ceil() as usize;
    // Guard against sqrt rounding one above the exact root.
    if batch > 1 && ((batch - 1) * (batch - 1)) as f64 >= big_n {
        batch -= 1;
    }
    let b = batch as f64;
    TheoryDefaults {
        batch,
        rho_bar: b / (2.0 * big_n),
        p: b / (big_n + b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: Schedule,
    pub beta: Schedule,
    pub gamma: Schedule,
    /// Moving-average weight on the x-channel.
    pub rho: f64,
    pub moving_average: bool,
    pub radius: f64,
    pub batch_f: usize,
    pub batch_g: usize,
    pub iterations: usize,
    pub estimator_x: EstimatorKind,
    pub estimator_y: EstimatorKind,
    pub estimator_z: EstimatorKind,
    pub seed: u64,
}

impl SolverConfig {
    /// Estimator wiring of `preset` with theory-driven defaults for a
    /// problem of sizes `n`, `m`. Step sizes are zero and must be set.
    pub fn from_preset(preset: Preset, n: usize, m: usize) -> Self {
        let d = theory_defaults(n, m);
        let b = d.batch.min(n).min(m).max(1);
        let big_n = (n + m) as f64;
        let zs = EstimatorKind::ZeroSarah {
            rho_bar: d.rho_bar,
            minibatch_init: false,
        };
        let page = EstimatorKind::Page { p: d.p };
        let storm = EstimatorKind::Storm {
            a: (b as f64 / big_n).clamp(f64::MIN_POSITIVE, 1.0),
        };
        let (ex, ey, ez) = match preset {
            Preset::Soba | Preset::MaSoba => (EstimatorKind::Sgd, EstimatorKind::Sgd, EstimatorKind::Sgd),
            Preset::Saba | Preset::MaSaba => (EstimatorKind::Saga, EstimatorKind::Saga, EstimatorKind::Saga),
            Preset::Spaba => (page, page, page),
            Preset::Sffba => (zs, zs, zs),
            Preset::Mseba => (page, zs, page),
            Preset::Srmba => (storm, storm, storm),
        };
        Self {
            alpha: Schedule::Constant(0.0),
            beta: Schedule::Constant(0.0),
            gamma: Schedule::Constant(0.0),
            rho: 0.1,
            moving_average: preset.uses_moving_average(),
            radius: 1.0,
            batch_f: b,
            batch_g: b,
            iterations: 0,
            estimator_x: ex,
            estimator_y: ey,
            estimator_z: ez,
            seed: 0,
        }
    }

    pub fn with_steps(mut self, alpha: f64, beta: f64, gamma: f64) -> Self {
        self.alpha = Schedule::Constant(alpha);
        self.beta = Schedule::Constant(beta);
        self.gamma = Schedule::Constant(gamma);
        self
    }

    pub fn estimator(&self, c: ChannelKind) -> EstimatorKind {
        match c {
            ChannelKind::X => self.estimator_x,
            ChannelKind::Y => self.estimator_y,
            ChannelKind::Z => self.estimator_z,
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        self.gamma.validate("gamma")?;
        if !(self.radius > 0.0) {
            return Err(invalid(format!("clipping radius must be positive, got {}", self.radius)));
        }
        if self.batch_f == 0 || self.batch_f > n {
            return Err(invalid(format!("upper batch {} outside 1..={n}", self.batch_f)));
        }
        if self.batch_g == 0 || self.batch_g > m {
            return Err(invalid(format!("lower batch {} outside 1..={m}", self.batch_g)));
        }
        if self.moving_average {
            if !(self.rho > 0.0 && self.rho <= 1.0) {
                return Err(invalid(format!("moving-average weight must lie in (0, 1], got {}", self.rho)));
            }
            if !self.estimator_x.is_unbiased() {
                return Err(invalid(format!(
                    "moving average requires an unbiased x-estimator, got {}",
                    self.estimator_x.name()
                )));
            }
        }
        for c in ChannelKind::ALL {
            self.estimator(c).validate()?;
        }
        Ok(())
    }
}

/// What one step produced, for inspection.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub draw: SampleDraw,
    /// Raw x-estimate before the moving average.
    pub v_hat_x: Vec<f64>,
    pub v_x: Vec<f64>,
    pub v_y: Vec<f64>,
    pub v_z: Vec<f64>,
}

/// Running state of one solver instance.
pub struct SolverState {
    config: SolverConfig,
    pub iterate: Iterate,
    pub k: usize,
    estimators: [EstimatorState; 3],
    ma_buffer: Option<Vec<f64>>,
    upper_rng: ChaCha8Rng,
    lower_rng: ChaCha8Rng,
    coin_rngs: [ChaCha8Rng; 3],
    meters: [EvalMeter; 3],
}

impl SolverState {
    /// Validates the configuration and initialises every estimator at `it0`.
    pub fn new<P: BilevelProblem + ?Sized>(problem: &P, config: SolverConfig, it0: Iterate) -> Result<Self> {
        config.validate(problem.n(), problem.m())?;
        it0.check_dims(problem)?;
        if !it0.is_finite() {
            return Err(invalid("initial iterate has non-finite entries"));
        }
        let mut iterate = it0;
        clip_in_place(&mut iterate.z, config.radius)?;
        let upper_rng = rng::stream(config.seed, Stream::UpperSampling);
        let lower_rng = rng::stream(config.seed, Stream::LowerSampling);
        let coin_rngs = [
            rng::stream(config.seed, Stream::ChannelX),
            rng::stream(config.seed, Stream::ChannelY),
            rng::stream(config.seed, Stream::ChannelZ),
        ];
        // Only the minibatch-initialised ZeroSARAH looks at this; it sees
        // exactly the draw step 0 will make.
        let first_draw = draw_pair(
            &mut upper_rng.clone(),
            &mut lower_rng.clone(),
            problem,
            config.batch_f,
            config.batch_g,
        );
        let mut meters = [EvalMeter::default(); 3];
        let mut init = |c: ChannelKind| {
            let ch = ProblemChannel::new(problem, c);
            EstimatorState::init(config.estimator(c), &ch, &iterate, &first_draw, &mut meters[c.index()])
        };
        let estimators = [init(ChannelKind::X)?, init(ChannelKind::Y)?, init(ChannelKind::Z)?];
        Ok(Self {
            config,
            iterate,
            k: 0,
            estimators,
            ma_buffer: None,
            upper_rng,
            lower_rng,
            coin_rngs,
            meters,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn meters(&self) -> &[EvalMeter; 3] {
        &self.meters
    }

    pub fn estimator_state(&self, c: ChannelKind) -> &EstimatorState {
        &self.estimators[c.index()]
    }

    /// Sample accesses summed over channels: `(upper, lower)`.
    pub fn samples(&self) -> (u64, u64) {
        self.meters
            .iter()
            .fold((0, 0), |(f, g), m| (f + m.upper_samples, g + m.lower_samples))
    }

    /// One iteration. On a non-finite estimate the iterate is left at the
    /// pre-step value and a `Diverged` error is returned.
    pub fn step<P: BilevelProblem + ?Sized>(&mut self, problem: &P) -> Result<StepReport> {
        let cfg = &self.config;
        let draw = draw_pair(
            &mut self.upper_rng,
            &mut self.lower_rng,
            problem,
            cfg.batch_f,
            cfg.batch_g,
        );
        let k = self.k;
        let mut estimate = |c: ChannelKind| -> Result<Vec<f64>> {
            let ch = ProblemChannel::new(problem, c);
            let i = c.index();
            let v = self.estimators[i].estimate(
                &ch,
                &self.iterate,
                &draw,
                &mut self.coin_rngs[i],
                &mut self.meters[i],
            )?;
            if linalg::all_finite(&v) {
                Ok(v)
            } else {
                Err(Error::Diverged {
                    iteration: k,
                    channel: c.name(),
                })
            }
        };
        let v_hat_x = estimate(ChannelKind::X)?;
        let v_y = estimate(ChannelKind::Y)?;
        let v_z = estimate(ChannelKind::Z)?;

        let v_x = if cfg.moving_average {
            let rho = cfg.rho;
            let v = match &self.ma_buffer {
                // v^x_{-1} is the first raw estimate, so v^x_0 = vhat^x_0.
                None => v_hat_x.clone(),
                Some(prev) => prev.iter().zip(&v_hat_x).map(|(p, h)| (1.0 - rho) * p + rho * h).collect(),
            };
            self.ma_buffer = Some(v.clone());
            v
        } else {
            v_hat_x.clone()
        };

        let (alpha, beta, gamma) = (cfg.alpha.at(k), cfg.beta.at(k), cfg.gamma.at(k));
        let mut next = self.iterate.clone();
        linalg::axpy(-alpha, &v_x, &mut next.x);
        linalg::axpy(-beta, &v_y, &mut next.y);
        linalg::axpy(-gamma, &v_z, &mut next.z);
        clip_in_place(&mut next.z, cfg.radius)?;
        if !next.is_finite() {
            let channel = if !linalg::all_finite(&next.x) {
                "x"
            } else if !linalg::all_finite(&next.y) {
                "y"
            } else {
                "z"
            };
            return Err(Error::Diverged { iteration: k, channel });
        }
        self.iterate = next;
        self.k += 1;
        Ok(StepReport {
            draw,
            v_hat_x,
            v_x,
            v_y,
            v_z,
        })
    }
}

fn draw_pair<P: BilevelProblem + ?Sized>(
    upper: &mut ChaCha8Rng,
    lower: &mut ChaCha8Rng,
    problem: &P,
    bf: usize,
    bg: usize,
) -> SampleDraw {
    SampleDraw::new(
        rng::sample_without_replacement(upper, problem.n(), bf),
        rng::sample_without_replacement(lower, problem.m(), bg),
    )
}

/// Source of the stationarity metric `||grad H(x)||^2`.
pub trait StationarityProbe: Sync {
    fn grad_h_sq(&self, x: &[f64]) -> Result<f64>;
}

impl<T: StationarityProbe + ?Sized> StationarityProbe for &T {
    fn grad_h_sq(&self, x: &[f64]) -> Result<f64> {
        (**self).grad_h_sq(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub samples_f: u64,
    pub samples_g: u64,
    pub grad_h_sq: Option<f64>,
    pub f_val: f64,
    pub g_val: f64,
    pub test_metric: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub meters: [EvalMeter; 3],
    pub final_iterate: Option<Iterate>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Smallest recorded `||grad H||^2`.
    pub fn best_grad_h_sq(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.grad_h_sq).reduce(f64::min)
    }

    /// Total sample accesses at the first row reaching `target`.
    pub fn samples_to_reach(&self, target: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.grad_h_sq.is_some_and(|g| g <= target))
            .map(|r| r.samples_f + r.samples_g)
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub trace: RunTrace,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} trace rows kept)", self.error, self.trace.rows.len())
    }
}

impl std::error::Error for RunFailure {}

pub struct RunOptions<'a> {
    /// Record every `cadence` steps; `None` means `ceil(K / 200)`.
    pub cadence: Option<usize>,
    pub probe: Option<&'a dyn StationarityProbe>,
    /// Stop at the first recorded row with `grad_h_sq <= target`.
    pub stop_below: Option<f64>,
    /// Fill `wall_ms`. Off by default so traces are byte-reproducible.
    pub timing: bool,
    /// Skip the full-batch objective values (recorded as NaN).
    pub skip_values: bool,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            cadence: None,
            probe: None,
            stop_below: None,
            timing: false,
            skip_values: false,
        }
    }
}

pub fn default_cadence(iterations: usize) -> usize {
    iterations.div_ceil(200).max(1)
}

/// Runs `config.iterations` steps from `it0`.
pub fn run<P: BilevelProblem + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    it0: Iterate,
    opts: &RunOptions<'_>,
) -> std::result::Result<RunTrace, Box<RunFailure>> {
    let fail = |error: Error, trace: RunTrace| Box::new(RunFailure { error, trace });
    let mut trace = RunTrace::default();
    let start = Instant::now();
    let mut state = match SolverState::new(problem, config.clone(), it0) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, trace)),
    };
    let k_max = config.iterations;
    if k_max == 0 {
        trace.final_iterate = Some(state.iterate.clone());
        trace.meters = state.meters;
        return Ok(trace);
    }
    let cadence = opts.cadence.unwrap_or_else(|| default_cadence(k_max)).max(1);

    let record = |state: &SolverState, trace: &mut RunTrace| -> Result<bool> {
        let it = &state.iterate;
        let grad_h_sq = match opts.probe {
            Some(p) => Some(p.grad_h_sq(&it.x)?),
            None => None,
        };
        let (samples_f, samples_g) = state.samples();
        let (f_val, g_val) = if opts.skip_values {
            (f64::NAN, f64::NAN)
        } else {
            (problem.upper_value(&it.x, &it.y), problem.lower_value(&it.x, &it.y))
        };
        trace.rows.push(TraceRow {
            iter: state.k,
            samples_f,
            samples_g,
            grad_h_sq,
            f_val,
            g_val,
            test_metric: problem.test_metric(&it.x, &it.y),
            wall_ms: opts.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        });
        Ok(matches!((opts.stop_below, grad_h_sq), (Some(t), Some(g)) if g <= t))
    };

    let finish = |state: &SolverState, mut trace: RunTrace| {
        trace.meters = state.meters;
        trace.final_iterate = Some(state.iterate.clone());
        trace
    };

    match record(&state, &mut trace) {
        Ok(true) => return Ok(finish(&state, trace)),
        Ok(false) => {}
        Err(e) => return Err(fail(e, finish(&state, trace))),
    }
    while state.k < k_max {
        if let Err(e) = state.step(problem) {
            return Err(fail(e, finish(&state, trace)));
        }
        if state.k % cadence == 0 || state.k == k_max {
            match record(&state, &mut trace) {
                Ok(true) => break,
                Ok(false) => {}
                Err(e) => return Err(fail(e, finish(&state, trace))),
            }
        }
    }
    Ok(finish(&state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy::ScalarToy;

    /// `n = 4`, `m = 3` scalar problem with distinct components:
    /// `F_i = a_i y^2/2 + c_i x y`, `G_j = (y - x)^2/2 + e_j y`.
    struct Scalar4x3;

    const A: [f64; 4] = [1.0, 2.0, 0.5, 1.5];
    const C: [f64; 4] = [0.3, -0.2, 0.1, 0.0];
    const E: [f64; 3] = [0.5, -1.0, 0.5];

    impl BilevelProblem for Scalar4x3 {
        fn n(&self) -> usize {
            4
        }
        fn m(&self) -> usize {
            3
        }
        fn dim_x(&self) -> usize {
            1
        }
        fn dim_y(&self) -> usize {
            1
        }
        fn grad1_f(&self, i: usize, _: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            out[0] += s * C[i] * y[0];
        }
        fn grad2_f(&self, i: usize, x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            out[0] += s * (A[i] * y[0] + C[i] * x[0]);
        }
        fn grad2_g(&self, j: usize, x: &[f64], y: &[f64], s: f64, out: &mut [f64]) {
            out[0] += s * (y[0] - x[0] + E[j]);
        }
        fn hvp22_g(&self, _: usize, _: &[f64], _: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
            out[0] += s * v[0];
        }
        fn jvp12_g(&self, _: usize, _: &[f64], _: &[f64], v: &[f64], s: f64, out: &mut [f64]) {
            out[0] -= s * v[0];
        }
        fn value_f(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
            0.5 * A[i] * y[0] * y[0] + C[i] * x[0] * y[0]
        }
        fn value_g(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
            0.5 * (y[0] - x[0]).powi(2) + E[j] * y[0]
        }
        fn lower_curvature(&self, _: &[f64]) -> (f64, f64) {
            (1.0, 1.0)
        }
    }

    fn it(x: f64, y: f64, z: f64) -> Iterate {
        Iterate::new(vec![x], vec![y], vec![z]).unwrap()
    }

    #[test]
    fn theory_defaults_examples() {
        let d = theory_defaults(5000, 5000);
        assert_eq!(d.batch, 100);
        assert_eq!(d.rho_bar, 1.0 / 200.0);
        assert_eq!(d.p, 100.0 / 10100.0);
        assert_eq!(theory_defaults(100, 100).batch, 15);
        assert_eq!(theory_defaults(50, 50).batch, 10);
    }

    #[test]
    fn presets_wire_estimators() {
        let c = SolverConfig::from_preset(preset("MSEBA").unwrap(), 5000, 5000);
        assert!(matches!(c.estimator_y, EstimatorKind::ZeroSarah { .. }));
        assert!(matches!(c.estimator_x, EstimatorKind::Page { .. }));
        assert!(matches!(c.estimator_z, EstimatorKind::Page { .. }));
        let c = SolverConfig::from_preset(Preset::Sffba, 5000, 5000);
        assert_eq!(c.batch_f, 100);
        assert_eq!(
            c.estimator_x,
            EstimatorKind::ZeroSarah {
                rho_bar: 1.0 / 200.0,
                minibatch_init: false
            }
        );
        let c = SolverConfig::from_preset(Preset::Spaba, 5000, 5000);
        assert_eq!(c.estimator_z, EstimatorKind::Page { p: 100.0 / 10100.0 });
        assert!(SolverConfig::from_preset(Preset::MaSaba, 10, 10).moving_average);
        assert!(!SolverConfig::from_preset(Preset::Saba, 10, 10).moving_average);
        let err = preset("FOO").unwrap_err().to_string();
        assert!(err.contains("SOBA") && err.contains("SRMBA"));
    }

    #[test]
    fn moving_average_needs_unbiased_x() {
        let mut c = SolverConfig::from_preset(Preset::Spaba, 4, 3);
        c.moving_average = true;
        assert!(matches!(c.validate(4, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_steps_leave_iterate() {
        let p = Scalar4x3;
        let cfg = SolverConfig::from_preset(Preset::Saba, 4, 3);
        let mut s = SolverState::new(&p, cfg, it(0.3, -0.2, 0.5)).unwrap();
        for _ in 0..5 {
            s.step(&p).unwrap();
        }
        assert_eq!(s.iterate, it(0.3, -0.2, 0.5));
        assert_eq!(s.k, 5);
    }

    #[test]
    fn soba_single_step_on_toy() {
        // (x, y, z) = (2, 5, 3): v^x = 3, v^y = 3, v^z = 3 - 5 = -2.
        // alpha = 0.1, beta = 0.2, gamma = 0.5, R = 10:
        // x = 2 - 0.3 = 1.7, y = 5 - 0.6 = 4.4, z = 3 + 1 = 4.
        let cfg = SolverConfig {
            radius: 10.0,
            ..SolverConfig::from_preset(Preset::Soba, 1, 1).with_steps(0.1, 0.2, 0.5)
        };
        let mut s = SolverState::new(&ScalarToy, cfg, it(2.0, 5.0, 3.0)).unwrap();
        s.step(&ScalarToy).unwrap();
        assert!((s.iterate.x[0] - 1.7).abs() < 1e-15);
        assert!((s.iterate.y[0] - 4.4).abs() < 1e-15);
        assert!((s.iterate.z[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn ma_with_rho_one_is_raw_estimate() {
        let p = Scalar4x3;
        let cfg = SolverConfig {
            rho: 1.0,
            batch_f: 2,
            batch_g: 1,
            ..SolverConfig::from_preset(Preset::MaSoba, 4, 3).with_steps(0.1, 0.1, 0.1)
        };
        let mut s = SolverState::new(&p, cfg, it(0.5, 0.5, 0.5)).unwrap();
        for _ in 0..10 {
            let r = s.step(&p).unwrap();
            assert_eq!(r.v_x, r.v_hat_x);
        }
    }

    #[test]
    fn ma_unroll_identity() {
        let p = Scalar4x3;
        let rho = 0.3;
        let cfg = SolverConfig {
            rho,
            batch_f: 2,
            batch_g: 1,
            ..SolverConfig::from_preset(Preset::MaSaba, 4, 3).with_steps(0.05, 0.1, 0.1)
        };
        let mut s = SolverState::new(&p, cfg, it(0.5, 0.5, 0.5)).unwrap();
        let reports: Vec<StepReport> = (0..100).map(|_| s.step(&p).unwrap()).collect();
        let v0 = reports[0].v_x[0];
        for k in 1..100 {
            let mut unrolled = (1.0 - rho).powi(k as i32) * v0;
            for j in 0..k {
                unrolled += rho * (1.0 - rho).powi((k - 1 - j) as i32) * reports[j + 1].v_hat_x[0];
            }
            assert!((reports[k].v_x[0] - unrolled).abs() <= 1e-9);
        }
    }

    #[test]
    fn z_stays_in_ball() {
        let p = Scalar4x3;
        for pr in Preset::ALL {
            let cfg = SolverConfig {
                radius: 0.25,
                iterations: 0,
                batch_f: 2,
                batch_g: 2,
                ..SolverConfig::from_preset(pr, 4, 3).with_steps(0.3, 0.5, 2.0)
            };
            let mut s = SolverState::new(&p, cfg, it(1.0, -3.0, 2.0)).unwrap();
            assert!(linalg::norm(&s.iterate.z) <= 0.25);
            for _ in 0..200 {
                s.step(&p).unwrap();
                assert!(linalg::norm(&s.iterate.z) <= 0.25);
            }
        }
    }

    #[test]
    fn divergence_is_typed() {
        let p = Scalar4x3;
        let cfg = SolverConfig {
            iterations: 2000,
            ..SolverConfig::from_preset(Preset::Soba, 4, 3).with_steps(50.0, 50.0, 50.0)
        };
        let err = run(&p, &cfg, it(1.0, 1.0, 0.0), &RunOptions::default()).unwrap_err();
        assert!(matches!(err.error, Error::Diverged { .. }));
        assert!(!err.trace.rows.is_empty());
    }

    #[test]
    fn run_zero_iterations_is_empty() {
        let p = Scalar4x3;
        let cfg = SolverConfig::from_preset(Preset::Spaba, 4, 3);
        let t = run(&p, &cfg, it(0.1, 0.2, 0.3), &RunOptions::default()).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.final_iterate.unwrap(), it(0.1, 0.2, 0.3));
    }

    #[test]
    fn runs_are_deterministic() {
        let p = Scalar4x3;
        for pr in Preset::ALL {
            let cfg = SolverConfig {
                iterations: 300,
                seed: 11,
                batch_f: 2,
                batch_g: 2,
                ..SolverConfig::from_preset(pr, 4, 3).with_steps(0.05, 0.2, 0.2)
            };
            let opts = RunOptions {
                cadence: Some(7),
                ..Default::default()
            };
            let a = run(&p, &cfg, it(0.5, 0.0, 0.0), &opts).unwrap();
            let b = run(&p, &cfg, it(0.5, 0.0, 0.0), &opts).unwrap();
            assert_eq!(a.rows, b.rows);
            assert_eq!(a.final_iterate, b.final_iterate);
        }
    }

    #[test]
    fn y_estimator_swap_keeps_x_draws() {
        let p = Scalar4x3;
        let base = SolverConfig {
            batch_f: 2,
            batch_g: 2,
            seed: 5,
            ..SolverConfig::from_preset(Preset::Spaba, 4, 3).with_steps(0.05, 0.2, 0.2)
        };
        let swapped = SolverConfig {
            estimator_y: EstimatorKind::Saga,
            ..base.clone()
        };
        let mut a = SolverState::new(&p, base, it(0.5, 0.0, 0.0)).unwrap();
        let mut b = SolverState::new(&p, swapped, it(0.5, 0.0, 0.0)).unwrap();
        for _ in 0..50 {
            assert_eq!(a.step(&p).unwrap().draw, b.step(&p).unwrap().draw);
        }
    }

    #[test]
    fn meters_are_monotone_and_spaba_mean_cost() {
        let p = Scalar4x3;
        let cfg = SolverConfig {
            batch_f: 1,
            batch_g: 1,
            estimator_x: EstimatorKind::Page { p: 0.25 },
            estimator_y: EstimatorKind::Page { p: 0.25 },
            estimator_z: EstimatorKind::Page { p: 0.25 },
            ..SolverConfig::from_preset(Preset::Spaba, 4, 3).with_steps(0.01, 0.01, 0.01)
        };
        let mut s = SolverState::new(&p, cfg, it(0.5, 0.0, 0.0)).unwrap();
        let start = s.meters()[0];
        let mut prev = start;
        let steps = 20_000;
        for _ in 0..steps {
            s.step(&p).unwrap();
            let m = s.meters()[0];
            assert!(m.upper_samples >= prev.upper_samples && m.lower_samples >= prev.lower_samples);
            prev = m;
        }
        let per_step = (prev.total_samples() - start.total_samples()) as f64 / steps as f64;
        // p N + (1 - p) b with N = 7, b = |I| + |J| = 2
        let expected = 0.25 * 7.0 + 0.75 * 2.0;
        assert!((per_step / expected - 1.0).abs() < 0.03);
    }
}
