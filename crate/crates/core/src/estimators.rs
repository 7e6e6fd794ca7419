//! Pluggable stochastic estimators for the three update channels.
//!
//! Every channel direction has the form
//! `s_f * mean_I(f-part) + s_g * mean_J(g-part)` with a fixed sign pair
//! (`x: (+1, -1)`, `y: (0, +1)`, `z: (-1, +1)`). Estimators only see a
//! channel through [`ChannelEvaluator`], so the same code serves all three.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{BilevelProblem, Iterate, SampleDraw};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    X,
    Y,
    Z,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] = [ChannelKind::X, ChannelKind::Y, ChannelKind::Z];

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::X => "x",
            ChannelKind::Y => "y",
            ChannelKind::Z => "z",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Access to one channel's per-sample parts.
///
/// `component_f` / `component_g` accumulate `scale * part` into `out`.
pub trait ChannelEvaluator {
    fn dim(&self) -> usize;
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    /// Signs applied to the upper-level and lower-level means.
    fn signs(&self) -> (f64, f64);
    fn component_f(&self, i: usize, it: &Iterate, scale: f64, out: &mut [f64]);
    fn component_g(&self, j: usize, it: &Iterate, scale: f64, out: &mut [f64]);

    fn has_upper_part(&self) -> bool {
        self.signs().0 != 0.0
    }

    /// Minibatch channel direction at an arbitrary iterate.
    fn eval_at(&self, it: &Iterate, upper: &[usize], lower: &[usize], meter: &mut EvalMeter) -> Vec<f64> {
        let (sf, sg) = self.signs();
        let mut out = vec![0.0; self.dim()];
        if sf != 0.0 {
            let w = sf / upper.len() as f64;
            for &i in upper {
                self.component_f(i, it, w, &mut out);
            }
            meter.upper_evals += upper.len() as u64;
        }
        let w = sg / lower.len() as f64;
        for &j in lower {
            self.component_g(j, it, w, &mut out);
        }
        meter.lower_evals += lower.len() as u64;
        out
    }
}

/// Channel view of a [`BilevelProblem`].
pub struct ProblemChannel<'a, P: ?Sized> {
    problem: &'a P,
    kind: ChannelKind,
}

impl<'a, P: BilevelProblem + ?Sized> ProblemChannel<'a, P> {
    pub fn new(problem: &'a P, kind: ChannelKind) -> Self {
        Self { problem, kind }
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }
}

impl<P: BilevelProblem + ?Sized> ChannelEvaluator for ProblemChannel<'_, P> {
    fn dim(&self) -> usize {
        match self.kind {
            ChannelKind::X => self.problem.dim_x(),
            ChannelKind::Y | ChannelKind::Z => self.problem.dim_y(),
        }
    }

    fn n(&self) -> usize {
        self.problem.n()
    }

    fn m(&self) -> usize {
        self.problem.m()
    }

    fn signs(&self) -> (f64, f64) {
        match self.kind {
            ChannelKind::X => (1.0, -1.0),
            ChannelKind::Y => (0.0, 1.0),
            ChannelKind::Z => (-1.0, 1.0),
        }
    }

    fn component_f(&self, i: usize, it: &Iterate, scale: f64, out: &mut [f64]) {
        match self.kind {
            ChannelKind::X => self.problem.grad1_f(i, &it.x, &it.y, scale, out),
            ChannelKind::Y => {}
            ChannelKind::Z => self.problem.grad2_f(i, &it.x, &it.y, scale, out),
        }
    }

    fn component_g(&self, j: usize, it: &Iterate, scale: f64, out: &mut [f64]) {
        match self.kind {
            ChannelKind::X => self.problem.jvp12_g(j, &it.x, &it.y, &it.z, scale, out),
            ChannelKind::Y => self.problem.grad2_g(j, &it.x, &it.y, scale, out),
            ChannelKind::Z => self.problem.hvp22_g(j, &it.x, &it.y, &it.z, scale, out),
        }
    }
}

/// Exact per-channel counters.
///
/// `*_evals` count per-sample oracle evaluations (a sample evaluated at two
/// points counts twice). `*_samples` count sample accesses: a full pass
/// costs `n` (resp. `m`), a minibatch step costs `|I|` (resp. `|J|`)
/// regardless of how many points the sample is evaluated at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalMeter {
    pub upper_evals: u64,
    pub lower_evals: u64,
    pub upper_samples: u64,
    pub lower_samples: u64,
}

impl EvalMeter {
    pub fn total_samples(&self) -> u64 {
        self.upper_samples + self.lower_samples
    }

    pub fn total_evals(&self) -> u64 {
        self.upper_evals + self.lower_evals
    }

    fn access<E: ChannelEvaluator + ?Sized>(&mut self, eval: &E, upper: usize, lower: usize) {
        if eval.has_upper_part() {
            self.upper_samples += upper as u64;
        }
        self.lower_samples += lower as u64;
    }

    pub fn add(&mut self, other: &EvalMeter) {
        self.upper_evals += other.upper_evals;
        self.lower_evals += other.lower_evals;
        self.upper_samples += other.upper_samples;
        self.lower_samples += other.lower_samples;
    }
}

/// Estimator selection for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorKind {
    Sgd,
    Saga,
    Page {
        p: f64,
    },
    #[serde(rename = "zerosarah")]
    ZeroSarah {
        rho_bar: f64,
        #[serde(default)]
        minibatch_init: bool,
    },
    Storm {
        a: f64,
    },
}

impl EstimatorKind {
    /// Unbiased estimators are paired with the moving average on `x`.
    pub fn is_unbiased(&self) -> bool {
        matches!(self, EstimatorKind::Sgd | EstimatorKind::Saga | EstimatorKind::Storm { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Sgd => "sgd",
            EstimatorKind::Saga => "saga",
            EstimatorKind::Page { .. } => "page",
            EstimatorKind::ZeroSarah { .. } => "zerosarah",
            EstimatorKind::Storm { .. } => "storm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::Page { p } if !(p > 0.0 && p <= 1.0) => {
                Err(invalid(format!("PAGE probability must lie in (0, 1], got {p}")))
            }
            EstimatorKind::ZeroSarah { rho_bar, .. } if !(0.0..=1.0).contains(&rho_bar) => {
                Err(invalid(format!("ZeroSARAH momentum must lie in [0, 1], got {rho_bar}")))
            }
            EstimatorKind::Storm { a } if !(a > 0.0 && a <= 1.0) => {
                Err(invalid(format!("STORM coefficient must lie in (0, 1], got {a}")))
            }
            _ => Ok(()),
        }
    }
}

/// Plain minibatch estimate.
pub fn sgd_estimate<E: ChannelEvaluator + ?Sized>(
    eval: &E,
    it: &Iterate,
    draw: &SampleDraw,
    meter: &mut EvalMeter,
) -> Vec<f64> {
    meter.access(eval, draw.upper.len(), draw.lower.len());
    eval.eval_at(it, &draw.upper, &draw.lower, meter)
}

/// Per-sample part tables shared by SAGA and ZeroSARAH.
///
/// Rows store evaluated parts (not the memorised points); the lower-level
/// row of the x and z channels therefore already folds in the stored `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTables {
    pub table_f: Vec<Vec<f64>>,
    pub table_g: Vec<Vec<f64>>,
    pub avg_f: Vec<f64>,
    pub avg_g: Vec<f64>,
}

impl PartTables {
    fn at<E: ChannelEvaluator + ?Sized>(eval: &E, it: &Iterate, meter: &mut EvalMeter) -> Self {
        let dim = eval.dim();
        let table_f: Vec<Vec<f64>> = if eval.has_upper_part() {
            meter.upper_evals += eval.n() as u64;
            (0..eval.n())
                .map(|i| {
                    let mut row = vec![0.0; dim];
                    eval.component_f(i, it, 1.0, &mut row);
                    row
                })
                .collect()
        } else {
            Vec::new()
        };
        meter.lower_evals += eval.m() as u64;
        let table_g: Vec<Vec<f64>> = (0..eval.m())
            .map(|j| {
                let mut row = vec![0.0; dim];
                eval.component_g(j, it, 1.0, &mut row);
                row
            })
            .collect();
        let avg_f = mean_rows(&table_f, dim);
        let avg_g = mean_rows(&table_g, dim);
        Self {
            table_f,
            table_g,
            avg_f,
            avg_g,
        }
    }

    /// Tables seeded from one minibatch only: sampled rows hold their parts
    /// at `it`, every other row holds the minibatch mean. Biased.
    fn from_minibatch<E: ChannelEvaluator + ?Sized>(
        eval: &E,
        it: &Iterate,
        draw: &SampleDraw,
        meter: &mut EvalMeter,
    ) -> Self {
        let dim = eval.dim();
        let fill = |rows: usize, idx: &[usize], part: &dyn Fn(usize, &mut [f64])| {
            let sampled: Vec<(usize, Vec<f64>)> = idx
                .iter()
                .map(|&i| {
                    let mut row = vec![0.0; dim];
                    part(i, &mut row);
                    (i, row)
                })
                .collect();
            let mut mean = vec![0.0; dim];
            for (_, r) in &sampled {
                linalg::axpy(1.0 / sampled.len() as f64, r, &mut mean);
            }
            let mut table = vec![mean; rows];
            for (i, r) in sampled {
                table[i] = r;
            }
            table
        };
        let table_f = if eval.has_upper_part() {
            meter.upper_evals += draw.upper.len() as u64;
            fill(eval.n(), &draw.upper, &|i, out| eval.component_f(i, it, 1.0, out))
        } else {
            Vec::new()
        };
        meter.lower_evals += draw.lower.len() as u64;
        let table_g = fill(eval.m(), &draw.lower, &|j, out| eval.component_g(j, it, 1.0, out));
        let avg_f = mean_rows(&table_f, dim);
        let avg_g = mean_rows(&table_g, dim);
        Self {
            table_f,
            table_g,
            avg_f,
            avg_g,
        }
    }

    /// Table-memory direction: full average (`None`) or mean over rows.
    fn direction(&self, signs: (f64, f64), draw: Option<&SampleDraw>) -> Vec<f64> {
        let dim = self.avg_g.len();
        let mut out = vec![0.0; dim];
        match draw {
            None => {
                if signs.0 != 0.0 {
                    linalg::axpy(signs.0, &self.avg_f, &mut out);
                }
                linalg::axpy(signs.1, &self.avg_g, &mut out);
            }
            Some(d) => {
                if signs.0 != 0.0 {
                    let w = signs.0 / d.upper.len() as f64;
                    for &i in &d.upper {
                        linalg::axpy(w, &self.table_f[i], &mut out);
                    }
                }
                let w = signs.1 / d.lower.len() as f64;
                for &j in &d.lower {
                    linalg::axpy(w, &self.table_g[j], &mut out);
                }
            }
        }
        out
    }

    /// Overwrites rows and corrects the running means incrementally.
    fn refresh(&mut self, fresh_f: Vec<(usize, Vec<f64>)>, fresh_g: Vec<(usize, Vec<f64>)>) {
        let n = self.table_f.len() as f64;
        for (i, row) in fresh_f {
            for ((a, new), old) in self.avg_f.iter_mut().zip(&row).zip(&self.table_f[i]) {
                *a += (new - old) / n;
            }
            self.table_f[i] = row;
        }
        let m = self.table_g.len() as f64;
        for (j, row) in fresh_g {
            for ((a, new), old) in self.avg_g.iter_mut().zip(&row).zip(&self.table_g[j]) {
                *a += (new - old) / m;
            }
            self.table_g[j] = row;
        }
    }

    /// Largest deviation between the running means and a full recomputation.
    pub fn average_drift(&self) -> f64 {
        let dim = self.avg_g.len();
        let rf = mean_rows(&self.table_f, dim);
        let rg = mean_rows(&self.table_g, dim);
        let df = if self.table_f.is_empty() {
            0.0
        } else {
            rf.iter().zip(&self.avg_f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let dg = rg.iter().zip(&self.avg_g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        df.max(dg)
    }
}

fn mean_rows(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if rows.is_empty() {
        return out;
    }
    let w = 1.0 / rows.len() as f64;
    for r in rows {
        linalg::axpy(w, r, &mut out);
    }
    out
}

/// Evaluates individual parts at `it` for the rows of `draw`, returning
/// them alongside the channel direction they combine into.
fn fresh_parts<E: ChannelEvaluator + ?Sized>(
    eval: &E,
    it: &Iterate,
    draw: &SampleDraw,
    meter: &mut EvalMeter,
) -> (Vec<f64>, Vec<(usize, Vec<f64>)>, Vec<(usize, Vec<f64>)>) {
    let dim = eval.dim();
    let (sf, sg) = eval.signs();
    let mut dir = vec![0.0; dim];
    let mut fresh_f = Vec::new();
    if eval.has_upper_part() {
        let w = sf / draw.upper.len() as f64;
        for &i in &draw.upper {
            let mut row = vec![0.0; dim];
            eval.component_f(i, it, 1.0, &mut row);
            linalg::axpy(w, &row, &mut dir);
            fresh_f.push((i, row));
        }
        meter.upper_evals += draw.upper.len() as u64;
    }
    let w = sg / draw.lower.len() as f64;
    let mut fresh_g = Vec::with_capacity(draw.lower.len());
    for &j in &draw.lower {
        let mut row = vec![0.0; dim];
        eval.component_g(j, it, 1.0, &mut row);
        linalg::axpy(w, &row, &mut dir);
        fresh_g.push((j, row));
    }
    meter.lower_evals += draw.lower.len() as u64;
    (dir, fresh_f, fresh_g)
}

/// SAGA: `fresh - stored + table average`, per part, then refresh rows.
#[derive(Debug, Clone, Default)]
pub struct SagaState {
    tables: Option<PartTables>,
}

impl SagaState {
    pub fn init<E: ChannelEvaluator + ?Sized>(eval: &E, it0: &Iterate, meter: &mut EvalMeter) -> Self {
        meter.access(eval, eval.n(), eval.m());
        Self {
            tables: Some(PartTables::at(eval, it0, meter)),
        }
    }

    pub fn tables(&self) -> Option<&PartTables> {
        self.tables.as_ref()
    }

    pub fn estimate<E: ChannelEvaluator + ?Sized>(
        &mut self,
        eval: &E,
        it: &Iterate,
        draw: &SampleDraw,
        meter: &mut EvalMeter,
    ) -> Result<Vec<f64>> {
        let tables = self
            .tables
            .as_mut()
            .ok_or_else(|| Error::State("SAGA tables not initialised".into()))?;
        meter.access(eval, draw.upper.len(), draw.lower.len());
        let signs = eval.signs();
        let (mut v, fresh_f, fresh_g) = fresh_parts(eval, it, draw, meter);
        let stored = tables.direction(signs, Some(draw));
        let avg = tables.direction(signs, None);
        linalg::axpy(-1.0, &stored, &mut v);
        linalg::axpy(1.0, &avg, &mut v);
        tables.refresh(fresh_f, fresh_g);
        Ok(v)
    }
}

/// ZeroSARAH recursion
/// `v_k = (1-r)(v_{k-1} - D_{k-1;I,J}) + D_{k;I,J} + r (Dhat_{[n],[m]} - Dhat_{I,J})`
/// where both `D` terms use the current draw and `Dhat` reads the tables.
#[derive(Debug, Clone)]
pub struct ZeroSarahState {
    pub rho_bar: f64,
    inner: Option<ZeroSarahInner>,
}

#[derive(Debug, Clone)]
struct ZeroSarahInner {
    tables: PartTables,
    v_prev: Vec<f64>,
    prev_iterate: Iterate,
    prev_draw: Option<SampleDraw>,
}

impl ZeroSarahState {
    /// Uninitialised state; `estimate` fails until `init` has run.
    pub fn new(rho_bar: f64) -> Self {
        Self { rho_bar, inner: None }
    }

    /// One full pass at `it0`: tables filled, `v_prev` = full direction.
    pub fn init<E: ChannelEvaluator + ?Sized>(
        eval: &E,
        it0: &Iterate,
        rho_bar: f64,
        meter: &mut EvalMeter,
    ) -> Self {
        meter.access(eval, eval.n(), eval.m());
        let tables = PartTables::at(eval, it0, meter);
        let v_prev = tables.direction(eval.signs(), None);
        Self {
            rho_bar,
            inner: Some(ZeroSarahInner {
                tables,
                v_prev,
                prev_iterate: it0.clone(),
                prev_draw: None,
            }),
        }
    }

    /// Full-gradient-free start: only `draw` is evaluated.
    pub fn init_minibatch<E: ChannelEvaluator + ?Sized>(
        eval: &E,
        it0: &Iterate,
        draw: &SampleDraw,
        rho_bar: f64,
        meter: &mut EvalMeter,
    ) -> Self {
        meter.access(eval, draw.upper.len(), draw.lower.len());
        let tables = PartTables::from_minibatch(eval, it0, draw, meter);
        let v_prev = tables.direction(eval.signs(), None);
        Self {
            rho_bar,
            inner: Some(ZeroSarahInner {
                tables,
                v_prev,
                prev_iterate: it0.clone(),
                prev_draw: Some(draw.clone()),
            }),
        }
    }

    pub fn tables(&self) -> Option<&PartTables> {
        self.inner.as_ref().map(|s| &s.tables)
    }

    pub fn v_prev(&self) -> Option<&[f64]> {
        self.inner.as_ref().map(|s| s.v_prev.as_slice())
    }

    pub fn prev_draw(&self) -> Option<&SampleDraw> {
        self.inner.as_ref().and_then(|s| s.prev_draw.as_ref())
    }

    pub fn estimate<E: ChannelEvaluator + ?Sized>(
        &mut self,
        eval: &E,
        it: &Iterate,
        draw: &SampleDraw,
        meter: &mut EvalMeter,
    ) -> Result<Vec<f64>> {
        let r = self.rho_bar;
        let st = self
            .inner
            .as_mut()
            .ok_or_else(|| Error::State("ZeroSARAH state not initialised".into()))?;
        meter.access(eval, draw.upper.len(), draw.lower.len());
        let signs = eval.signs();
        let (d_now, fresh_f, fresh_g) = fresh_parts(eval, it, draw, meter);
        let d_prev = eval.eval_at(&st.prev_iterate, &draw.upper, &draw.lower, meter);
        let memory_full = st.tables.direction(signs, None);
        let memory_draw = st.tables.direction(signs, Some(draw));

        let mut v = d_now;
        for k in 0..v.len() {
            v[k] += (1.0 - r) * (st.v_prev[k] - d_prev[k]) + r * (memory_full[k] - memory_draw[k]);
        }
        st.tables.refresh(fresh_f, fresh_g);
        st.v_prev.clone_from(&v);
        st.prev_iterate = it.clone();
        st.prev_draw = Some(draw.clone());
        Ok(v)
    }
}

/// State shared by the two-point recursions (PAGE, STORM).
#[derive(Debug, Clone)]
pub struct RecursiveState {
    pub v_prev: Vec<f64>,
    pub prev_iterate: Iterate,
}

impl RecursiveState {
    /// `v_prev` = full direction at `it0`.
    pub fn init<E: ChannelEvaluator + ?Sized>(eval: &E, it0: &Iterate, meter: &mut EvalMeter) -> Self {
        meter.access(eval, eval.n(), eval.m());
        let full = SampleDraw::full(eval.n(), eval.m());
        Self {
            v_prev: eval.eval_at(it0, &full.upper, &full.lower, meter),
            prev_iterate: it0.clone(),
        }
    }
}

/// PAGE: full direction on heads, otherwise
/// `v_prev + D(it_k; draw) - D(it_{k-1}; draw)` with one shared draw.
#[derive(Debug, Clone)]
pub struct PageState {
    pub p: f64,
    pub rec: RecursiveState,
}

impl PageState {
    pub fn init<E: ChannelEvaluator + ?Sized>(eval: &E, it0: &Iterate, p: f64, meter: &mut EvalMeter) -> Self {
        Self {
            p,
            rec: RecursiveState::init(eval, it0, meter),
        }
    }

    pub fn estimate<E: ChannelEvaluator + ?Sized>(
        &mut self,
        eval: &E,
        it: &Iterate,
        draw: &SampleDraw,
        heads: bool,
        meter: &mut EvalMeter,
    ) -> Vec<f64> {
        let v = if heads {
            meter.access(eval, eval.n(), eval.m());
            let full = SampleDraw::full(eval.n(), eval.m());
            eval.eval_at(it, &full.upper, &full.lower, meter)
        } else {
            meter.access(eval, draw.upper.len(), draw.lower.len());
            let now = eval.eval_at(it, &draw.upper, &draw.lower, meter);
            let before = eval.eval_at(&self.rec.prev_iterate, &draw.upper, &draw.lower, meter);
            let mut v = self.rec.v_prev.clone();
            for k in 0..v.len() {
                v[k] += now[k] - before[k];
            }
            v
        };
        self.rec.v_prev.clone_from(&v);
        self.rec.prev_iterate = it.clone();
        v
    }
}

/// STORM: `v_k = D(it_k; draw) + (1 - a)(v_prev - D(it_{k-1}; draw))`.
#[derive(Debug, Clone)]
pub struct StormState {
    pub a: f64,
    pub rec: RecursiveState,
}

impl StormState {
    pub fn init<E: ChannelEvaluator + ?Sized>(eval: &E, it0: &Iterate, a: f64, meter: &mut EvalMeter) -> Self {
        Self {
            a,
            rec: RecursiveState::init(eval, it0, meter),
        }
    }

    pub fn estimate<E: ChannelEvaluator + ?Sized>(
        &mut self,
        eval: &E,
        it: &Iterate,
        draw: &SampleDraw,
        meter: &mut EvalMeter,
    ) -> Vec<f64> {
        meter.access(eval, draw.upper.len(), draw.lower.len());
        let now = eval.eval_at(it, &draw.upper, &draw.lower, meter);
        let v = if self.a >= 1.0 {
            now
        } else {
            let before = eval.eval_at(&self.rec.prev_iterate, &draw.upper, &draw.lower, meter);
            let mut v = now;
            for k in 0..v.len() {
                v[k] += (1.0 - self.a) * (self.rec.v_prev[k] - before[k]);
            }
            v
        };
        self.rec.v_prev.clone_from(&v);
        self.rec.prev_iterate = it.clone();
        v
    }
}

/// Runtime state of whichever estimator a channel uses.
#[derive(Debug, Clone)]
pub enum EstimatorState {
    Sgd,
    Saga(SagaState),
    Page(PageState),
    ZeroSarah(ZeroSarahState),
    Storm(StormState),
}

impl EstimatorState {
    /// Builds and initialises the state at `it0`. `first_draw` is only used
    /// by the minibatch-initialised ZeroSARAH variant.
    pub fn init<E: ChannelEvaluator + ?Sized>(
        kind: EstimatorKind,
        eval: &E,
        it0: &Iterate,
        first_draw: &SampleDraw,
        meter: &mut EvalMeter,
    ) -> Result<Self> {
        kind.validate()?;
        Ok(match kind {
            EstimatorKind::Sgd => EstimatorState::Sgd,
            EstimatorKind::Saga => EstimatorState::Saga(SagaState::init(eval, it0, meter)),
            EstimatorKind::Page { p } => EstimatorState::Page(PageState::init(eval, it0, p, meter)),
            EstimatorKind::ZeroSarah {
                rho_bar,
                minibatch_init,
            } => EstimatorState::ZeroSarah(if minibatch_init {
                ZeroSarahState::init_minibatch(eval, it0, first_draw, rho_bar, meter)
            } else {
                ZeroSarahState::init(eval, it0, rho_bar, meter)
            }),
            EstimatorKind::Storm { a } => EstimatorState::Storm(StormState::init(eval, it0, a, meter)),
        })
    }

    /// One estimate. PAGE flips exactly one coin per call from `coins`.
    pub fn estimate<E: ChannelEvaluator + ?Sized, R: Rng + ?Sized>(
        &mut self,
        eval: &E,
        it: &Iterate,
        draw: &SampleDraw,
        coins: &mut R,
        meter: &mut EvalMeter,
    ) -> Result<Vec<f64>> {
        match self {
            EstimatorState::Sgd => Ok(sgd_estimate(eval, it, draw, meter)),
            EstimatorState::Saga(s) => s.estimate(eval, it, draw, meter),
            EstimatorState::Page(s) => {
                let heads = rng::coin(coins, s.p);
                Ok(s.estimate(eval, it, draw, heads, meter))
            }
            EstimatorState::ZeroSarah(s) => s.estimate(eval, it, draw, meter),
            EstimatorState::Storm(s) => Ok(s.estimate(eval, it, draw, meter)),
        }
    }

    pub fn tables(&self) -> Option<&PartTables> {
        match self {
            EstimatorState::Saga(s) => s.tables(),
            EstimatorState::ZeroSarah(s) => s.tables(),
            _ => None,
        }
    }
}
