//! Run configuration files (TOML) and their resolution into solver inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimators::EstimatorKind;
use crate::model::{BilevelProblem, Iterate};
use crate::oracle::{OracleConfig, OracleProbe};
use crate::problems::{
    make_hypercleaning, make_quadratic, make_regpath, HyperCleaning, HyperCleaningSpec, QuadraticBilevel,
    QuadraticSpec, RegPathLogReg, RegPathSpec,
};
use crate::solver::{Preset, Schedule, SolverConfig, StationarityProbe};
use crate::theory::{self, build_ledger};

/// Environment variable naming the root directory for relative dataset paths.
pub const DATA_ROOT_ENV: &str = "PNPBO_DATA";

/// Batch size used by the benchmark tasks unless overridden.
pub const BENCHMARK_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemConfig {
    Quadratic(QuadraticSpec),
    Hypercleaning(HyperCleaningSpec),
    Regpath(RegPathSpec),
}

impl ProblemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::Quadratic(_) => "quadratic",
            ProblemConfig::Hypercleaning(_) => "hypercleaning",
            ProblemConfig::Regpath(_) => "regpath",
        }
    }
}

/// A step size: a number, a decay schedule, or `"suggest"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Fixed(Schedule),
    Keyword(StepKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKeyword {
    Suggest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSpec {
    Size(usize),
    Keyword(BatchKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKeyword {
    /// `ceil(sqrt(n + m))`
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Value(f64),
    Keyword(RadiusKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusKeyword {
    /// `C^f / mu` when the problem declares its constants, else 1.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub preset: Preset,
    pub alpha: StepSpec,
    pub beta: StepSpec,
    pub gamma: StepSpec,
    #[serde(default)]
    pub batch: Option<BatchSpec>,
    #[serde(default)]
    pub batch_f: Option<usize>,
    #[serde(default)]
    pub batch_g: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub radius: Option<RadiusSpec>,
    #[serde(default)]
    pub estimator_x: Option<EstimatorKind>,
    #[serde(default)]
    pub estimator_y: Option<EstimatorKind>,
    #[serde(default)]
    pub estimator_z: Option<EstimatorKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMetric {
    /// Closed form where available, otherwise none.
    Auto,
    ClosedForm,
    Oracle,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub grad_h_sq: GradMetric,
    /// Record `f` and `g` full-batch values.
    pub values: bool,
    /// Record wall-clock time; makes traces non-reproducible byte-wise.
    pub timing: bool,
    /// Stop at the first recorded row with `gradH_sq` at or below this.
    pub stop_below: Option<f64>,
    pub cadence: Option<usize>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            grad_h_sq: GradMetric::Auto,
            values: true,
            timing: false,
            stop_below: None,
            cadence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub iterations: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    pub problem: ProblemConfig,
    pub solver: SolverSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Maps a TOML error to a parse error carrying offset, line and column.
pub fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let offset = e.span().map_or(0, |s| s.start);
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    Error::Parse {
        offset: offset as u64,
        line: Some(line),
        message: format!("column {column}: {}", e.message()),
    }
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| toml_error(text, &e))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Problem seed follows the run seed so that `--seed` moves both.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        match &mut self.problem {
            ProblemConfig::Quadratic(s) => s.seed = seed,
            ProblemConfig::Hypercleaning(s) => s.seed = seed,
            ProblemConfig::Regpath(s) => s.seed = seed,
        }
        self
    }

    pub fn data_root(&self) -> Option<PathBuf> {
        std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.data_root.clone())
    }
}

/// A constructed benchmark problem.
#[derive(Debug, Clone)]
pub enum AnyProblem {
    Quadratic(QuadraticBilevel),
    Hypercleaning(HyperCleaning),
    Regpath(RegPathLogReg),
}

impl AnyProblem {
    pub fn build(cfg: &ProblemConfig, data_root: Option<&Path>) -> Result<Self> {
        Ok(match cfg {
            ProblemConfig::Quadratic(s) => AnyProblem::Quadratic(make_quadratic(s)?),
            ProblemConfig::Hypercleaning(s) => AnyProblem::Hypercleaning(make_hypercleaning(s, data_root)?),
            ProblemConfig::Regpath(s) => AnyProblem::Regpath(make_regpath(s, data_root)?),
        })
    }

    pub fn as_dyn(&self) -> &dyn BilevelProblem {
        match self {
            AnyProblem::Quadratic(p) => p,
            AnyProblem::Hypercleaning(p) => p,
            AnyProblem::Regpath(p) => p,
        }
    }

    pub fn closed_form(&self) -> Option<&dyn StationarityProbe> {
        match self {
            AnyProblem::Quadratic(p) => Some(p),
            _ => None,
        }
    }
}

/// Everything needed to call [`crate::solver::run`].
pub struct ResolvedRun {
    pub problem: AnyProblem,
    pub solver: SolverConfig,
    pub probe_kind: GradMetric,
    pub oracle: OracleConfig,
    pub suggestion: Option<theory::Suggestion>,
}

impl ResolvedRun {
    pub fn initial_iterate(&self) -> Iterate {
        Iterate::zeros(self.problem.as_dyn())
    }

    /// The stationarity probe selected by the metrics section.
    pub fn probe(&self) -> Option<Box<dyn StationarityProbe + '_>> {
        match self.probe_kind {
            GradMetric::Off => None,
            GradMetric::Oracle => Some(Box::new(OracleProbe {
                problem: self.problem.as_dyn(),
                config: self.oracle,
            })),
            GradMetric::ClosedForm | GradMetric::Auto => self
                .problem
                .closed_form()
                .map(|p| Box::new(p) as Box<dyn StationarityProbe>),
        }
    }
}

fn fixed(spec: StepSpec) -> Option<Schedule> {
    match spec {
        StepSpec::Fixed(s) => Some(s),
        StepSpec::Keyword(StepKeyword::Suggest) => None,
    }
}

/// Builds the problem and the solver configuration.
pub fn resolve(cfg: &RunConfig) -> Result<ResolvedRun> {
    cfg.oracle.validate()?;
    let root = cfg.data_root();
    let problem = AnyProblem::build(&cfg.problem, root.as_deref())?;
    let p = problem.as_dyn();
    let (n, m) = (p.n(), p.m());
    let s = &cfg.solver;
    let mut solver = SolverConfig::from_preset(s.preset, n, m);
    solver.iterations = cfg.iterations;
    solver.seed = cfg.seed;

    let batch = match s.batch {
        Some(BatchSpec::Size(b)) => Some(b),
        Some(BatchSpec::Keyword(BatchKeyword::Sqrt)) => None,
        None => match cfg.problem {
            ProblemConfig::Quadratic(_) => None,
            _ => Some(BENCHMARK_BATCH),
        },
    };
    if let Some(b) = batch {
        solver.batch_f = b.min(n);
        solver.batch_g = b.min(m);
    }
    if let Some(b) = s.batch_f {
        solver.batch_f = b;
    }
    if let Some(b) = s.batch_g {
        solver.batch_g = b;
    }
    if let Some(rho) = s.rho {
        solver.rho = rho;
    }
    for (slot, over) in [
        (&mut solver.estimator_x, s.estimator_x),
        (&mut solver.estimator_y, s.estimator_y),
        (&mut solver.estimator_z, s.estimator_z),
    ] {
        if let Some(e) = over {
            *slot = e;
        }
    }
    solver.radius = match s.radius.unwrap_or(RadiusSpec::Keyword(RadiusKeyword::Auto)) {
        RadiusSpec::Value(r) => r,
        RadiusSpec::Keyword(RadiusKeyword::Auto) => match p.smoothness() {
            Some(sp) => sp.cf / sp.mu,
            None => 1.0,
        },
    };

    let wants_suggestion = [s.alpha, s.beta, s.gamma].iter().any(|v| fixed(*v).is_none());
    let suggestion = if wants_suggestion {
        let params = p
            .smoothness()
            .ok_or_else(|| invalid(format!("\"suggest\" needs declared smoothness constants; {} has none", cfg.problem.name())))?;
        let ledger = build_ledger(params, n, m)?;
        Some(theory::suggest_steps(&ledger, s.preset)?)
    } else {
        None
    };
    let pick = |spec: StepSpec, f: fn(&theory::Steps) -> f64| match fixed(spec) {
        Some(v) => v,
        None => Schedule::Constant(f(&suggestion.as_ref().expect("suggestion computed").steps)),
    };
    solver.alpha = pick(s.alpha, |st| st.alpha);
    solver.beta = pick(s.beta, |st| st.beta);
    solver.gamma = pick(s.gamma, |st| st.gamma);
    solver.validate(n, m)?;

    let probe_kind = match cfg.metrics.grad_h_sq {
        GradMetric::ClosedForm if problem.closed_form().is_none() => {
            return Err(invalid(format!("{} has no closed-form hypergradient", cfg.problem.name())))
        }
        k => k,
    };
    Ok(ResolvedRun {
        problem,
        solver,
        probe_kind,
        oracle: cfg.oracle,
        suggestion,
    })
}
