//! Step-size grid search over `(alpha, phi, kappa)` with `beta = alpha / phi`
//! and `gamma = alpha / kappa`, optionally crossed with PAGE's `1 - p` and
//! ZeroSARAH's `rho_bar`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{resolve, ResolvedRun, RunConfig};
use super::output::{write_trace_file, FinalRow};
use crate::error::{invalid, Error, Result};
use crate::estimators::EstimatorKind;
use crate::solver::{run, RunOptions, Schedule, SolverConfig, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    List(Vec<f64>),
    Log { logspace: (f64, f64, usize) },
}

impl Axis {
    pub fn logspace(lo: f64, hi: f64, count: usize) -> Self {
        Axis::Log {
            logspace: (lo, hi, count),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::List(v) => v.clone(),
            Axis::Log {
                logspace: (lo, hi, count),
            } => {
                let (a, b) = (lo.log10(), hi.log10());
                match *count {
                    0 => vec![],
                    1 => vec![*lo],
                    c => (0..c)
                        .map(|k| {
                            if k == c - 1 {
                                *hi
                            } else {
                                10f64.powf(a + (b - a) * k as f64 / (c - 1) as f64)
                            }
                        })
                        .collect(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub alpha: Axis,
    pub phi: Axis,
    pub kappa: Axis,
    /// `1 - p` values for PAGE channels; empty keeps the preset's `p`.
    pub one_minus_p: Vec<f64>,
    /// `rho_bar` values for ZeroSARAH channels; empty keeps the preset's.
    pub rho_bar: Vec<f64>,
    /// Decay applied to every cell's three step sizes, `base / (1 + k/k0)^power`.
    pub decay: Option<(f64, f64)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alpha: Axis::logspace(1e-3, 1.0, 11),
            phi: Axis::logspace(1e-5, 1.0, 11),
            kappa: Axis::logspace(1e-5, 1.0, 11),
            one_minus_p: vec![],
            rho_bar: vec![],
            decay: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[serde(rename = "gradH_sq", alias = "grad_h_sq")]
    GradHSq,
    TestMetric,
    FVal,
}

impl Selection {
    pub fn of(self, r: &TraceRow) -> Option<f64> {
        match self {
            Selection::GradHSq => r.grad_h_sq,
            Selection::TestMetric => r.test_metric,
            Selection::FVal => (!r.f_val.is_nan()).then_some(r.f_val),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub selection: Selection,
    /// Reference upper value for the suboptimality-gap column.
    #[serde(default)]
    pub reference_f: Option<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    pub run: RunConfig,
}

impl GridFile {
    pub fn parse(text: &str) -> Result<Self> {
        super::config::parse_toml(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub one_minus_p: Option<f64>,
    pub rho_bar: Option<f64>,
    pub seed: u64,
}

impl GridSpec {
    pub fn cells(&self, base_seed: u64) -> Result<Vec<Cell>> {
        let (alphas, phis, kappas) = (self.alpha.values(), self.phi.values(), self.kappa.values());
        if alphas.is_empty() || phis.is_empty() || kappas.is_empty() {
            return Err(invalid("grid axes must be non-empty"));
        }
        if alphas.iter().chain(&phis).chain(&kappas).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("grid values must be positive and finite"));
        }
        let ps: Vec<Option<f64>> = if self.one_minus_p.is_empty() {
            vec![None]
        } else {
            self.one_minus_p.iter().map(|v| Some(*v)).collect()
        };
        let rs: Vec<Option<f64>> = if self.rho_bar.is_empty() {
            vec![None]
        } else {
            self.rho_bar.iter().map(|v| Some(*v)).collect()
        };
        let mut out = Vec::new();
        for &a in &alphas {
            for &phi in &phis {
                for &kappa in &kappas {
                    for &q in &ps {
                        for &r in &rs {
                            let index = out.len();
                            out.push(Cell {
                                index,
                                alpha: a,
                                beta: a / phi,
                                gamma: a / kappa,
                                one_minus_p: q,
                                rho_bar: r,
                                seed: base_seed ^ index as u64,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub status: CellStatus,
    pub last: Option<TraceRow>,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    Diverged(String),
    Failed(String),
}

impl CellStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged(_) => "diverged",
            CellStatus::Failed(_) => "failed",
        }
    }
}

/// Solver configuration of one cell.
pub fn cell_config(base: &SolverConfig, cell: &Cell, decay: Option<(f64, f64)>) -> SolverConfig {
    let sched = |v: f64| match decay {
        Some((k0, power)) => Schedule::Decay { base: v, k0, power },
        None => Schedule::Constant(v),
    };
    let mut c = base.clone();
    c.alpha = sched(cell.alpha);
    c.beta = sched(cell.beta);
    c.gamma = sched(cell.gamma);
    c.seed = cell.seed;
    for e in [&mut c.estimator_x, &mut c.estimator_y, &mut c.estimator_z] {
        match e {
            EstimatorKind::Page { p } => {
                if let Some(q) = cell.one_minus_p {
                    *p = 1.0 - q;
                }
            }
            EstimatorKind::ZeroSarah { rho_bar, .. } => {
                if let Some(r) = cell.rho_bar {
                    *rho_bar = r;
                }
            }
            _ => {}
        }
    }
    c
}

pub struct GridReport {
    pub results: Vec<CellResult>,
    /// Indices into `results`, best first.
    pub order: Vec<usize>,
}

impl GridReport {
    pub fn all_failed(&self) -> bool {
        self.results.iter().all(|r| r.status != CellStatus::Ok)
    }

    pub fn best(&self) -> Option<&CellResult> {
        self.order.first().map(|&i| &self.results[i]).filter(|r| r.status == CellStatus::Ok)
    }
}

/// Ranking: finished cells with a metric by `(metric, index)`, then the rest
/// by index.
pub fn rank(results: &[CellResult]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |r: &CellResult| match (&r.status, r.metric) {
            (CellStatus::Ok, Some(m)) if !m.is_nan() => (0, m),
            _ => (1, 0.0),
        };
        let (ka, kb) = (key(&results[a]), key(&results[b]));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(results[a].cell.index.cmp(&results[b].cell.index))
    });
    order
}

pub struct GridOptions<'a> {
    pub workers: usize,
    pub cadence: Option<usize>,
    /// Directory receiving one trace per cell.
    pub trace_dir: Option<&'a Path>,
}

pub fn run_grid(file: &GridFile, opts: &GridOptions<'_>) -> Result<GridReport> {
    let resolved: ResolvedRun = resolve(&file.run)?;
    let cells = file.grid.cells(file.run.seed)?;
    if file.selection == Selection::GradHSq && resolved.probe().is_none() {
        return Err(invalid("selection gradH_sq needs a stationarity probe (metrics.grad_h_sq)"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    let metrics = &file.run.metrics;
    let results: Vec<Result<CellResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let cfg = cell_config(&resolved.solver, cell, file.grid.decay);
                cfg.validate(resolved.problem.as_dyn().n(), resolved.problem.as_dyn().m())?;
                let probe = resolved.probe();
                let ro = RunOptions {
                    cadence: opts.cadence.or(metrics.cadence),
                    probe: probe.as_deref(),
                    stop_below: metrics.stop_below,
                    timing: metrics.timing,
                    skip_values: !metrics.values,
                };
                let (trace, status) = match run(resolved.problem.as_dyn(), &cfg, resolved.initial_iterate(), &ro) {
                    Ok(t) => (t, CellStatus::Ok),
                    Err(f) => {
                        let st = match f.error {
                            Error::Diverged { .. } => CellStatus::Diverged(f.error.to_string()),
                            ref e => CellStatus::Failed(e.to_string()),
                        };
                        (f.trace, st)
                    }
                };
                if let Some(dir) = opts.trace_dir {
                    write_trace_file(&dir.join(format!("cell-{:04}.csv", cell.index)), &trace.rows)?;
                }
                let last = trace.rows.last().cloned();
                let metric = last.as_ref().and_then(|r| file.selection.of(r));
                Ok(CellResult {
                    cell: *cell,
                    status,
                    last,
                    metric,
                })
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let order = rank(&results);
    Ok(GridReport { results, order })
}

pub const LEADERBOARD_HEADER: [&str; 16] = [
    "rank",
    "cell",
    "alpha",
    "beta",
    "gamma",
    "one_minus_p",
    "rho_bar",
    "seed",
    "status",
    "metric",
    "gap",
    "gradH_sq",
    "f_val",
    "test_metric",
    "samples_f",
    "samples_g",
];

pub fn write_leaderboard(w: impl std::io::Write, report: &GridReport, reference_f: Option<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(LEADERBOARD_HEADER).map_err(io)?;
    let s = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (rank, &i) in report.order.iter().enumerate() {
        let r = &report.results[i];
        let last = r.last.as_ref().map(FinalRow::from);
        let f_val = last.as_ref().and_then(|l| l.f_val);
        let gap = match (f_val, reference_f) {
            (Some(f), Some(f0)) => Some(f - f0),
            _ => None,
        };
        out.write_record([
            (rank + 1).to_string(),
            r.cell.index.to_string(),
            r.cell.alpha.to_string(),
            r.cell.beta.to_string(),
            r.cell.gamma.to_string(),
            s(r.cell.one_minus_p),
            s(r.cell.rho_bar),
            r.cell.seed.to_string(),
            r.status.label().to_string(),
            s(r.metric),
            s(gap),
            s(last.as_ref().and_then(|l| l.grad_h_sq)),
            s(f_val),
            s(last.as_ref().and_then(|l| l.test_metric)),
            last.as_ref().map_or(String::new(), |l| l.samples_f.to_string()),
            last.as_ref().map_or(String::new(), |l| l.samples_g.to_string()),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
