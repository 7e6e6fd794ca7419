//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::config::{parse_toml, resolve, RunConfig};
use super::grid::{run_grid, write_leaderboard, GridFile, GridOptions};
use super::output::{read_trace_file, write_json, write_trace_file, Checkpoint, Summary};
use super::plotdata::{downsample, long_rows, write_plot};
use crate::error::{invalid, Error, Result};
use crate::oracle;
use crate::rng::mix_seed;
use crate::solver::{run, Preset, RunOptions};
use crate::theory::{self, build_ledger, SmoothnessParams, Steps};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_ALL_DIVERGED: i32 = 4;
pub const EXIT_INFEASIBLE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "pnpbo", version, about = "Single-loop stochastic bilevel optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration and write its trace and summary.
    Run(RunArgs),
    /// Grid search over step sizes.
    Grid(GridArgs),
    /// Certify step sizes against the theory conditions.
    Check(CheckArgs),
    /// Evaluate the exact hypergradient at a saved iterate.
    Oracle(OracleArgs),
    /// Merge traces into one long-format CSV.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate metrics every this many iterations.
    #[arg(long)]
    cadence: Option<usize>,
    /// Independent repeats with derived seeds.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cells evaluated in parallel; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Evaluate metrics every this many iterations.
    #[arg(long)]
    cadence: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// A `final.json` written by `run`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output location.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Trace files, optionally `path=label`; the label defaults to the file stem.
    #[arg(required = true)]
    traces: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Rows kept per trace; the running-best envelope is preserved.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(3..))]
    max_points: u64,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::InvalidArgument(_) | Error::Io(_) => EXIT_USAGE,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::State(_) | Error::NoConvergence { .. } => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, stdout),
        Command::Grid(a) => cmd_grid(&a, stdout),
        Command::Check(a) => cmd_check(&a, stdout),
        Command::Oracle(a) => cmd_oracle(&a, stdout),
        Command::Plotdata(a) => cmd_plot(&a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn out_dir(cli: &Option<PathBuf>, cfg: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let dir = cli.clone().or_else(|| cfg.clone()).unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct Aggregate {
    config_hash: String,
    repeats: usize,
    seeds: Vec<u64>,
    #[serde(rename = "final_gradH_sq")]
    final_grad_h_sq: Option<MeanStd>,
    final_f_val: Option<MeanStd>,
    final_test_metric: Option<MeanStd>,
}

#[derive(Debug, Serialize)]
struct MeanStd {
    mean: f64,
    std: f64,
}

fn mean_std(values: &[Option<f64>]) -> Option<MeanStd> {
    let v: Vec<f64> = values.iter().map(|x| x.ok_or(())).collect::<std::result::Result<_, _>>().ok()?;
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(MeanStd { mean, std: var.sqrt() })
}

fn cmd_run(a: &RunArgs, stdout: &mut dyn Write) -> Result<i32> {
    if a.repeats == 0 {
        return Err(invalid("--repeats must be at least 1"));
    }
    let base = RunConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(base.seed);
    let dir = out_dir(&a.out, &base.out, "pnpbo-out")?;
    let mut summaries = Vec::new();
    let mut code = EXIT_OK;
    for r in 0..a.repeats {
        let rs = if r == 0 { seed } else { mix_seed(seed, r as u64) };
        let mut cfg = base.clone().with_seed(rs);
        if let Some(c) = a.cadence {
            cfg.metrics.cadence = Some(c);
        }
        let hash = cfg.hash();
        let resolved = resolve(&cfg)?;
        let probe = resolved.probe();
        let opts = RunOptions {
            cadence: cfg.metrics.cadence,
            probe: probe.as_deref(),
            stop_below: cfg.metrics.stop_below,
            timing: cfg.metrics.timing,
            skip_values: !cfg.metrics.values,
        };
        let outcome = run(resolved.problem.as_dyn(), &resolved.solver, resolved.initial_iterate(), &opts);
        let (trace, err) = match outcome {
            Ok(t) => (t, None),
            Err(f) => (f.trace, Some(f.error)),
        };
        let suffix = if a.repeats == 1 { String::new() } else { format!("-{r}") };
        write_trace_file(&dir.join(format!("trace{suffix}.csv")), &trace.rows)?;
        let summary = Summary::new(&hash, rs, cfg.solver.preset.name(), &trace, err.as_ref());
        write_json(&dir.join(format!("summary{suffix}.json")), &summary)?;
        if let Some(it) = &trace.final_iterate {
            write_json(&dir.join(format!("final{suffix}.json")), &Checkpoint::from(it))?;
        }
        writeln!(stdout, "{}", serde_json::to_string(&summary).map_err(|e| Error::Io(e.to_string()))?)?;
        match err {
            None => {}
            Some(Error::Diverged { .. }) => code = code.max(EXIT_DIVERGED),
            Some(e) => return Err(e),
        }
        summaries.push(summary);
    }
    if a.repeats > 1 {
        let pick = |f: fn(&super::output::FinalRow) -> Option<f64>| -> Vec<Option<f64>> {
            summaries.iter().map(|s| s.last.as_ref().and_then(f)).collect()
        };
        let agg = Aggregate {
            config_hash: base.clone().with_seed(seed).hash(),
            repeats: a.repeats,
            seeds: summaries.iter().map(|s| s.seed).collect(),
            final_grad_h_sq: mean_std(&pick(|l| l.grad_h_sq)),
            final_f_val: mean_std(&pick(|l| l.f_val)),
            final_test_metric: mean_std(&pick(|l| l.test_metric)),
        };
        write_json(&dir.join("aggregate.json"), &agg)?;
    }
    Ok(code)
}

fn cmd_grid(a: &GridArgs, stdout: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::Io(format!("{}: {e}", a.config.display())))?;
    let mut file = GridFile::parse(&text)?;
    if let Some(s) = a.seed {
        file.run = file.run.with_seed(s);
    }
    let dir = out_dir(&a.out, &file.run.out, "pnpbo-grid")?;
    let cells_dir = dir.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    let report = run_grid(
        &file,
        &GridOptions {
            workers: a.workers,
            cadence: a.cadence,
            trace_dir: Some(&cells_dir),
        },
    )?;
    let path = dir.join("leaderboard.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_leaderboard(std::io::BufWriter::new(f), &report, file.reference_f)?;
    if report.all_failed() {
        writeln!(stdout, "all {} cells diverged or failed", report.results.len())?;
        return Ok(EXIT_ALL_DIVERGED);
    }
    if let Some(b) = report.best() {
        writeln!(
            stdout,
            "best cell {}: alpha={} beta={} gamma={} metric={}",
            b.cell.index,
            b.cell.alpha,
            b.cell.beta,
            b.cell.gamma,
            b.metric.map_or("-".to_string(), |m| m.to_string())
        )?;
    } else {
        writeln!(stdout, "no finished cell produced the selection metric")?;
    }
    Ok(EXIT_OK)
}

/// Parameter file of the `check` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckFile {
    pub n: usize,
    pub m: usize,
    pub preset: Preset,
    pub params: SmoothnessParams,
    /// Steps to certify; absent means "suggest and certify".
    #[serde(default)]
    pub steps: Option<Steps>,
}

fn cmd_check(a: &CheckArgs, stdout: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::Io(format!("{}: {e}", a.config.display())))?;
    let file: CheckFile = parse_toml(&text)?;
    let ledger = build_ledger(file.params, file.n, file.m)?;
    let (cert, steps) = match file.steps {
        Some(s) => {
            let (co, ..) = theory::coefficients_for(&ledger, file.preset);
            (co.check(&ledger, s), s)
        }
        None => match theory::suggest_steps(&ledger, file.preset) {
            Ok(sg) => (sg.certificate, sg.steps),
            Err(e @ Error::Infeasible(_)) => {
                writeln!(stdout, "{e}")?;
                return Ok(EXIT_INFEASIBLE);
            }
            Err(e) => return Err(e),
        },
    };
    writeln!(
        stdout,
        "{} alpha={:e} beta={:e} gamma={:e} L^H={:e}",
        file.preset, steps.alpha, steps.beta, steps.gamma, ledger.l_h
    )?;
    writeln!(stdout, "{:<64} {:>13} {:>13} {:>13}  ok", "inequality", "lhs", "rhs", "slack")?;
    for r in &cert.rows {
        writeln!(
            stdout,
            "{:<64} {:>13.6e} {:>13.6e} {:>13.6e}  {}",
            r.id,
            r.lhs,
            r.rhs,
            r.slack(),
            if r.satisfied { "yes" } else { "NO" }
        )?;
    }
    let json = |v: serde_json::Value| serde_json::to_string(&v).expect("json");
    for r in &cert.rows {
        writeln!(
            stdout,
            "{}",
            json(serde_json::json!({"id": r.id, "group": r.group, "lhs": r.lhs, "rhs": r.rhs, "satisfied": r.satisfied}))
        )?;
    }
    writeln!(
        stdout,
        "{}",
        json(serde_json::json!({
            "feasible": cert.feasible,
            "binding": cert.binding,
            "regime": cert.regime,
            "rhs_span_log10": cert.rhs_span_log10,
            "steps": steps,
        }))
    )?;
    Ok(if cert.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

#[derive(Debug, Serialize)]
struct OracleReport {
    #[serde(rename = "gradH")]
    grad_h: Vec<f64>,
    #[serde(rename = "gradH_sq")]
    grad_h_sq: f64,
    y_star: Vec<f64>,
    z_star: Vec<f64>,
    h_value: f64,
}

fn cmd_oracle(a: &OracleArgs, stdout: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load(&a.config)?;
    let resolved = resolve(&cfg)?;
    let p = resolved.problem.as_dyn();
    let text =
        std::fs::read_to_string(&a.checkpoint).map_err(|e| Error::Io(format!("{}: {e}", a.checkpoint.display())))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: 0,
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    if ck.x.len() != p.dim_x() {
        return Err(invalid(format!("checkpoint x has {} entries, problem needs {}", ck.x.len(), p.dim_x())));
    }
    let hp = oracle::hyper_point(p, &ck.x, &resolved.oracle)?;
    let report = OracleReport {
        grad_h_sq: hp.grad.iter().map(|v| v * v).sum(),
        h_value: p.upper_value(&ck.x, &hp.y),
        grad_h: hp.grad,
        y_star: hp.y,
        z_star: hp.z,
    };
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => writeln!(stdout, "{}", serde_json::to_string(&report).map_err(|e| Error::Io(e.to_string()))?)?,
    }
    Ok(EXIT_OK)
}

fn split_label(spec: &str) -> (PathBuf, String) {
    match spec.rsplit_once('=') {
        Some((path, label)) if !label.is_empty() => (PathBuf::from(path), label.to_string()),
        _ => {
            let p = PathBuf::from(spec);
            let label = p.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
            (p, label)
        }
    }
}

fn cmd_plot(a: &PlotArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut all = Vec::new();
    for spec in &a.traces {
        let (path, label) = split_label(spec);
        let rows = read_trace_file(Path::new(&path))?;
        all.extend(long_rows(&label, &downsample(&rows, a.max_points as usize)));
    }
    let f = std::fs::File::create(&a.out).map_err(|e| Error::Io(format!("{}: {e}", a.out.display())))?;
    write_plot(std::io::BufWriter::new(f), &all)?;
    writeln!(stdout, "wrote {} rows to {}", all.len(), a.out.display())?;
    Ok(EXIT_OK)
}
