//! Trace CSV files and JSON run summaries.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EvalMeter;
use crate::model::Iterate;
use crate::solver::{RunTrace, TraceRow};

pub const TRACE_HEADER: [&str; 8] = [
    "iter",
    "samples_f",
    "samples_g",
    "gradH_sq",
    "f_val",
    "g_val",
    "test_metric",
    "wall_ms",
];

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse {
            offset: p.byte(),
            line: Some(p.line() as usize),
            message: e.to_string(),
        },
        None => Error::Io(e.to_string()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn write_trace(w: impl Write, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.iter.to_string(),
            r.samples_f.to_string(),
            r.samples_g.to_string(),
            opt(r.grad_h_sq),
            num(r.f_val),
            num(r.g_val),
            opt(r.test_metric),
            opt(r.wall_ms),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_trace(std::io::BufWriter::new(f), rows)
}

fn parse_opt(s: &str, field: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Parse {
        offset: 0,
        line: Some(line),
        message: format!("bad {field} value {s:?}"),
    })
}

/// Reads a trace written by [`write_trace`]; any other header is rejected.
pub fn read_trace(r: impl Read) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse {
            offset: 0,
            line: Some(1),
            message: format!("trace header mismatch: expected {}", TRACE_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let int = |k: usize| -> Result<u64> {
            rec[k].parse().map_err(|_| Error::Parse {
                offset: rec.position().map_or(0, |p| p.byte()),
                line: Some(line),
                message: format!("bad {} value {:?}", TRACE_HEADER[k], &rec[k]),
            })
        };
        rows.push(TraceRow {
            iter: int(0)? as usize,
            samples_f: int(1)?,
            samples_g: int(2)?,
            grad_h_sq: parse_opt(&rec[3], "gradH_sq", line)?,
            f_val: parse_opt(&rec[4], "f_val", line)?.unwrap_or(f64::NAN),
            g_val: parse_opt(&rec[5], "g_val", line)?.unwrap_or(f64::NAN),
            test_metric: parse_opt(&rec[6], "test_metric", line)?,
            wall_ms: parse_opt(&rec[7], "wall_ms", line)?,
        });
    }
    Ok(rows)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trace(std::io::BufReader::new(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub iter: usize,
    pub samples_f: u64,
    pub samples_g: u64,
    #[serde(rename = "gradH_sq")]
    pub grad_h_sq: Option<f64>,
    pub f_val: Option<f64>,
    pub g_val: Option<f64>,
    pub test_metric: Option<f64>,
}

impl From<&TraceRow> for FinalRow {
    fn from(r: &TraceRow) -> Self {
        let finite = |v: f64| (!v.is_nan()).then_some(v);
        Self {
            iter: r.iter,
            samples_f: r.samples_f,
            samples_g: r.samples_g,
            grad_h_sq: r.grad_h_sq,
            f_val: finite(r.f_val),
            g_val: finite(r.g_val),
            test_metric: r.test_metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub preset: String,
    pub status: String,
    pub error: Option<String>,
    #[serde(rename = "final")]
    pub last: Option<FinalRow>,
    #[serde(rename = "best_gradH_sq")]
    pub best_grad_h_sq: Option<f64>,
    pub total_evals: u64,
    pub meters: [EvalMeter; 3],
}

impl Summary {
    pub fn new(config_hash: &str, seed: u64, preset: &str, trace: &RunTrace, error: Option<&Error>) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            seed,
            preset: preset.to_string(),
            status: match error {
                None => "ok",
                Some(Error::Diverged { .. }) => "diverged",
                Some(_) => "failed",
            }
            .to_string(),
            error: error.map(|e| e.to_string()),
            last: trace.last().map(FinalRow::from),
            best_grad_h_sq: trace.best_grad_h_sq(),
            total_evals: trace.meters.iter().map(EvalMeter::total_evals).sum(),
            meters: trace.meters,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Saved iterate, readable by the `oracle` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub x: Vec<f64>,
    #[serde(default)]
    pub y: Vec<f64>,
    #[serde(default)]
    pub z: Vec<f64>,
}

impl From<&Iterate> for Checkpoint {
    fn from(it: &Iterate) -> Self {
        Self {
            x: it.x.clone(),
            y: it.y.clone(),
            z: it.z.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, g: Option<f64>) -> TraceRow {
        TraceRow {
            iter: k,
            samples_f: 3 * k as u64,
            samples_g: 4 * k as u64,
            grad_h_sq: g,
            f_val: 0.1 * k as f64,
            g_val: f64::NAN,
            test_metric: None,
            wall_ms: None,
        }
    }

    #[test]
    fn trace_round_trip() {
        let rows = vec![row(0, Some(1.5)), row(10, Some(1e-7)), row(20, None)];
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,samples_f,samples_g,gradH_sq,f_val,g_val,test_metric,wall_ms\n"));
        assert!(text.contains("\n10,30,40,0.0000001,1,,,\n"));
        let back = read_trace(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].grad_h_sq, Some(1e-7));
        assert!(back[2].g_val.is_nan() && back[2].grad_h_sq.is_none());
    }

    #[test]
    fn foreign_header_rejected() {
        assert!(matches!(read_trace(&b"a,b\n1,2\n"[..]), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "iter,samples_f,samples_g,gradH_sq,f_val,g_val,test_metric,wall_ms\n0,0,0,,,,,\nx,0,0,,,,,\n";
        match read_trace(text.as_bytes()) {
            Err(Error::Parse { line: Some(3), .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
