//! Long-format merge of trace files for external plotting.

use std::io::Write;

use crate::error::{Error, Result};
use crate::solver::TraceRow;

pub const PLOT_HEADER: [&str; 5] = ["algorithm", "metric", "x_axis", "x", "value"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub algorithm: String,
    pub metric: &'static str,
    pub x_axis: &'static str,
    pub x: f64,
    pub value: f64,
}

/// Keeps at most `max_points` rows: the first, the last and the
/// smallest-`gradH_sq` row of each of `max_points - 2` equal buckets. The
/// min-so-far `gradH_sq` envelope at every kept row equals the envelope of
/// the full trace. Traces without `gradH_sq` are thinned evenly.
pub fn downsample(rows: &[TraceRow], max_points: usize) -> Vec<TraceRow> {
    if max_points == 0 || rows.len() <= max_points {
        return rows.to_vec();
    }
    let len = rows.len();
    let mut keep = vec![false; len];
    keep[0] = true;
    keep[len - 1] = true;
    let buckets = max_points.saturating_sub(2).max(1);
    for b in 0..buckets {
        let lo = b * len / buckets;
        let hi = ((b + 1) * len / buckets).max(lo + 1).min(len);
        let pick = (lo..hi)
            .min_by(|&i, &j| {
                let v = |k: usize| rows[k].grad_h_sq.unwrap_or(f64::INFINITY);
                v(i).total_cmp(&v(j)).then(i.cmp(&j))
            })
            .unwrap_or(lo);
        keep[if rows[pick].grad_h_sq.is_some() { pick } else { lo }] = true;
    }
    rows.iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r.clone()).collect()
}

/// Min-so-far `gradH_sq` at each row.
pub fn envelope(rows: &[TraceRow]) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    rows.iter()
        .map(|r| {
            if let Some(g) = r.grad_h_sq {
                best = Some(best.map_or(g, |b| b.min(g)));
            }
            best
        })
        .collect()
}

pub fn long_rows(algorithm: &str, rows: &[TraceRow]) -> Vec<PlotRow> {
    let mut out = Vec::new();
    for r in rows {
        let axes: [(&'static str, Option<f64>); 3] = [
            ("iterations", Some(r.iter as f64)),
            ("samples", Some((r.samples_f + r.samples_g) as f64)),
            ("wall_ms", r.wall_ms),
        ];
        let metrics: [(&'static str, Option<f64>); 4] = [
            ("gradH_sq", r.grad_h_sq),
            ("f_val", (!r.f_val.is_nan()).then_some(r.f_val)),
            ("g_val", (!r.g_val.is_nan()).then_some(r.g_val)),
            ("test_metric", r.test_metric),
        ];
        for (metric, value) in metrics {
            let Some(value) = value else { continue };
            for (x_axis, x) in axes {
                let Some(x) = x else { continue };
                out.push(PlotRow {
                    algorithm: algorithm.to_string(),
                    metric,
                    x_axis,
                    x,
                    value,
                });
            }
        }
    }
    out
}

pub fn write_plot(w: impl Write, rows: &[PlotRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(PLOT_HEADER).map_err(io)?;
    for r in rows {
        out.write_record([
            r.algorithm.as_str(),
            r.metric,
            r.x_axis,
            &r.x.to_string(),
            &r.value.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, g: f64) -> TraceRow {
        TraceRow {
            iter: k,
            samples_f: k as u64,
            samples_g: k as u64,
            grad_h_sq: Some(g),
            f_val: 1.0,
            g_val: 0.0,
            test_metric: None,
            wall_ms: None,
        }
    }

    #[test]
    fn single_trace_expansion() {
        let rows = vec![row(0, 1.0), row(5, 0.5)];
        let long = long_rows("SPABA", &rows);
        // three metrics x two axes per row
        assert_eq!(long.len(), 12);
        assert!(long.iter().all(|r| r.algorithm == "SPABA"));
        assert_eq!(long[7].x_axis, "samples");
        assert_eq!(long[7].x, 10.0);
    }

    #[test]
    fn short_traces_untouched() {
        let rows: Vec<_> = (0..5).map(|k| row(k, 1.0)).collect();
        assert_eq!(downsample(&rows, 200), rows);
    }
}
