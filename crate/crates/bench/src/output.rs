//! CSV records and aggregation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sixdma::fp_ao::RunReport;

use crate::BenchError;

/// One (scheme, value, trial) outcome. Wall-clock data lives in
/// [`TimingRow`] so this file stays byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub axis: String,
    pub value: f64,
    pub trial: usize,
    /// Sum rate on the polarized channel, bps/Hz, with nested warm starts.
    pub sum_rate: f64,
    /// Same scheme from its own cold start, when requested.
    pub cold_sum_rate: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: String,
    pub value: f64,
    pub trial: usize,
    /// Wall time of all nested runs of this (value, trial).
    pub nested_wall_ms: f64,
    pub uv_ms: f64,
    pub dbf_ms: f64,
    pub abf_ms: f64,
    pub pose_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scheme: String,
    pub value: f64,
    pub trials: usize,
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation over sqrt(n)).
    pub std_err: f64,
    pub cold_mean: Option<f64>,
    pub cold_std_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub sum_rate: f64,
    pub fp_objective: f64,
}

/// Mean and standard error; the error is zero for a single sample.
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups rows by (scheme, value) in first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(s, v)| *s == r.scheme && *v == r.value) {
            keys.push((r.scheme.clone(), r.value));
        }
    }
    keys.into_iter()
        .map(|(scheme, value)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.scheme == scheme && r.value == value).collect();
            let rates: Vec<f64> = group.iter().map(|r| r.sum_rate).collect();
            let (mean, std_err) = mean_and_std_err(&rates);
            let cold: Option<Vec<f64>> = group.iter().map(|r| r.cold_sum_rate).collect();
            let (cold_mean, cold_std_err) = match cold {
                Some(c) => {
                    let (m, s) = mean_and_std_err(&c);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            AggregateRow {
                scheme,
                value,
                trials: rates.len(),
                mean,
                std_err,
                cold_mean,
                cold_std_err,
            }
        })
        .collect()
}

/// Per-iteration rows of a run; one row per outer iteration.
pub fn trace_rows(report: &RunReport) -> Vec<TraceRow> {
    report
        .sum_rate
        .iter()
        .zip(&report.fp_objective)
        .enumerate()
        .map(|(i, (&s, &f))| TraceRow {
            iteration: i + 1,
            sum_rate: s,
            fp_objective: f,
        })
        .collect()
}

/// Writes records with a header row.
pub fn write_csv<T: Serialize>(w: impl Write, records: &[T]) -> Result<(), BenchError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Like [`write_csv`] but also emits the header for an empty record set.
pub fn write_trace(w: impl Write, report: &RunReport) -> Result<(), BenchError> {
    let rows = trace_rows(report);
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record(["iteration", "sum_rate", "fp_objective"])?;
    }
    for r in &rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_results(r: impl std::io::Read) -> Result<Vec<ResultRow>, BenchError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(BenchError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scheme: &str, value: f64, trial: usize, rate: f64) -> ResultRow {
        ResultRow {
            scheme: scheme.into(),
            axis: "power_dbm".into(),
            value,
            trial,
            sum_rate: rate,
            cold_sum_rate: Some(rate - 0.5),
            iterations: 3,
            converged: true,
        }
    }

    #[test]
    fn mean_and_error() {
        let (m, s) = mean_and_std_err(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, n = 4
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_std_err(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn aggregate_groups_in_order() {
        let rows = vec![
            row("a", 0.0, 0, 1.0),
            row("a", 0.0, 1, 3.0),
            row("a", 5.0, 0, 2.0),
            row("b", 0.0, 0, 4.0),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 3);
        assert_eq!((agg[0].scheme.as_str(), agg[0].value, agg[0].trials), ("a", 0.0, 2));
        assert_eq!(agg[0].mean, 2.0);
        assert_eq!(agg[0].cold_mean, Some(1.5));
        assert_eq!(agg[2].scheme, "b");
    }

    #[test]
    fn results_round_trip_through_csv() {
        let mut rows = vec![row("a", 0.0, 0, 1.25), row("b", 2.5, 1, 3.0)];
        rows[1].cold_sum_rate = None;
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scheme,axis,value,trial,sum_rate,cold_sum_rate,iterations,converged\n"));
        assert_eq!(read_results(&buf[..]).unwrap(), rows);
    }
}
