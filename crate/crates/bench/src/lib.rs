//! Experiment runner for the sixdma solver: Monte Carlo sweeps, aggregate
//! statistics and convergence traces, all written as CSV.

pub mod output;
pub mod sweep;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub use output::{aggregate, write_csv, write_trace, AggregateRow, ResultRow, TimingRow, TraceRow};
pub use sweep::{run_sweep, RunRecord, SweepAxis, SweepOptions, SweepOutput, SweepSpec};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] sixdma::Error),
    #[error("invalid `{key}`: {reason}")]
    InvalidArgument { key: String, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, BenchError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// File name of the trace of one run.
pub fn trace_file_name(rec: &RunRecord, axis: SweepAxis) -> String {
    format!("trace_{}_{}{}_t{}.csv", rec.scheme, axis, rec.value, rec.trial)
}

/// Writes `results.csv`, `aggregate.csv`, `timings.csv` and, for every kept
/// report, `trace_<run>.csv` into `dir`.
pub fn write_outputs(dir: &Path, spec: &SweepSpec, out: &SweepOutput) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    write_csv(create(dir, "results.csv")?, &out.rows)?;
    write_csv(create(dir, "aggregate.csv")?, &aggregate(&out.rows))?;
    write_csv(create(dir, "timings.csv")?, &out.timings)?;
    for rec in &out.reports {
        write_trace(create(dir, &trace_file_name(rec, spec.axis))?, &rec.report)?;
    }
    Ok(())
}
