//! Monte Carlo sweeps over one configuration axis.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use sixdma::baselines::{run_nested, run_scheme, SchemeId, SchemeReport, Start, TrialContext};
use sixdma::fp_ao::RunReport;
use sixdma::scenario::{build_scenario, default_geometry, trial_rng, SimConfig};

use crate::output::{ResultRow, TimingRow};
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    PowerDbm,
    MovableSpanLambda,
    RotHalfRangeDeg,
    PathsPerUser,
    NumUsers,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::PowerDbm,
        SweepAxis::MovableSpanLambda,
        SweepAxis::RotHalfRangeDeg,
        SweepAxis::PathsPerUser,
        SweepAxis::NumUsers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PowerDbm => "power_dbm",
            SweepAxis::MovableSpanLambda => "movable_span_lambda",
            SweepAxis::RotHalfRangeDeg => "rot_half_range_deg",
            SweepAxis::PathsPerUser => "paths_per_user",
            SweepAxis::NumUsers => "num_users",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepAxis::PathsPerUser | SweepAxis::NumUsers)
    }

    /// Axes along which the feasible set grows with the value while the
    /// scenario stays the same, so a solution at one value is a valid start
    /// at the next larger one.
    pub fn is_nested(self) -> bool {
        matches!(
            self,
            SweepAxis::PowerDbm | SweepAxis::MovableSpanLambda | SweepAxis::RotHalfRangeDeg
        )
    }

    /// `base` with the axis set to `value`.
    pub fn apply(self, base: &SimConfig, value: f64) -> SimConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::PowerDbm => cfg.link.power_dbm = value,
            SweepAxis::MovableSpanLambda => cfg.array.movable_span_lambda = value,
            SweepAxis::RotHalfRangeDeg => cfg.array.rot_half_range_deg = value,
            SweepAxis::PathsPerUser => cfg.users.paths = value as usize,
            SweepAxis::NumUsers => cfg.users.count = value as usize,
        }
        cfg
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| BenchError::InvalidArgument {
                key: "axis".into(),
                reason: format!(
                    "unknown axis `{s}`; expected one of {}",
                    SweepAxis::ALL.map(|a| a.as_str()).join(", ")
                ),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeId>,
    pub trials: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |key: &str, reason: &str| {
            Err(BenchError::InvalidArgument {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.values.is_empty() {
            return bad("values", "at least one value is required");
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("values", "values must be finite");
        }
        let inc = self.values.windows(2).all(|w| w[0] < w[1]);
        let dec = self.values.windows(2).all(|w| w[0] > w[1]);
        if !(inc || dec) {
            return bad("values", "values must be strictly monotone");
        }
        if self.axis.is_integer() && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return bad("values", "this axis takes positive integers");
        }
        if self.schemes.is_empty() {
            return bad("scheme", "at least one scheme is required");
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    /// Also run every scheme from its own cold start.
    pub cold: bool,
    /// Keep full run reports for trace emission.
    pub keep_reports: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            cold: true,
            keep_reports: false,
        }
    }
}

/// One scheme run inside a sweep.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scheme: SchemeId,
    pub value: f64,
    pub trial: usize,
    pub report: RunReport,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    /// Ordered by (scheme, value, trial) in the order given by the spec.
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub reports: Vec<RunRecord>,
}

struct TrialResult {
    /// Indexed `[value][scheme]`.
    rows: Vec<Vec<ResultRow>>,
    timings: Vec<Vec<TimingRow>>,
    reports: Vec<Vec<Option<RunReport>>>,
}

/// Fixes the region pitch to the largest span of a span sweep so regions
/// at smaller spans are nested inside those at larger ones.
fn sweep_base(spec: &SweepSpec, base: &SimConfig) -> SimConfig {
    let mut cfg = base.clone();
    if spec.axis == SweepAxis::MovableSpanLambda && cfg.array.region_pitch_lambda.is_none() {
        let max_span = spec.values.iter().copied().fold(f64::MIN, f64::max);
        let probe = SweepAxis::MovableSpanLambda.apply(&cfg, max_span);
        let (geom, _) = default_geometry(&probe);
        let pitch = sixdma::scenario::region_pitch(&probe, geom.max_offset_radius());
        cfg.array.region_pitch_lambda = Some(pitch / probe.wavelength());
    }
    cfg
}

fn run_trial(
    spec: &SweepSpec,
    base: &SimConfig,
    trial: usize,
    opts: &SweepOptions,
) -> Result<TrialResult, BenchError> {
    // Visit values in ascending order so nested axes can warm-start; store
    // results by the value index of the sweep.
    let mut order: Vec<usize> = (0..spec.values.len()).collect();
    order.sort_by(|&a, &b| spec.values[a].total_cmp(&spec.values[b]));
    let nv = spec.values.len();
    let ns = spec.schemes.len();
    let mut rows: Vec<Vec<ResultRow>> = vec![Vec::new(); nv];
    let mut timings: Vec<Vec<TimingRow>> = vec![Vec::new(); nv];
    let mut reports: Vec<Vec<Option<RunReport>>> = vec![vec![None; ns]; nv];
    let mut previous: Vec<SchemeReport> = Vec::new();

    for vi in order {
        let value = spec.values[vi];
        let cfg = spec.axis.apply(base, value);
        cfg.validate()?;
        let (geom, _) = default_geometry(&cfg);
        let scenario = build_scenario(&cfg, &mut trial_rng(spec.seed, trial as u64))?;
        let ctx = TrialContext::new(&geom, &scenario.paths, &scenario.noise, cfg.power_watts(), cfg.ao_config());

        let started = Instant::now();
        let prev = std::mem::take(&mut previous);
        let extra = |id: SchemeId| -> Vec<Start> {
            if !spec.axis.is_nested() || id == SchemeId::FullyConnectedFA {
                return Vec::new();
            }
            prev.iter().filter(|r| r.scheme == id).map(|r| r.start()).collect()
        };
        let nested = run_nested(&spec.schemes, &ctx, &extra)?;
        let nested_ms = started.elapsed().as_secs_f64() * 1e3;

        for (si, r) in nested.iter().enumerate() {
            let cold = if opts.cold {
                Some(run_scheme(r.scheme, &ctx)?.sum_rate)
            } else {
                None
            };
            rows[vi].push(ResultRow {
                scheme: r.scheme.to_string(),
                axis: spec.axis.to_string(),
                value,
                trial,
                sum_rate: r.sum_rate,
                cold_sum_rate: cold,
                iterations: r.report.iterations(),
                converged: r.report.termination == sixdma::fp_ao::Termination::Converged,
            });
            timings[vi].push(TimingRow {
                scheme: r.scheme.to_string(),
                value,
                trial,
                nested_wall_ms: nested_ms,
                uv_ms: r.report.timings.uv.as_secs_f64() * 1e3,
                dbf_ms: r.report.timings.dbf.as_secs_f64() * 1e3,
                abf_ms: r.report.timings.abf.as_secs_f64() * 1e3,
                pose_ms: r.report.timings.poses.as_secs_f64() * 1e3,
            });
            if opts.keep_reports {
                reports[vi][si] = Some(r.report.clone());
            }
        }
        previous = nested;
    }
    Ok(TrialResult {
        rows,
        timings,
        reports,
    })
}

/// Runs every (value, scheme, trial) of `spec`. Each trial is independent
/// and seeded from `(spec.seed, trial)`; output order does not depend on
/// `opts.jobs`.
pub fn run_sweep(spec: &SweepSpec, base: &SimConfig, opts: &SweepOptions) -> Result<SweepOutput, BenchError> {
    spec.validate()?;
    base.validate()?;
    let base = sweep_base(spec, base);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| BenchError::InvalidArgument {
            key: "jobs".into(),
            reason: e.to_string(),
        })?;
    let trials: Vec<TrialResult> = pool.install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(spec, &base, t, opts))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut out = SweepOutput::default();
    for si in 0..spec.schemes.len() {
        for vi in 0..spec.values.len() {
            for (t, tr) in trials.iter().enumerate() {
                out.rows.push(tr.rows[vi][si].clone());
                out.timings.push(tr.timings[vi][si].clone());
                if let Some(rep) = &tr.reports[vi][si] {
                    out.reports.push(RunRecord {
                        scheme: spec.schemes[si],
                        value: spec.values[vi],
                        trial: t,
                        report: rep.clone(),
                    });
                }
            }
        }
    }
    Ok(out)
}
