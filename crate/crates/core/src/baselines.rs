//! Comparison schemes assembled from the core blocks.
//!
//! Every scheme runs the same alternating loop with some blocks disabled or
//! the analog stage replaced. Schemes with more freedom can be warm-started
//! at the solution of a more restricted scheme ([`run_nested`]), which makes
//! "more freedom never hurts" hold per trial and not only on average.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::channel::{ChannelSynth, GainModel, PathSet};
use crate::error::{check_dim, Error, Result};
use crate::fp_ao::{
    ao_run, default_start, fp_objective, initial_beamformers, sum_rate, update_uv,
    AnalogBeamformer, AoConfig, AoProblem, Beamformers, RunReport, SubproblemTimings,
    Termination,
};
use crate::geometry::{ArrayGeometry, Pose};
use crate::motion_opt::PoseFreedom;
use crate::C64;

/// Alternating iterations of the fully-connected hybrid fit.
pub const FULLY_CONNECTED_FIT_ITERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    SubConn6DMA,
    FullyDigitalFA,
    FullyDigitalMAPosition,
    FullyDigitalMAOrientation,
    FullyConnectedFA,
    SubConnectedFA,
    Unpolarized6DMA,
    SubConnMAPosition,
    SubConnMAOrientation,
}

impl SchemeId {
    pub const ALL: [SchemeId; 9] = [
        SchemeId::SubConn6DMA,
        SchemeId::FullyDigitalFA,
        SchemeId::FullyDigitalMAPosition,
        SchemeId::FullyDigitalMAOrientation,
        SchemeId::FullyConnectedFA,
        SchemeId::SubConnectedFA,
        SchemeId::Unpolarized6DMA,
        SchemeId::SubConnMAPosition,
        SchemeId::SubConnMAOrientation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::SubConn6DMA => "subconn-6dma",
            SchemeId::FullyDigitalFA => "fd-fa",
            SchemeId::FullyDigitalMAPosition => "fd-ma-pos",
            SchemeId::FullyDigitalMAOrientation => "fd-ma-ori",
            SchemeId::FullyConnectedFA => "fc-fa",
            SchemeId::SubConnectedFA => "subconn-fa",
            SchemeId::Unpolarized6DMA => "unpol-6dma",
            SchemeId::SubConnMAPosition => "subconn-ma-pos",
            SchemeId::SubConnMAOrientation => "subconn-ma-ori",
        }
    }

    pub fn freedom(self) -> PoseFreedom {
        use SchemeId::*;
        match self {
            SubConn6DMA | Unpolarized6DMA => PoseFreedom::FULL,
            FullyDigitalMAPosition | SubConnMAPosition => PoseFreedom {
                positions: true,
                angles: false,
            },
            FullyDigitalMAOrientation | SubConnMAOrientation => PoseFreedom {
                positions: false,
                angles: true,
            },
            FullyDigitalFA | FullyConnectedFA | SubConnectedFA => PoseFreedom::FROZEN,
        }
    }

    pub fn is_fully_digital(self) -> bool {
        matches!(
            self,
            SchemeId::FullyDigitalFA | SchemeId::FullyDigitalMAPosition | SchemeId::FullyDigitalMAOrientation
        )
    }

    /// Schemes whose solution serves as a warm start under [`run_nested`].
    pub fn warm_start_parents(self) -> &'static [SchemeId] {
        use SchemeId::*;
        match self {
            SubConnMAPosition | SubConnMAOrientation => &[SubConnectedFA],
            SubConn6DMA => &[SubConnMAPosition, SubConnMAOrientation],
            FullyDigitalMAPosition | FullyDigitalMAOrientation => &[FullyDigitalFA],
            FullyConnectedFA => &[FullyDigitalFA],
            _ => &[],
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidConfig {
                key: "scheme".into(),
                reason: format!(
                    "unknown scheme `{s}`; expected one of {}",
                    SchemeId::ALL.map(|i| i.as_str()).join(", ")
                ),
            })
    }
}

/// Inputs shared by all schemes of one trial.
#[derive(Debug, Clone)]
pub struct TrialContext<'a> {
    pub geom: &'a ArrayGeometry,
    pub noise: &'a [f64],
    pub power: f64,
    pub ao: AoConfig,
    polarized: ChannelSynth,
    unpolarized: ChannelSynth,
}

impl<'a> TrialContext<'a> {
    pub fn new(geom: &'a ArrayGeometry, paths: &PathSet, noise: &'a [f64], power: f64, ao: AoConfig) -> Self {
        Self {
            geom,
            noise,
            power,
            ao,
            polarized: ChannelSynth::new(paths, GainModel::Polarized),
            unpolarized: ChannelSynth::new(paths, GainModel::Unpolarized),
        }
    }

    pub fn synth(&self, model: GainModel) -> &ChannelSynth {
        match model {
            GainModel::Polarized => &self.polarized,
            GainModel::Unpolarized => &self.unpolarized,
        }
    }

    fn problem(&self, model: GainModel) -> AoProblem<'_> {
        AoProblem {
            geom: self.geom,
            synth: self.synth(model),
            noise: self.noise,
            power: self.power,
        }
    }

    /// Sum rate of a solution on the polarized channel.
    pub fn polarized_rate(&self, poses: &[Pose], bf: &Beamformers) -> Result<f64> {
        let h = self.polarized.channel(self.geom, poses)?;
        sum_rate(&h, bf, self.noise)
    }
}

/// Starting point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Start {
    pub poses: Vec<Pose>,
    pub bf: Beamformers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeReport {
    pub scheme: SchemeId,
    pub report: RunReport,
    /// Final sum rate on the polarized channel, bps/Hz.
    pub sum_rate: f64,
}

impl SchemeReport {
    pub fn start(&self) -> Start {
        Start {
            poses: self.report.poses.clone(),
            bf: self.report.beamformers.clone(),
        }
    }
}

fn model_of(id: SchemeId) -> GainModel {
    if id == SchemeId::Unpolarized6DMA {
        GainModel::Unpolarized
    } else {
        GainModel::Polarized
    }
}

/// Default starting point of a scheme: region centers, zero angles, and
/// either a sub-connected all-ones analog stage or one RF chain per antenna.
pub fn cold_start(id: SchemeId, ctx: &TrialContext) -> Result<Start> {
    let problem = ctx.problem(model_of(id));
    if id.is_fully_digital() || id == SchemeId::FullyConnectedFA {
        let poses = ctx.geom.initial_poses();
        let bf = initial_beamformers(
            &problem,
            &poses,
            AnalogBeamformer::Identity {
                n_antennas: ctx.geom.n_antennas(),
            },
        )?;
        Ok(Start { poses, bf })
    } else {
        let (poses, bf) = default_start(&problem)?;
        Ok(Start { poses, bf })
    }
}

/// Runs scheme `id` from `start`. For the fully-connected scheme `start`
/// is the fully-digital starting point.
pub fn run_scheme_from(id: SchemeId, ctx: &TrialContext, start: Start) -> Result<SchemeReport> {
    if id == SchemeId::FullyConnectedFA {
        return fully_connected(ctx, start);
    }
    let model = model_of(id);
    let cfg = AoConfig {
        freedom: id.freedom(),
        ..ctx.ao
    };
    let report = ao_run(&ctx.problem(model), &cfg, start.poses, start.bf)?;
    let sum_rate = match model {
        GainModel::Polarized => report.final_sum_rate(),
        GainModel::Unpolarized => ctx.polarized_rate(&report.poses, &report.beamformers)?,
    };
    Ok(SchemeReport {
        scheme: id,
        report,
        sum_rate,
    })
}

/// Runs scheme `id` from its cold start.
pub fn run_scheme(id: SchemeId, ctx: &TrialContext) -> Result<SchemeReport> {
    run_scheme_from(id, ctx, cold_start(id, ctx)?)
}

/// Runs `id` from each starting point and keeps the best polarized sum
/// rate (earliest on ties).
pub fn run_best_of(id: SchemeId, ctx: &TrialContext, starts: Vec<Start>) -> Result<SchemeReport> {
    let mut best: Option<SchemeReport> = None;
    for s in starts {
        let r = run_scheme_from(id, ctx, s)?;
        if best.as_ref().is_none_or(|b| r.sum_rate > b.sum_rate) {
            best = Some(r);
        }
    }
    best.ok_or(Error::InvalidConfig {
        key: "starts".into(),
        reason: "no starting point given".into(),
    })
}

/// Runs `schemes` (and any warm-start parents they need) with nested warm
/// starts. `extra` supplies additional starting points per scheme, for
/// example the solution at the previous value of a sweep. Results come back
/// in the order of `schemes`.
pub fn run_nested(
    schemes: &[SchemeId],
    ctx: &TrialContext,
    extra: &dyn Fn(SchemeId) -> Vec<Start>,
) -> Result<Vec<SchemeReport>> {
    let mut done: Vec<SchemeReport> = Vec::new();
    fn solve(
        id: SchemeId,
        ctx: &TrialContext,
        extra: &dyn Fn(SchemeId) -> Vec<Start>,
        done: &mut Vec<SchemeReport>,
    ) -> Result<SchemeReport> {
        if let Some(r) = done.iter().find(|r| r.scheme == id) {
            return Ok(r.clone());
        }
        let parents = id.warm_start_parents();
        let mut starts = Vec::new();
        if parents.is_empty() {
            starts.push(cold_start(id, ctx)?);
        }
        for &p in parents {
            let pr = solve(p, ctx, extra, done)?;
            starts.push(if id == SchemeId::FullyConnectedFA {
                // Start from the fully-digital starting point; the fit uses
                // the parent's final precoder through a fresh run.
                cold_start(id, ctx)?
            } else {
                pr.start()
            });
        }
        starts.extend(extra(id));
        let r = run_best_of(id, ctx, starts)?;
        done.push(r.clone());
        Ok(r)
    }
    schemes
        .iter()
        .map(|&id| solve(id, ctx, extra, &mut done))
        .collect()
}

/// Hybrid factors `W_A` (`MN x n_rf`, unit modulus) and `W_D` (`n_rf x K`)
/// fitted to a target precoder by alternating least squares and phase
/// projection. Keeps the iterate with the smallest residual
/// `||W - W_A W_D||_F`; `residuals` lists the residual of every iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridFit {
    pub analog: DMatrix<C64>,
    pub digital: DMatrix<C64>,
    pub residuals: Vec<f64>,
}

fn unit_phase(z: C64) -> C64 {
    if z.norm() > 0.0 {
        z / z.norm()
    } else {
        C64::new(1.0, 0.0)
    }
}

pub fn fit_fully_connected(target: &DMatrix<C64>, n_rf: usize, iters: usize) -> Result<HybridFit> {
    let rows = target.nrows();
    if n_rf == 0 || n_rf > rows {
        return Err(Error::DimensionMismatch {
            what: "RF chains (1..=antennas)",
            expected: rows,
            got: n_rf,
        });
    }
    // Phases of the target columns first, DFT columns after.
    let mut analog = DMatrix::from_fn(rows, n_rf, |i, j| {
        if j < target.ncols() {
            unit_phase(target[(i, j)])
        } else {
            C64::cis(-std::f64::consts::TAU * (i * j) as f64 / rows as f64)
        }
    });
    let mut best: Option<(DMatrix<C64>, DMatrix<C64>, f64)> = None;
    let mut residuals = Vec::with_capacity(iters);
    for _ in 0..iters.max(1) {
        // Truncated pseudo-inverse: phase projection can make columns of
        // W_A nearly parallel.
        let svd = analog.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        let digital = svd
            .solve(target, 1e-6 * s_max)
            .map_err(|_| Error::DimensionMismatch {
                what: "hybrid fit least squares",
                expected: rows,
                got: n_rf,
            })?;
        let resid = (target - &analog * &digital).norm();
        residuals.push(resid);
        let next = (target * digital.adjoint()).map(unit_phase);
        if best.as_ref().is_none_or(|b| resid < b.2) {
            best = Some((analog, digital, resid));
        }
        if resid <= 1e-12 * target.norm() {
            break;
        }
        analog = next;
    }
    let (analog, digital, _) = best.expect("at least one iteration");
    Ok(HybridFit {
        analog,
        digital,
        residuals,
    })
}

fn fully_connected(ctx: &TrialContext, start: Start) -> Result<SchemeReport> {
    let cfg = AoConfig {
        freedom: PoseFreedom::FROZEN,
        ..ctx.ao
    };
    let problem = ctx.problem(GainModel::Polarized);
    let fd = ao_run(&problem, &cfg, start.poses, start.bf)?;
    let target = fd.beamformers.effective();
    let n_rf = ctx.geom.n_subarrays();
    check_dim("users (at most RF chains)", n_rf.max(target.ncols()), n_rf)?;
    let fit = fit_fully_connected(&target, n_rf, FULLY_CONNECTED_FIT_ITERS)?;
    let mut bf = Beamformers {
        digital: fit.digital,
        analog: AnalogBeamformer::Dense(fit.analog),
    };
    let p = bf.transmit_power();
    if p > 0.0 {
        bf.digital *= C64::new((ctx.power / p).sqrt(), 0.0);
    }
    let h = problem.synth.channel(ctx.geom, &fd.poses)?;
    let rate = sum_rate(&h, &bf, ctx.noise)?;
    let state = update_uv(&h, &bf, ctx.noise)?;
    let fp = fp_objective(&h, &bf, &state, ctx.noise)?;
    let report = RunReport {
        initial_sum_rate: fd.initial_sum_rate,
        sum_rate: vec![rate],
        fp_objective: vec![fp],
        timings: SubproblemTimings {
            dbf: fd.timings.dbf,
            ..fd.timings
        },
        poses: fd.poses,
        beamformers: bf,
        termination: Termination::Converged,
    };
    Ok(SchemeReport {
        scheme: SchemeId::FullyConnectedFA,
        report,
        sum_rate: rate,
    })
}
