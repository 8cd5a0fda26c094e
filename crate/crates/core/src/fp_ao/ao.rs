//! Outer alternating-optimization loop.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use super::{
    abf_quadratic, dbf_objective, fp_objective, solve_dbf, sum_rate, update_uv, AnalogBeamformer,
    Beamformers,
};
use crate::channel::ChannelSynth;
use crate::error::{check_dim, Error, Result};
use crate::geometry::{pose_feasible, ArrayGeometry, Pose};
use crate::manifold::{rcg_best_of, rcg_minimize, CirclePoint, RcgConfig};
use crate::motion_opt::{update_subarray_pose, PoseFreedom, PoseStepConfig, PoseWeights};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoConfig {
    /// Stop once the sum rate changes by less than this (bps/Hz).
    pub epsilon: f64,
    pub max_iters: usize,
    pub update_dbf: bool,
    pub update_abf: bool,
    pub freedom: PoseFreedom,
    pub rcg: RcgConfig,
    pub pose_step: PoseStepConfig,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iters: 200,
            update_dbf: true,
            update_abf: true,
            freedom: PoseFreedom::FULL,
            rcg: RcgConfig::default(),
            pose_step: PoseStepConfig::default(),
        }
    }
}

/// Everything the loop needs besides its starting point.
#[derive(Debug, Clone, Copy)]
pub struct AoProblem<'a> {
    pub geom: &'a ArrayGeometry,
    pub synth: &'a ChannelSynth,
    /// Per-user noise power, watts.
    pub noise: &'a [f64],
    /// Total transmit power budget, watts.
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubproblemTimings {
    pub uv: Duration,
    pub dbf: Duration,
    pub abf: Duration,
    pub poses: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Sum rate at the starting point.
    pub initial_sum_rate: f64,
    /// Sum rate after each outer iteration, bps/Hz.
    pub sum_rate: Vec<f64>,
    /// Surrogate value (nats) after the last block of each iteration.
    pub fp_objective: Vec<f64>,
    pub timings: SubproblemTimings,
    pub poses: Vec<Pose>,
    pub beamformers: Beamformers,
    pub termination: Termination,
}

impl RunReport {
    pub fn iterations(&self) -> usize {
        self.sum_rate.len()
    }

    pub fn final_sum_rate(&self) -> f64 {
        self.sum_rate.last().copied().unwrap_or(self.initial_sum_rate)
    }
}

fn budget(analog: &AnalogBeamformer, power: f64) -> Result<f64> {
    analog.power_scale().map(|s| power / s).ok_or(Error::InvalidConfig {
        key: "analog".into(),
        reason: "alternating optimization needs a sub-connected or fully-digital structure".into(),
    })
}

/// Starting beamformers for a given analog structure: zero phases and a
/// matched filter through `W_A^H`, scaled to the power budget.
pub fn initial_beamformers(
    problem: &AoProblem,
    poses: &[Pose],
    analog: AnalogBeamformer,
) -> Result<Beamformers> {
    let h = problem.synth.channel(problem.geom, poses)?;
    check_dim("analog beamformer antennas", h.nrows(), analog.n_antennas())?;
    let psi = analog.adjoint_apply(&h);
    let norm = psi.norm();
    let scale = budget(&analog, problem.power)?.sqrt() / norm;
    let digital = if norm > 0.0 && scale.is_finite() {
        psi * C64::new(scale, 0.0)
    } else {
        DMatrix::zeros(psi.nrows(), psi.ncols())
    };
    Ok(Beamformers { digital, analog })
}

/// Sub-connected start with `b` all ones.
pub fn default_start(problem: &AoProblem) -> Result<(Vec<Pose>, Beamformers)> {
    let poses = problem.geom.initial_poses();
    let analog = AnalogBeamformer::SubConnected {
        b: CirclePoint::ones(problem.geom.n_antennas()),
        per_chain: problem.geom.antennas_per_subarray(),
    };
    let bf = initial_beamformers(problem, &poses, analog)?;
    Ok((poses, bf))
}

/// Runs the loop from an explicit starting point.
pub fn ao_run(
    problem: &AoProblem,
    cfg: &AoConfig,
    poses: Vec<Pose>,
    bf: Beamformers,
) -> Result<RunReport> {
    let geom = problem.geom;
    let synth = problem.synth;
    check_dim("poses", geom.n_subarrays(), poses.len())?;
    check_dim("noise powers", synth.n_users(), problem.noise.len())?;
    for (n, p) in poses.iter().enumerate() {
        if !pose_feasible(geom, p, n) {
            return Err(Error::InvalidConfig {
                key: "poses".into(),
                reason: format!("initial pose of sub-array {n} is infeasible"),
            });
        }
    }
    let budget = budget(&bf.analog, problem.power)?;
    let mut poses = poses;
    let mut bf = bf;
    let mut h = synth.channel(geom, &poses)?;
    let initial = sum_rate(&h, &bf, problem.noise)?;
    let mut prev = initial;
    let mut rates = Vec::new();
    let mut fp_trace = Vec::new();
    let mut timings = SubproblemTimings::default();
    let mut termination = Termination::MaxIterations;

    for _ in 0..cfg.max_iters {
        let t = Instant::now();
        let state = update_uv(&h, &bf, problem.noise)?;
        timings.uv += t.elapsed();

        if cfg.update_dbf {
            let t = Instant::now();
            let psi = bf.analog.adjoint_apply(&h);
            let sol = solve_dbf(&psi, &state, budget)?;
            // The closed form is optimal up to bisection precision; never
            // trade the current iterate for a marginally worse one.
            if dbf_objective(&psi, &state, &sol.w) >= dbf_objective(&psi, &state, &bf.digital) {
                bf.digital = sol.w;
            }
            timings.dbf += t.elapsed();
        }

        if cfg.update_abf {
            if let AnalogBeamformer::SubConnected { b, per_chain } = &bf.analog {
                let t = Instant::now();
                let q = abf_quadratic(&h, &bf.digital, &state)?;
                // Restarts only on the first pass; later passes stay in the
                // basin of the warm start.
                let out = if rates.is_empty() {
                    rcg_best_of(&q, b, &cfg.rcg, |_| {})
                } else {
                    rcg_minimize(&q, b, &cfg.rcg)
                };
                bf.analog = AnalogBeamformer::SubConnected {
                    b: out.point,
                    per_chain: *per_chain,
                };
                timings.abf += t.elapsed();
            }
        }

        if cfg.freedom.any() {
            let t = Instant::now();
            let weights = PoseWeights::new(&bf.effective(), &state);
            for n in 0..geom.n_subarrays() {
                update_subarray_pose(synth, geom, &mut poses, &mut h, &weights, n, cfg.freedom, &cfg.pose_step);
            }
            timings.poses += t.elapsed();
        }

        fp_trace.push(fp_objective(&h, &bf, &state, problem.noise)?);
        let rate = sum_rate(&h, &bf, problem.noise)?;
        rates.push(rate);
        log::debug!("AO iteration {}: sum rate {rate:.6}", rates.len());
        if (rate - prev).abs() < cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
        prev = rate;
    }

    Ok(RunReport {
        initial_sum_rate: initial,
        sum_rate: rates,
        fp_objective: fp_trace,
        timings,
        poses,
        beamformers: bf,
        termination,
    })
}

/// Runs the loop from region centers, zero angles and default beamformers.
pub fn ao_solve(problem: &AoProblem, cfg: &AoConfig) -> Result<RunReport> {
    let (poses, bf) = default_start(problem)?;
    ao_run(problem, cfg, poses, bf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{spherical_basis, GainModel, PathSet, UserPaths};
    use crate::geometry::{grid_offsets, BoxRegion, Interval, RotationRange};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 0.01;

    fn geometry(span: f64, zeta: f64) -> ArrayGeometry {
        let pitch = span + 4.0 * LAMBDA;
        let regions = (0..3)
            .map(|i| {
                let x = (i as f64 - 1.0) * pitch;
                BoxRegion::new(
                    Interval::new(x - 0.5 * span, x + 0.5 * span),
                    Interval::point(0.0),
                    Interval::new(-0.5 * span, 0.5 * span),
                )
            })
            .collect();
        ArrayGeometry::new(grid_offsets(4, 0.5 * LAMBDA), regions, RotationRange::symmetric(zeta), LAMBDA)
    }

    fn paths(rng: &mut impl Rng) -> PathSet {
        let users = (0..3)
            .map(|_| {
                let l = 4;
                let theta: Vec<f64> = (0..l).map(|_| (2.0 * rng.random::<f64>() - 1.0).asin()).collect();
                let phi: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
                let prm = DMatrix::from_fn(l, l, |i, j| {
                    if i == j {
                        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    } else {
                        C64::new(0.0, 0.0)
                    }
                });
                let p_r = theta.iter().zip(&phi).map(|(&t, &p)| spherical_basis(t, p).0).collect();
                UserPaths::new(theta, phi, prm, p_r).unwrap()
            })
            .collect();
        PathSet { users }
    }

    fn run(seed: u64, cfg: &AoConfig) -> RunReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = geometry(2.0 * LAMBDA, 0.35);
        let synth = ChannelSynth::new(&paths(&mut rng), GainModel::Polarized);
        let noise = [0.05; 3];
        let problem = AoProblem {
            geom: &geom,
            synth: &synth,
            noise: &noise,
            power: 1.0,
        };
        ao_solve(&problem, cfg).unwrap()
    }

    fn assert_monotone(r: &RunReport) {
        let mut prev = r.initial_sum_rate;
        for &x in &r.sum_rate {
            assert!(x >= prev - 1e-9, "{prev} -> {x}");
            prev = x;
        }
    }

    #[test]
    fn huge_epsilon_stops_after_one_iteration() {
        let r = run(1, &AoConfig {
            epsilon: 1e9,
            ..Default::default()
        });
        assert_eq!(r.iterations(), 1);
        assert_eq!(r.termination, Termination::Converged);
    }

    #[test]
    fn full_run_is_monotone_and_feasible() {
        for seed in 0..5 {
            let r = run(seed, &AoConfig::default());
            assert_monotone(&r);
            assert!(r.iterations() <= 200);
            assert!(r.final_sum_rate() > r.initial_sum_rate);
            assert!(4.0 * r.beamformers.digital.norm_squared() <= 1.0 + 1e-9);
            // surrogate never exceeds the rate it lower-bounds
            for (fp, rate) in r.fp_objective.iter().zip(&r.sum_rate) {
                assert!(fp / std::f64::consts::LN_2 <= rate + 1e-9);
            }
        }
    }

    #[test]
    fn dbf_only_ablation_is_monotone() {
        let cfg = AoConfig {
            update_abf: false,
            freedom: PoseFreedom::FROZEN,
            ..Default::default()
        };
        let r = run(7, &cfg);
        assert_monotone(&r);
        let start = geometry(2.0 * LAMBDA, 0.35).initial_poses();
        assert_eq!(r.poses, start);
    }

    #[test]
    fn fully_digital_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let geom = geometry(0.0, 0.0);
        let synth = ChannelSynth::new(&paths(&mut rng), GainModel::Polarized);
        let noise = [0.05; 3];
        let problem = AoProblem {
            geom: &geom,
            synth: &synth,
            noise: &noise,
            power: 1.0,
        };
        let poses = geom.initial_poses();
        let bf = initial_beamformers(&problem, &poses, AnalogBeamformer::Identity { n_antennas: 12 }).unwrap();
        let r = ao_run(&problem, &AoConfig::default(), poses, bf).unwrap();
        assert_monotone(&r);
        assert!(r.beamformers.transmit_power() <= 1.0 + 1e-9);
    }

    #[test]
    fn rejects_infeasible_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let geom = geometry(0.0, 0.0);
        let synth = ChannelSynth::new(&paths(&mut rng), GainModel::Polarized);
        let noise = [0.05; 3];
        let problem = AoProblem {
            geom: &geom,
            synth: &synth,
            noise: &noise,
            power: 1.0,
        };
        let (mut poses, bf) = default_start(&problem).unwrap();
        poses[0].center.x += 1.0;
        assert!(ao_run(&problem, &AoConfig::default(), poses, bf).is_err());
    }
}
