//! Sequential per-sub-array pose updates by gradient ascent with step
//! halving and feasibility rejection.
//!
//! With beamformers and auxiliary variables fixed, the pose-dependent part of
//! the surrogate is
//!
//! ```text
//! L = sum_k ( -mu_k ||F^H h_k||^2 + 2 Re{h_k^H omega_hat_k} ),  omega_hat_k = (1 + u_k) conj(v_k) f_k
//! ```
//!
//! where `F` is the effective precoder and `f_k` its `k`-th column.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelMatrix, ChannelSynth};
use crate::fp_ao::FpState;
use crate::geometry::{pose_feasible, ArrayGeometry, Axis, Pose};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseStepConfig {
    /// Initial position step, meters per unit gradient.
    pub kappa_c: f64,
    /// Initial angle step, radians per unit gradient.
    pub kappa_r: f64,
    pub max_halvings: usize,
}

impl Default for PoseStepConfig {
    fn default() -> Self {
        Self {
            kappa_c: 10.0,
            kappa_r: 10.0,
            max_halvings: 30,
        }
    }
}

/// Which pose components may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseFreedom {
    pub positions: bool,
    pub angles: bool,
}

impl PoseFreedom {
    pub const FULL: Self = Self {
        positions: true,
        angles: true,
    };
    pub const FROZEN: Self = Self {
        positions: false,
        angles: false,
    };

    pub fn any(&self) -> bool {
        self.positions || self.angles
    }
}

/// Pose-subproblem weights for fixed beamformers and auxiliary variables.
#[derive(Debug, Clone)]
pub struct PoseWeights {
    /// Effective precoder `MN x K`.
    pub f: DMatrix<C64>,
    pub mu: Vec<f64>,
    /// Column `k` is `omega_hat_k`.
    pub omega_hat: DMatrix<C64>,
}

impl PoseWeights {
    pub fn new(f: &DMatrix<C64>, state: &FpState) -> Self {
        let mut omega_hat = f.clone();
        for (k, mut col) in omega_hat.column_iter_mut().enumerate() {
            col *= state.v[k].conj() * (1.0 + state.u[k]);
        }
        Self {
            f: f.clone(),
            mu: state.mu(),
            omega_hat,
        }
    }

    /// `omega_hat_k - mu_k F F^H h_k`, one column per user.
    fn residual(&self, h: &ChannelMatrix) -> DMatrix<C64> {
        let g = self.f.adjoint() * h;
        let mut out = &self.f * g;
        for (k, mut col) in out.column_iter_mut().enumerate() {
            col *= C64::new(-self.mu[k], 0.0);
        }
        out + &self.omega_hat
    }
}

pub fn pose_objective(h: &ChannelMatrix, w: &PoseWeights) -> f64 {
    let g = h.adjoint() * &w.f;
    (0..h.ncols())
        .map(|k| {
            let quad: f64 = g.row(k).iter().map(|z| z.norm_sqr()).sum();
            let lin = h.column(k).dotc(&w.omega_hat.column(k)).re;
            -w.mu[k] * quad + 2.0 * lin
        })
        .sum()
}

/// Gradients of [`pose_objective`] with respect to the center and Euler
/// angles of sub-array `n`, for the channel `h` synthesized at `poses`.
pub fn pose_gradients(
    synth: &ChannelSynth,
    geom: &ArrayGeometry,
    poses: &[Pose],
    h: &ChannelMatrix,
    w: &PoseWeights,
    n: usize,
) -> (Vector3<f64>, Vector3<f64>) {
    let m = geom.antennas_per_subarray();
    let resid = w.residual(h);
    let mut gc = Vector3::zeros();
    let mut gr = Vector3::zeros();
    for k in 0..h.ncols() {
        let (dc, dr) = synth.block_gradients(geom, &poses[n], k);
        let block = resid.view((n * m, k), (m, 1));
        gc += (dc * block).map(|z| 2.0 * z.re);
        gr += (dr * block).map(|z| 2.0 * z.re);
    }
    (gc, gr)
}

/// Outcome of one sub-array update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseUpdate {
    pub position_moved: bool,
    pub angles_moved: bool,
    /// Halvings used by the position and orientation searches.
    pub halvings: (usize, usize),
}

fn mask_position(geom: &ArrayGeometry, n: usize, g: &mut Vector3<f64>) {
    let region = &geom.regions[n];
    for i in 0..3 {
        if region.axis(i).is_degenerate() {
            g[i] = 0.0;
        }
    }
}

fn mask_angles(geom: &ArrayGeometry, g: &mut Vector3<f64>) {
    for ax in Axis::ALL {
        if geom.rot_range.get(ax).is_degenerate() {
            g[ax.index()] = 0.0;
        }
    }
}

/// Shrink-and-retry search along `grad`. Returns the accepted pose, its
/// channel and objective, and the number of halvings used.
#[allow(clippy::too_many_arguments)]
fn line_search(
    synth: &ChannelSynth,
    geom: &ArrayGeometry,
    h: &ChannelMatrix,
    w: &PoseWeights,
    n: usize,
    current: f64,
    max_halvings: usize,
    mut kappa: f64,
    candidate: impl Fn(f64) -> Pose,
) -> (Option<(Pose, ChannelMatrix, f64)>, usize) {
    let mut trial = h.clone();
    for halvings in 0..=max_halvings {
        let pose = candidate(kappa);
        if pose_feasible(geom, &pose, n) {
            synth.write_block(geom, &pose, n, &mut trial);
            let obj = pose_objective(&trial, w);
            if obj >= current {
                return (Some((pose, trial, obj)), halvings);
            }
        }
        kappa *= 0.5;
    }
    (None, max_halvings)
}

/// Updates the position and then the orientation of sub-array `n`. `h` must
/// be the channel at `poses`; on return both reflect the accepted pose, and
/// [`pose_objective`] has not decreased.
#[allow(clippy::too_many_arguments)]
pub fn update_subarray_pose(
    synth: &ChannelSynth,
    geom: &ArrayGeometry,
    poses: &mut [Pose],
    h: &mut ChannelMatrix,
    w: &PoseWeights,
    n: usize,
    freedom: PoseFreedom,
    cfg: &PoseStepConfig,
) -> PoseUpdate {
    let mut out = PoseUpdate::default();
    let mut current = pose_objective(h, w);

    if freedom.positions {
        let (mut gc, _) = pose_gradients(synth, geom, poses, h, w, n);
        mask_position(geom, n, &mut gc);
        if gc.iter().any(|&g| g != 0.0) {
            let base = poses[n];
            let (acc, halvings) = line_search(synth, geom, h, w, n, current, cfg.max_halvings, cfg.kappa_c, |kappa| {
                Pose::new(base.center + gc * kappa, base.angles)
            });
            out.halvings.0 = halvings;
            if let Some((pose, trial, obj)) = acc {
                poses[n] = pose;
                *h = trial;
                current = obj;
                out.position_moved = true;
            }
        }
    }

    if freedom.angles {
        // Gradient at the (possibly) new position.
        let (_, mut gr) = pose_gradients(synth, geom, poses, h, w, n);
        mask_angles(geom, &mut gr);
        if gr.iter().any(|&g| g != 0.0) {
            let base = poses[n];
            let start = base.angles.to_vector();
            let (acc, halvings) = line_search(synth, geom, h, w, n, current, cfg.max_halvings, cfg.kappa_r, |kappa| {
                Pose::new(base.center, crate::geometry::EulerAngles::from_vector(&(start + gr * kappa)))
            });
            out.halvings.1 = halvings;
            if let Some((pose, trial, _)) = acc {
                poses[n] = pose;
                *h = trial;
                out.angles_moved = true;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{GainModel, PathSet, UserPaths};
    use crate::fp_ao::{fp_objective, update_uv, AnalogBeamformer, Beamformers};
    use crate::geometry::{grid_offsets, BoxRegion, EulerAngles, Interval, RotationRange};
    use crate::manifold::CirclePoint;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 0.01;

    fn geometry(n: usize, span: f64, zeta: f64) -> ArrayGeometry {
        let pitch = span + 4.0 * LAMBDA;
        let regions = (0..n)
            .map(|i| {
                let x = (i as f64 - 0.5 * (n as f64 - 1.0)) * pitch;
                BoxRegion::new(
                    Interval::new(x - 0.5 * span, x + 0.5 * span),
                    Interval::point(0.0),
                    Interval::new(-0.5 * span, 0.5 * span),
                )
            })
            .collect();
        ArrayGeometry::new(grid_offsets(4, 0.5 * LAMBDA), regions, RotationRange::symmetric(zeta), LAMBDA)
    }

    fn random_paths(rng: &mut impl Rng, k: usize, l: usize) -> PathSet {
        let users = (0..k)
            .map(|_| {
                let theta: Vec<f64> = (0..l).map(|_| (2.0 * rng.random::<f64>() - 1.0).asin()).collect();
                let phi: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
                let prm = DMatrix::from_fn(l, l, |i, j| {
                    if i == j {
                        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    } else {
                        C64::new(0.0, 0.0)
                    }
                });
                let p_r = theta
                    .iter()
                    .zip(&phi)
                    .map(|(&t, &p)| {
                        let (et, ep) = crate::channel::spherical_basis(t, p);
                        let chi = rng.random_range(0.0..std::f64::consts::TAU);
                        et * chi.cos() + ep * chi.sin()
                    })
                    .collect();
                UserPaths::new(theta, phi, prm, p_r).unwrap()
            })
            .collect();
        PathSet { users }
    }

    fn random_pose(rng: &mut impl Rng, geom: &ArrayGeometry, n: usize) -> Pose {
        let r = &geom.regions[n];
        let pick = |rng: &mut dyn rand::RngCore, iv: &Interval| iv.lo + rng.random::<f64>() * iv.width();
        let c = Vector3::new(pick(rng, r.axis(0)), pick(rng, r.axis(1)), pick(rng, r.axis(2)));
        let a = EulerAngles::new(
            pick(rng, geom.rot_range.get(Axis::Alpha)),
            pick(rng, geom.rot_range.get(Axis::Beta)),
            pick(rng, geom.rot_range.get(Axis::Gamma)),
        );
        Pose::new(c, a)
    }

    struct Instance {
        geom: ArrayGeometry,
        synth: ChannelSynth,
        poses: Vec<Pose>,
        bf: Beamformers,
        noise: Vec<f64>,
    }

    fn instance(rng: &mut impl Rng, model: GainModel) -> Instance {
        let geom = geometry(3, 2.0 * LAMBDA, 0.35);
        let paths = random_paths(rng, 3, 4);
        let synth = ChannelSynth::new(&paths, model);
        let poses = (0..3).map(|n| random_pose(rng, &geom, n)).collect();
        let phases: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..6.3)).collect();
        let digital = DMatrix::from_fn(3, 3, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let bf = Beamformers {
            digital,
            analog: AnalogBeamformer::SubConnected {
                b: CirclePoint::from_phases(&phases),
                per_chain: 4,
            },
        };
        Instance {
            geom,
            synth,
            poses,
            bf,
            noise: vec![0.5, 1.0, 2.0],
        }
    }

    fn weights(inst: &Instance, h: &ChannelMatrix) -> (PoseWeights, FpState) {
        let st = update_uv(h, &inst.bf, &inst.noise).unwrap();
        (PoseWeights::new(&inst.bf.effective(), &st), st)
    }

    #[test]
    fn zero_beamformer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = instance(&mut rng, GainModel::Polarized);
        let h = inst.synth.channel(&inst.geom, &inst.poses).unwrap();
        let st = FpState {
            u: vec![1.0; 3],
            v: vec![C64::new(0.5, 0.5); 3],
        };
        let w = PoseWeights::new(&DMatrix::zeros(12, 3), &st);
        assert_eq!(pose_objective(&h, &w), 0.0);
        let (gc, gr) = pose_gradients(&inst.synth, &inst.geom, &inst.poses, &h, &w, 1);
        assert_eq!(gc, Vector3::zeros());
        assert_eq!(gr, Vector3::zeros());
    }

    #[test]
    fn completing_the_square() {
        // one user, omega_hat = mu F F^H h: L = mu ||F^H h||^2
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = DMatrix::from_fn(4, 1, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let f = DMatrix::from_fn(4, 1, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let mu = 0.7;
        let w = PoseWeights {
            omega_hat: &f * (f.adjoint() * &h) * C64::new(mu, 0.0),
            f: f.clone(),
            mu: vec![mu],
        };
        let expect = mu * (f.adjoint() * &h).norm_squared();
        assert_abs_diff_eq!(pose_objective(&h, &w), expect, epsilon = 1e-12);
    }

    #[test]
    fn differs_from_surrogate_by_a_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let inst = instance(&mut rng, GainModel::Polarized);
            let h0 = inst.synth.channel(&inst.geom, &inst.poses).unwrap();
            let (w, st) = weights(&inst, &h0);
            let mut other = inst.poses.clone();
            other[1] = random_pose(&mut rng, &inst.geom, 1);
            let h1 = inst.synth.channel(&inst.geom, &other).unwrap();
            let d_fp = fp_objective(&h1, &inst.bf, &st, &inst.noise).unwrap()
                - fp_objective(&h0, &inst.bf, &st, &inst.noise).unwrap();
            let d_pose = pose_objective(&h1, &w) - pose_objective(&h0, &w);
            assert_abs_diff_eq!(d_fp, d_pose, epsilon = 1e-10);
        }
    }

    fn fd_check(model: GainModel, seed: u64, trials: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..trials {
            let inst = instance(&mut rng, model);
            let h = inst.synth.channel(&inst.geom, &inst.poses).unwrap();
            let (w, st) = weights(&inst, &h);
            let n = rng.random_range(0..3);
            let (gc, gr) = pose_gradients(&inst.synth, &inst.geom, &inst.poses, &h, &w, n);
            // FD of the surrogate itself, not only of the pose objective.
            let eval = |p: &[Pose]| {
                let h = inst.synth.channel(&inst.geom, p).unwrap();
                fp_objective(&h, &inst.bf, &st, &inst.noise).unwrap()
            };
            let mut fd_c = Vector3::zeros();
            let mut fd_r = Vector3::zeros();
            for i in 0..3 {
                let (mut a, mut b) = (inst.poses.clone(), inst.poses.clone());
                a[n].center[i] += 1e-7;
                b[n].center[i] -= 1e-7;
                fd_c[i] = (eval(&a) - eval(&b)) / 2e-7;
                let (mut a, mut b) = (inst.poses.clone(), inst.poses.clone());
                let ax = Axis::ALL[i];
                let x = inst.poses[n].angles.get(ax);
                a[n].angles.set(ax, x + 1e-6);
                b[n].angles.set(ax, x - 1e-6);
                fd_r[i] = (eval(&a) - eval(&b)) / 2e-6;
            }
            assert!((gc - fd_c).norm() <= 1e-5 * gc.norm().max(1e-12), "{gc} vs {fd_c}");
            assert!((gr - fd_r).norm() <= 1e-5 * gr.norm().max(1e-12), "{gr} vs {fd_r}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(GainModel::Polarized, 4, 30);
    }

    #[test]
    fn unpolarized_gradients_match_finite_differences() {
        fd_check(GainModel::Unpolarized, 5, 15);
    }

    #[test]
    fn gradient_ignores_other_blocks_residual() {
        // Changing weights on rows outside block n leaves the block gradient unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = instance(&mut rng, GainModel::Polarized);
        let h = inst.synth.channel(&inst.geom, &inst.poses).unwrap();
        let (w, _) = weights(&inst, &h);
        let g0 = pose_gradients(&inst.synth, &inst.geom, &inst.poses, &h, &w, 0);
        let mut w2 = w.clone();
        for row in 4..12 {
            for k in 0..3 {
                w2.omega_hat[(row, k)] += C64::new(0.3, -0.1);
            }
        }
        let g1 = pose_gradients(&inst.synth, &inst.geom, &inst.poses, &h, &w2, 0);
        assert!((g0.0 - g1.0).norm() < 1e-12 * g0.0.norm().max(1.0));
        assert!((g0.1 - g1.1).norm() < 1e-12 * g0.1.norm().max(1.0));
    }

    #[test]
    fn zero_gradient_leaves_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = instance(&mut rng, GainModel::Polarized);
        let mut h = inst.synth.channel(&inst.geom, &inst.poses).unwrap();
        let st = FpState {
            u: vec![0.0; 3],
            v: vec![C64::new(0.0, 0.0); 3],
        };
        let w = PoseWeights::new(&inst.bf.effective(), &st);
        let mut poses = inst.poses.clone();
        let up = update_subarray_pose(&inst.synth, &inst.geom, &mut poses, &mut h, &w, 0, PoseFreedom::FULL, &PoseStepConfig::default());
        assert_eq!(poses, inst.poses);
        assert!(!up.position_moved && !up.angles_moved);
    }

    #[test]
    fn infeasible_steps_are_rejected() {
        // A point box: every nonzero position step leaves the region.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut inst = instance(&mut rng, GainModel::Polarized);
        inst.geom = geometry(3, 0.0, 0.0);
        inst.poses = inst.geom.initial_poses();
        let mut h = inst.synth.channel(&inst.geom, &inst.poses).unwrap();
        let (w, _) = weights(&inst, &h);
        let mut poses = inst.poses.clone();
        let cfg = PoseStepConfig {
            max_halvings: 5,
            ..Default::default()
        };
        let up = update_subarray_pose(&inst.synth, &inst.geom, &mut poses, &mut h, &w, 1, PoseFreedom::FULL, &cfg);
        assert_eq!(poses, inst.poses);
        assert!(!up.position_moved && !up.angles_moved);
    }

    #[test]
    fn updates_never_decrease_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut moved = 0;
        for _ in 0..500 {
            let inst = instance(&mut rng, GainModel::Polarized);
            let mut h = inst.synth.channel(&inst.geom, &inst.poses).unwrap();
            let (w, _) = weights(&inst, &h);
            let before = pose_objective(&h, &w);
            let mut poses = inst.poses.clone();
            let n = rng.random_range(0..3);
            let up = update_subarray_pose(&inst.synth, &inst.geom, &mut poses, &mut h, &w, n, PoseFreedom::FULL, &PoseStepConfig::default());
            let h_check = inst.synth.channel(&inst.geom, &poses).unwrap();
            assert!((&h - &h_check).norm() <= 1e-12 * h_check.norm());
            assert!(pose_objective(&h, &w) >= before - 1e-12 * before.abs().max(1.0));
            assert!(pose_feasible(&inst.geom, &poses[n], n));
            for m in (0..3).filter(|&m| m != n) {
                assert_eq!(poses[m], inst.poses[m]);
            }
            moved += usize::from(up.position_moved || up.angles_moved);
        }
        assert!(moved > 250, "only {moved} updates moved");
    }
}
