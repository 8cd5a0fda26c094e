//! Riemannian conjugate gradient on the product of unit circles.
//!
//! Minimizes the analog-beamformer surrogate
//!
//! ```text
//! L(b) = sum_k ( mu_k sum_k' |h_{k,k'}^H b|^2 - 2 Re{omega_k^H b} ),   |b_s| = 1
//! ```
//!
//! Tangent vectors at `b` satisfy `Re{z_s conj(b_s)} = 0`; the metric is
//! `<x, y> = Re{x^H y}`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::C64;

/// Point on the complex circle manifold: every entry has unit modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct CirclePoint(DVector<C64>);

impl CirclePoint {
    /// Accepts `b` if all entries have modulus within `1e-12` of one.
    pub fn new(b: DVector<C64>) -> Result<Self> {
        if let Some(index) = b.iter().position(|z| (z.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidConfig {
                key: "analog beamformer".into(),
                reason: format!("entry {index} is not unit modulus"),
            });
        }
        Ok(Self(b))
    }

    /// Normalizes every entry; fails on a zero entry.
    pub fn normalized(b: DVector<C64>) -> Result<Self> {
        let mut b = b;
        for (index, z) in b.iter_mut().enumerate() {
            let r = z.norm();
            if r == 0.0 || !r.is_finite() {
                return Err(Error::RetractionDegenerate { index });
            }
            *z /= r;
        }
        Ok(Self(b))
    }

    /// All-zero phases.
    pub fn ones(len: usize) -> Self {
        Self(DVector::from_element(len, C64::new(1.0, 0.0)))
    }

    pub fn from_phases(phases: &[f64]) -> Self {
        Self(DVector::from_iterator(phases.len(), phases.iter().map(|&p| C64::cis(p))))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<C64> {
        self.0
    }

    pub fn phases(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.arg()).collect()
    }
}

/// Data of the analog-beamformer subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct AbfQuadratic {
    /// Positive weight per user.
    pub mu: Vec<f64>,
    /// `h_bar[k][k']`, each of length `MN`.
    pub h_bar: Vec<Vec<DVector<C64>>>,
    /// Linear term per user, length `MN`.
    pub omega_bar: Vec<DVector<C64>>,
}

impl AbfQuadratic {
    pub fn dim(&self) -> usize {
        self.omega_bar.first().map_or(0, |w| w.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.mu.len();
        check_dim("h_bar users", k, self.h_bar.len())?;
        check_dim("omega_bar users", k, self.omega_bar.len())?;
        let d = self.dim();
        for row in &self.h_bar {
            check_dim("h_bar inner users", k, row.len())?;
            for v in row {
                check_dim("h_bar length", d, v.len())?;
            }
        }
        for w in &self.omega_bar {
            check_dim("omega_bar length", d, w.len())?;
        }
        Ok(())
    }
}

/// `Re{x^H y}`
#[inline]
pub fn inner(x: &DVector<C64>, y: &DVector<C64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

pub fn abf_objective(q: &AbfQuadratic, b: &CirclePoint) -> f64 {
    let b = b.as_vector();
    let mut total = 0.0;
    for k in 0..q.mu.len() {
        let quad: f64 = q.h_bar[k].iter().map(|h| h.dotc(b).norm_sqr()).sum();
        total += q.mu[k] * quad - 2.0 * q.omega_bar[k].dotc(b).re;
    }
    total
}

/// Gradient with respect to `conj(b)`:
/// `sum_k ( mu_k sum_k' h_{k,k'} h_{k,k'}^H b - omega_k )`.
pub fn euclidean_grad(q: &AbfQuadratic, b: &CirclePoint) -> DVector<C64> {
    let b = b.as_vector();
    let mut g = DVector::<C64>::zeros(b.len());
    for k in 0..q.mu.len() {
        for h in &q.h_bar[k] {
            let s = h.dotc(b) * q.mu[k];
            g.axpy(s, h, C64::new(1.0, 0.0));
        }
        g -= &q.omega_bar[k];
    }
    g
}

/// Orthogonal projection onto the tangent space at `b`: `z - Re{z . conj(b)} . b`.
pub fn project_tangent(b: &CirclePoint, z: &DVector<C64>) -> DVector<C64> {
    DVector::from_iterator(
        z.len(),
        z.iter().zip(b.as_vector().iter()).map(|(zs, bs)| {
            let radial = zs.re * bs.re + zs.im * bs.im;
            zs - bs * radial
        }),
    )
}

/// Elementwise normalization of `b + step * dir`.
pub fn retract(b: &CirclePoint, step: f64, dir: &DVector<C64>) -> Result<CirclePoint> {
    let mut out = b.as_vector().clone();
    out.axpy(C64::new(step, 0.0), dir, C64::new(1.0, 0.0));
    CirclePoint::normalized(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgConfig {
    /// Stop when successive objective values differ by less than this.
    pub tol: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub contraction: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// Extra seeded random starting points tried by [`rcg_best_of`].
    pub restarts: usize,
}

impl Default for RcgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 500,
            initial_step: 1.0,
            contraction: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 60,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcgExit {
    Converged,
    MaxIterations,
    /// No step satisfied the Armijo condition.
    LineSearchFailed,
    /// Riemannian gradient vanished.
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcgOutcome {
    pub point: CirclePoint,
    /// Objective at the start and after each accepted step.
    pub objective: Vec<f64>,
    /// Riemannian gradient norm at the returned point.
    pub grad_norm: f64,
    pub iterations: usize,
    pub exit: RcgExit,
}

/// Polak-Ribiere (PR+) conjugate gradient with Armijo backtracking.
///
/// The objective trace is non-increasing. The search direction restarts at
/// the negative gradient every `len(b)` iterations and whenever the
/// conjugate direction is not a descent direction.
pub fn rcg_minimize(q: &AbfQuadratic, b0: &CirclePoint, cfg: &RcgConfig) -> RcgOutcome {
    rcg_minimize_observed(q, b0, cfg, |_| {})
}

/// [`rcg_minimize`] that also hands every accepted iterate to `observe`.
pub fn rcg_minimize_observed(
    q: &AbfQuadratic,
    b0: &CirclePoint,
    cfg: &RcgConfig,
    mut observe: impl FnMut(&CirclePoint),
) -> RcgOutcome {
    let dim = b0.len();
    let mut b = b0.clone();
    let mut f = abf_objective(q, &b);
    let mut grad = project_tangent(&b, &euclidean_grad(q, &b));
    let mut dir = -&grad;
    let mut trace = vec![f];
    let mut exit = RcgExit::MaxIterations;
    let mut iterations = 0;
    let mut since_restart = 0;
    // Backtracking starts one expansion above the last accepted step.
    let mut trial_step = cfg.initial_step;

    while iterations < cfg.max_iters {
        let gg = inner(&grad, &grad);
        if gg == 0.0 || !gg.is_finite() {
            exit = RcgExit::Stationary;
            break;
        }
        // Directional derivative of L along dir is 2 Re{grad^H dir}.
        let mut slope = 2.0 * inner(&grad, &dir);
        if slope >= 0.0 {
            dir = -&grad;
            slope = -2.0 * gg;
        }

        let mut step = trial_step;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            if let Ok(cand) = retract(&b, step, &dir) {
                let fc = abf_objective(q, &cand);
                if fc <= f + cfg.armijo_c * step * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            step *= cfg.contraction;
        }
        trial_step = step / cfg.contraction;
        let Some((next, f_next)) = accepted else {
            exit = RcgExit::LineSearchFailed;
            break;
        };

        iterations += 1;
        let grad_next = project_tangent(&next, &euclidean_grad(q, &next));
        let moved_grad = project_tangent(&next, &grad);
        let moved_dir = project_tangent(&next, &dir);
        since_restart += 1;
        let beta = if since_restart >= dim {
            since_restart = 0;
            0.0
        } else {
            (inner(&grad_next, &(&grad_next - &moved_grad)) / gg).max(0.0)
        };
        dir = &moved_dir * C64::new(beta, 0.0) - &grad_next;

        let delta = (f_next - f).abs();
        observe(&next);
        b = next;
        f = f_next;
        grad = grad_next;
        trace.push(f);
        if delta < cfg.tol {
            exit = RcgExit::Converged;
            break;
        }
    }

    RcgOutcome {
        grad_norm: inner(&grad, &grad).sqrt(),
        point: b,
        objective: trace,
        iterations,
        exit,
    }
}

/// Runs [`rcg_minimize_observed`] from `b0`, from the phases of the linear
/// term `sum_k omega_bar_k`, and from `cfg.restarts` random phase vectors
/// drawn from a fixed seed. Returns the lowest final objective, earliest
/// start on ties, so the result never exceeds the one started at `b0`.
pub fn rcg_best_of(
    q: &AbfQuadratic,
    b0: &CirclePoint,
    cfg: &RcgConfig,
    mut observe: impl FnMut(&CirclePoint),
) -> RcgOutcome {
    let mut best = rcg_minimize_observed(q, b0, cfg, &mut observe);
    let dim = b0.len();
    let linear = q
        .omega_bar
        .iter()
        .fold(DVector::<C64>::zeros(dim), |acc, w| acc + w);
    let mut starts: Vec<CirclePoint> = CirclePoint::normalized(linear).into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    for _ in 0..cfg.restarts {
        let phases: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        starts.push(CirclePoint::from_phases(&phases));
    }
    for s in starts {
        let out = rcg_minimize_observed(q, &s, cfg, &mut observe);
        if out.objective.last() < best.objective.last() {
            best = out;
        }
    }
    best
}

const RESTART_SEED: u64 = 0x6d61;
