//! Simulation configuration and seeded random scenarios.
//!
//! Configuration files are TOML with four sections; every key is optional
//! and falls back to the defaults below.
//!
//! ```toml
//! [array]
//! subarrays = 4                 # N
//! antennas_per_subarray = 4     # M, laid out as a near-square grid at lambda/2
//! carrier_ghz = 30.0
//! movable_span_lambda = 2.0     # D, in wavelengths
//! rot_half_range_deg = 20.0     # zeta, degrees
//! # region_pitch_lambda = 8.0   # fixed center spacing of the movable regions
//!
//! [users]
//! count = 4                     # K
//! paths = 6                     # L
//! distance_min_m = 20.0
//! distance_max_m = 100.0
//! polarization = "theta"        # or "random"
//!
//! [link]
//! power_dbm = 10.0
//! noise_dbm = -80.0
//! rho0_db = -40.0
//! path_loss_exponent = 2.8
//! path_gain_law = "power"     # rho0 d^-alpha; or "squared-amplitude": (rho0 d^-alpha)^2
//!
//! [solver]
//! epsilon = 1e-3                # bps/Hz
//! max_iters = 200
//! kappa_c = 10.0
//! kappa_r = 10.0
//! max_halvings = 30
//!
//! [run]
//! seed = 0
//! trials = 50
//! ```

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{spherical_basis, PathSet, UserPaths};
use crate::error::{Error, Result};
use crate::fp_ao::AoConfig;
use crate::geometry::{grid_offsets, ArrayGeometry, BoxRegion, Interval, Pose, RotationRange};
use crate::motion_opt::PoseStepConfig;
use crate::{C64, SPEED_OF_LIGHT};

/// `x` dBm in watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// `x` dB as a linear amplitude factor, `10^(x/20)`.
pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarizationPolicy {
    /// `p_r = e_theta` of each path.
    #[default]
    Theta,
    /// `p_r = cos(chi) e_theta + sin(chi) e_phi`, `chi ~ U[0, 2 pi)`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub subarrays: usize,
    pub antennas_per_subarray: usize,
    pub carrier_ghz: f64,
    pub movable_span_lambda: f64,
    pub rot_half_range_deg: f64,
    pub region_pitch_lambda: Option<f64>,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            subarrays: 4,
            antennas_per_subarray: 4,
            carrier_ghz: 30.0,
            movable_span_lambda: 2.0,
            rot_half_range_deg: 20.0,
            region_pitch_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserConfig {
    pub count: usize,
    pub paths: usize,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub polarization: PolarizationPolicy,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self {
            count: 4,
            paths: 6,
            distance_min_m: 20.0,
            distance_max_m: 100.0,
            polarization: PolarizationPolicy::Theta,
        }
    }
}

/// How `rho0_db` and the path-loss exponent set the expected channel power.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathGainLaw {
    /// `rho0` is an amplitude and the power is `(rho0 d^-alpha)^2`.
    SquaredAmplitude,
    /// `rho0` is a power and the power is `rho0 d^-alpha`.
    #[default]
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub power_dbm: f64,
    pub noise_dbm: f64,
    pub rho0_db: f64,
    pub path_loss_exponent: f64,
    pub path_gain_law: PathGainLaw,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            power_dbm: 10.0,
            noise_dbm: -80.0,
            rho0_db: -40.0,
            path_loss_exponent: 2.8,
            path_gain_law: PathGainLaw::Power,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub kappa_c: f64,
    pub kappa_r: f64,
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let step = PoseStepConfig::default();
        Self {
            epsilon: 1e-3,
            max_iters: 200,
            kappa_c: step.kappa_c,
            kappa_r: step.kappa_r,
            max_halvings: step.max_halvings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, trials: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub array: ArrayConfig,
    pub users: UserConfig,
    pub link: LinkConfig,
    pub solver: SolverConfig,
    pub run: RunConfig,
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.into(),
        reason: reason.into(),
    }
}

fn positive(key: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {x}")))
    }
}

fn non_negative(key: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be non-negative and finite, got {x}")))
    }
}

fn finite(key: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be finite, got {x}")))
    }
}

fn at_least_one(key: &str, x: usize) -> Result<()> {
    if x >= 1 {
        Ok(())
    } else {
        Err(invalid(key, "must be at least 1"))
    }
}

impl SimConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // serde reports unknown or mistyped keys in the message; the span
            // is the most precise location available.
            let key = e
                .span()
                .and_then(|s| text.get(s))
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| "<document>".into());
            invalid(&key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.array;
        at_least_one("array.subarrays", a.subarrays)?;
        at_least_one("array.antennas_per_subarray", a.antennas_per_subarray)?;
        positive("array.carrier_ghz", a.carrier_ghz)?;
        non_negative("array.movable_span_lambda", a.movable_span_lambda)?;
        non_negative("array.rot_half_range_deg", a.rot_half_range_deg)?;
        if a.rot_half_range_deg > 180.0 {
            return Err(invalid("array.rot_half_range_deg", "must not exceed 180"));
        }
        if let Some(p) = a.region_pitch_lambda {
            positive("array.region_pitch_lambda", p)?;
        }
        let u = &self.users;
        at_least_one("users.count", u.count)?;
        at_least_one("users.paths", u.paths)?;
        positive("users.distance_min_m", u.distance_min_m)?;
        positive("users.distance_max_m", u.distance_max_m)?;
        if u.distance_max_m < u.distance_min_m {
            return Err(invalid("users.distance_max_m", "must not be below users.distance_min_m"));
        }
        let l = &self.link;
        finite("link.power_dbm", l.power_dbm)?;
        finite("link.noise_dbm", l.noise_dbm)?;
        finite("link.rho0_db", l.rho0_db)?;
        positive("link.path_loss_exponent", l.path_loss_exponent)?;
        let s = &self.solver;
        positive("solver.epsilon", s.epsilon)?;
        at_least_one("solver.max_iters", s.max_iters)?;
        positive("solver.kappa_c", s.kappa_c)?;
        positive("solver.kappa_r", s.kappa_r)?;
        at_least_one("run.trials", self.run.trials)?;
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / (self.array.carrier_ghz * 1e9)
    }

    pub fn power_watts(&self) -> f64 {
        dbm_to_watts(self.link.power_dbm)
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.link.noise_dbm)
    }

    /// Path-gain amplitude at 1 m.
    pub fn rho0(&self) -> f64 {
        db_to_amplitude(self.link.rho0_db)
    }

    /// Expected total channel power of a user at distance `d` meters.
    pub fn path_power(&self, d: f64) -> f64 {
        let decay = d.powf(-self.link.path_loss_exponent);
        match self.link.path_gain_law {
            PathGainLaw::SquaredAmplitude => (self.rho0() * decay).powi(2),
            PathGainLaw::Power => 10f64.powf(self.link.rho0_db / 10.0) * decay,
        }
    }

    pub fn span_m(&self) -> f64 {
        self.array.movable_span_lambda * self.wavelength()
    }

    pub fn zeta_rad(&self) -> f64 {
        self.array.rot_half_range_deg.to_radians()
    }

    pub fn pose_step(&self) -> PoseStepConfig {
        PoseStepConfig {
            kappa_c: self.solver.kappa_c,
            kappa_r: self.solver.kappa_r,
            max_halvings: self.solver.max_halvings,
        }
    }

    pub fn ao_config(&self) -> AoConfig {
        AoConfig {
            epsilon: self.solver.epsilon,
            max_iters: self.solver.max_iters,
            pose_step: self.pose_step(),
            ..AoConfig::default()
        }
    }
}

/// Generator for trial `trial` of a run seeded with `seed`; trials use
/// disjoint streams of the same key.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Random user environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub paths: PathSet,
    /// Distance of each user from the base station, meters.
    pub distances: Vec<f64>,
    pub wavelength: f64,
    /// Per-user noise power, watts.
    pub noise: Vec<f64>,
}

/// One departure direction: `sin(theta)` uniform on `[-1, 1]` (density
/// `cos(theta) / 2`), `phi` uniform on `[0, pi]`.
pub fn sample_angles(rng: &mut impl Rng) -> (f64, f64) {
    let theta = elevation_from_uniform(rng.random::<f64>());
    let phi = rng.random::<f64>() * std::f64::consts::PI;
    (theta, phi)
}

/// Inverse CDF of the elevation density `cos(theta) / 2`.
pub fn elevation_from_uniform(u: f64) -> f64 {
    (2.0 * u - 1.0).clamp(-1.0, 1.0).asin()
}

fn complex_normal(rng: &mut impl Rng, variance: f64) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn build_scenario(cfg: &SimConfig, rng: &mut impl Rng) -> Result<Scenario> {
    cfg.validate()?;
    let u = &cfg.users;
    let mut users = Vec::with_capacity(u.count);
    let mut distances = Vec::with_capacity(u.count);
    for _ in 0..u.count {
        let d = if u.distance_max_m > u.distance_min_m {
            rng.random_range(u.distance_min_m..=u.distance_max_m)
        } else {
            u.distance_min_m
        };
        let variance = cfg.path_power(d) / u.paths as f64;
        let mut theta = Vec::with_capacity(u.paths);
        let mut phi = Vec::with_capacity(u.paths);
        let mut p_r = Vec::with_capacity(u.paths);
        let mut diag = Vec::with_capacity(u.paths);
        for _ in 0..u.paths {
            let (t, f) = sample_angles(rng);
            let (e_t, e_p) = spherical_basis(t, f);
            let p: Vector3<f64> = match u.polarization {
                PolarizationPolicy::Theta => e_t,
                PolarizationPolicy::Random => {
                    let chi = rng.random::<f64>() * std::f64::consts::TAU;
                    e_t * chi.cos() + e_p * chi.sin()
                }
            };
            theta.push(t);
            phi.push(f);
            p_r.push(p);
            diag.push(complex_normal(rng, variance));
        }
        let prm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        users.push(UserPaths::new(theta, phi, prm, p_r)?);
        distances.push(d);
    }
    Ok(Scenario {
        paths: PathSet { users },
        distances,
        wavelength: cfg.wavelength(),
        noise: vec![cfg.noise_watts(); u.count],
    })
}

/// Center spacing of neighbouring movable regions: the span plus twice the
/// element radius plus half a wavelength, unless fixed by configuration.
pub fn region_pitch(cfg: &SimConfig, max_offset_radius: f64) -> f64 {
    let lambda = cfg.wavelength();
    match cfg.array.region_pitch_lambda {
        Some(p) => p * lambda,
        None => cfg.span_m() + 2.0 * max_offset_radius + 0.5 * lambda,
    }
}

/// `N` regions of size `D x 0 x D` in a row along x, centered on the
/// origin, each sub-array starting at its region center with zero angles.
pub fn default_geometry(cfg: &SimConfig) -> (ArrayGeometry, Vec<Pose>) {
    let lambda = cfg.wavelength();
    let offsets = grid_offsets(cfg.array.antennas_per_subarray, 0.5 * lambda);
    let r = offsets.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let pitch = region_pitch(cfg, r);
    let span = cfg.span_m();
    let n = cfg.array.subarrays;
    let regions = (0..n)
        .map(|i| {
            let x = (i as f64 - 0.5 * (n as f64 - 1.0)) * pitch;
            BoxRegion::new(
                Interval::new(x - 0.5 * span, x + 0.5 * span),
                Interval::point(0.0),
                Interval::symmetric(0.5 * span),
            )
        })
        .collect();
    let geom = ArrayGeometry::new(offsets, regions, RotationRange::symmetric(cfg.zeta_rad()), lambda);
    let poses = geom.initial_poses();
    (geom, poses)
}
