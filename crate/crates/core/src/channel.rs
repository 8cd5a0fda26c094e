//! Polarized multi-path channel between the movable sub-arrays and the users.
//!
//! Each transmit path `l` of user `k` leaves the array along the unit vector
//! `rho_{k,l}`. The channel entry of antenna `m` in sub-array `n` is
//!
//! ```text
//! h_k[n M + m] = sum_l sigma_hat_{k,l} * a_{k,l,n} * exp(-j 2 pi / lambda * t_{m,n} . rho_{k,l})
//! ```
//!
//! where `sigma_hat_{k,l} = sqrt(3/2) * sum_l' Sigma_k[l, l']` collapses the
//! receive paths and `a_{k,l,n} = e3^T R_n^T (rho rho^T - I) p^r_{k,l}` is the
//! pole-free product of the radiation-pattern and polarization-mismatch
//! gains (divided by `sqrt(3/2)`). Angles of departure, path responses and
//! receive polarizations are pose-independent inputs.
//!
//! Gradients are returned for the conjugated channel `h_k^H`, i.e. with
//! `exp(+j ...)` phases and conjugated path gains.

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Vector3};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{
    antenna_positions, rotation_matrix, rotation_matrix_derivative, ArrayGeometry, Axis, Pose,
};
use crate::C64;

/// Channel matrix, `MN x K`, column `k` is `h_k`.
pub type ChannelMatrix = DMatrix<C64>;

/// `sqrt(3/2)`: cosine-squared pattern with `kappa = 2`, `G_kappa = 3/2`.
pub const PATTERN_NORM: f64 = 1.224_744_871_391_589;

/// Threshold on `|cos theta_lcs|` below which the factored polarization gain
/// is declared singular.
pub const POLE_TOLERANCE: f64 = 1e-9;

/// Paths of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPaths {
    /// Elevation of each transmit path, radians in `[-pi/2, pi/2]`.
    pub theta: Vec<f64>,
    /// Azimuth of each transmit path, radians.
    pub phi: Vec<f64>,
    /// Path-response matrix, `L_t x L_r`.
    pub prm: DMatrix<C64>,
    /// Equivalent receive polarization per transmit path (unit, orthogonal
    /// to the propagation direction).
    pub p_r: Vec<Vector3<f64>>,
}

impl UserPaths {
    /// Validates dimensions and projects each receive polarization onto the
    /// plane orthogonal to its propagation direction before normalizing.
    pub fn new(
        theta: Vec<f64>,
        phi: Vec<f64>,
        prm: DMatrix<C64>,
        p_r: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let lt = theta.len();
        check_dim("path azimuths", lt, phi.len())?;
        check_dim("PRM rows", lt, prm.nrows())?;
        check_dim("receive polarizations", lt, p_r.len())?;
        for &t in &theta {
            if t.is_nan() || t.abs() > std::f64::consts::FRAC_PI_2 + 1e-15 {
                return Err(Error::InvalidConfig {
                    key: "theta".into(),
                    reason: format!("elevation {t} outside [-pi/2, pi/2]"),
                });
            }
        }
        let p_r = p_r
            .into_iter()
            .zip(theta.iter().zip(&phi))
            .map(|(p, (&t, &f))| {
                let rho = propagation_dir(t, f);
                let q = p - rho * rho.dot(&p);
                let norm = q.norm();
                if norm > 0.0 {
                    q / norm
                } else {
                    spherical_basis(t, f).0
                }
            })
            .collect();
        Ok(Self {
            theta,
            phi,
            prm,
            p_r,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.theta.len()
    }

    pub fn rho(&self, l: usize) -> Vector3<f64> {
        propagation_dir(self.theta[l], self.phi[l])
    }
}

/// Paths of all users.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub users: Vec<UserPaths>,
}

impl PathSet {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }
}

/// `sigma_hat_{k,l} = sqrt(3/2) * sum_l' Sigma_k[l, l']` for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedPathGains {
    pub per_user: Vec<Vec<C64>>,
}

impl CollapsedPathGains {
    pub fn from_paths(paths: &PathSet) -> Self {
        let per_user = paths
            .users
            .iter()
            .map(|u| {
                u.prm
                    .row_iter()
                    .map(|row| row.iter().sum::<C64>() * PATTERN_NORM)
                    .collect()
            })
            .collect();
        Self { per_user }
    }
}

/// Unit vector along `(theta, phi)`.
pub fn propagation_dir(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(ct * cp, ct * sp, st)
}

/// Direction angles seen from a sub-array's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcsAngles {
    pub theta: f64,
    /// In `[0, 2 pi)`; zero when `at_pole`.
    pub phi: f64,
    /// The direction coincides with the local `+-z` axis and the azimuth is
    /// undefined.
    pub at_pole: bool,
}

pub fn lcs_angles(r: &Matrix3<f64>, rho: &Vector3<f64>) -> LcsAngles {
    let v = r.transpose() * rho;
    let theta = v[2].clamp(-1.0, 1.0).asin();
    let planar = v[0].hypot(v[1]);
    if planar < 1e-12 {
        return LcsAngles {
            theta,
            phi: 0.0,
            at_pole: true,
        };
    }
    let mut phi = v[1].atan2(v[0]);
    if phi < 0.0 {
        phi += std::f64::consts::TAU;
    }
    if phi >= std::f64::consts::TAU {
        phi = 0.0;
    }
    LcsAngles {
        theta,
        phi,
        at_pole: false,
    }
}

/// Amplitude of the cosine-squared radiation pattern, `sqrt(3/2) |cos theta|`.
pub fn pattern_gain(theta_lcs: f64) -> f64 {
    PATTERN_NORM * theta_lcs.cos().abs()
}

/// `(e_theta, e_phi)` for direction angles `(theta, phi)`:
/// `e_theta = [sin t cos p, sin t sin p, -cos t]`, `e_phi = [-sin p, cos p, 0]`.
pub fn spherical_basis(theta: f64, phi: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (Vector3::new(st * cp, st * sp, -ct), Vector3::new(-sp, cp, 0.0))
}

/// `e3^T R^T (rho rho^T - I) p_r`, the pattern-and-polarization product
/// without the `sqrt(3/2)` factor.
#[inline]
fn polarized_numerator(r: &Matrix3<f64>, rho: &Vector3<f64>, p_r: &Vector3<f64>) -> f64 {
    let q = rho * rho.dot(p_r) - p_r;
    r.column(2).dot(&q)
}

/// Polarization-mismatch gain of a vertically polarized element.
///
/// Fails with [`Error::PoleSingularity`] when the direction lies on the local
/// z axis; use [`combined_gain`] there.
pub fn polarization_gain(r: &Matrix3<f64>, rho: &Vector3<f64>, p_r: &Vector3<f64>) -> Result<f64> {
    let z = r.column(2).dot(rho);
    let cos_theta = (1.0 - z * z).max(0.0).sqrt();
    if cos_theta < POLE_TOLERANCE {
        return Err(Error::PoleSingularity { cos_theta });
    }
    Ok(polarized_numerator(r, rho, p_r) / cos_theta)
}

/// Product of pattern and polarization gains, continuous everywhere.
pub fn combined_gain(r: &Matrix3<f64>, rho: &Vector3<f64>, p_r: &Vector3<f64>) -> f64 {
    PATTERN_NORM * polarized_numerator(r, rho, p_r)
}

/// Per-path amplitude law applied on top of the collapsed path gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainModel {
    /// Directional pattern and polarization mismatch.
    #[default]
    Polarized,
    /// Directional pattern only, polarization gain forced to one.
    Unpolarized,
}

impl GainModel {
    /// Amplitude factor `a` given the local z axis `z_axis = R e3`.
    /// `q = (rho rho^T - I) p_r`.
    #[inline]
    fn amplitude(self, z_axis: &Vector3<f64>, rho: &Vector3<f64>, q: &Vector3<f64>) -> f64 {
        match self {
            GainModel::Polarized => z_axis.dot(q),
            GainModel::Unpolarized => {
                let z = z_axis.dot(rho);
                (1.0 - z * z).max(0.0).sqrt()
            }
        }
    }

    /// Derivative of [`Self::amplitude`] along `dz_axis = dR/dGamma e3`.
    #[inline]
    fn amplitude_derivative(
        self,
        z_axis: &Vector3<f64>,
        dz_axis: &Vector3<f64>,
        rho: &Vector3<f64>,
        q: &Vector3<f64>,
    ) -> f64 {
        match self {
            GainModel::Polarized => dz_axis.dot(q),
            GainModel::Unpolarized => {
                let z = z_axis.dot(rho);
                let c = (1.0 - z * z).max(0.0).sqrt();
                if c < 1e-12 {
                    0.0
                } else {
                    -z * dz_axis.dot(rho) / c
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct PathCache {
    rho: Vector3<f64>,
    /// `(rho rho^T - I) p_r`
    q: Vector3<f64>,
    sigma_hat: C64,
}

/// Channel synthesizer with pose-independent quantities precomputed.
#[derive(Debug, Clone)]
pub struct ChannelSynth {
    model: GainModel,
    gains: CollapsedPathGains,
    paths: Vec<Vec<PathCache>>,
}

impl ChannelSynth {
    pub fn new(paths: &PathSet, model: GainModel) -> Self {
        let gains = CollapsedPathGains::from_paths(paths);
        let cache = paths
            .users
            .iter()
            .zip(&gains.per_user)
            .map(|(u, g)| {
                (0..u.n_paths())
                    .map(|l| {
                        let rho = u.rho(l);
                        let p = u.p_r[l];
                        PathCache {
                            rho,
                            q: rho * rho.dot(&p) - p,
                            sigma_hat: g[l],
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            model,
            gains,
            paths: cache,
        }
    }

    pub fn model(&self) -> GainModel {
        self.model
    }

    pub fn n_users(&self) -> usize {
        self.paths.len()
    }

    pub fn collapsed_gains(&self) -> &CollapsedPathGains {
        &self.gains
    }

    fn check(&self, geom: &ArrayGeometry, poses: &[Pose]) -> Result<()> {
        check_dim("poses", geom.n_subarrays(), poses.len())
    }

    /// Full channel matrix `MN x K`.
    pub fn channel(&self, geom: &ArrayGeometry, poses: &[Pose]) -> Result<ChannelMatrix> {
        self.check(geom, poses)?;
        let mut h = ChannelMatrix::zeros(geom.n_antennas(), self.n_users());
        for (n, pose) in poses.iter().enumerate() {
            self.write_block(geom, pose, n, &mut h);
        }
        Ok(h)
    }

    /// Overwrites the rows of sub-array `n` in `h` for a new pose of that
    /// sub-array. Other rows are untouched.
    pub fn write_block(&self, geom: &ArrayGeometry, pose: &Pose, n: usize, h: &mut ChannelMatrix) {
        let m_per = geom.antennas_per_subarray();
        let k0 = std::f64::consts::TAU / geom.wavelength;
        let r = rotation_matrix(&pose.angles);
        let z_axis: Vector3<f64> = r.column(2).into_owned();
        for (k, user) in self.paths.iter().enumerate() {
            // Fixed path order inside each entry keeps results independent of
            // any outer parallelism.
            let amps: Vec<C64> = user
                .iter()
                .map(|p| p.sigma_hat * self.model.amplitude(&z_axis, &p.rho, &p.q))
                .collect();
            for (m, delta) in geom.offsets.column_iter().enumerate() {
                let t = r * delta + pose.center;
                let mut acc = C64::new(0.0, 0.0);
                for (p, a) in user.iter().zip(&amps) {
                    acc += a * C64::cis(-k0 * t.dot(&p.rho));
                }
                h[(n * m_per + m, k)] = acc;
            }
        }
    }

    /// Derivatives of the conjugated block entries of sub-array `n` for
    /// user `k`: returns `(d/dc, d/d(alpha, beta, gamma))`, each `3 x M`
    /// (row = coordinate, column = element).
    pub fn block_gradients(
        &self,
        geom: &ArrayGeometry,
        pose: &Pose,
        k: usize,
    ) -> (Matrix3xX<C64>, Matrix3xX<C64>) {
        let m_per = geom.antennas_per_subarray();
        let k0 = std::f64::consts::TAU / geom.wavelength;
        let r = rotation_matrix(&pose.angles);
        let z_axis: Vector3<f64> = r.column(2).into_owned();
        let dr: [Matrix3<f64>; 3] = Axis::ALL.map(|ax| rotation_matrix_derivative(&pose.angles, ax));
        let dz: [Vector3<f64>; 3] = dr.map(|d| d.column(2).into_owned());
        let j = C64::new(0.0, 1.0);

        let mut gc = Matrix3xX::<C64>::zeros(m_per);
        let mut gr = Matrix3xX::<C64>::zeros(m_per);
        for p in &self.paths[k] {
            let a = self.model.amplitude(&z_axis, &p.rho, &p.q);
            let da: [f64; 3] =
                std::array::from_fn(|i| self.model.amplitude_derivative(&z_axis, &dz[i], &p.rho, &p.q));
            let s = p.sigma_hat.conj();
            // Rows of dR^T rho: d(t . rho)/dGamma = (dR delta) . rho = delta . (dR^T rho)
            let drt_rho: [Vector3<f64>; 3] = std::array::from_fn(|i| dr[i].transpose() * p.rho);
            for (m, delta) in geom.offsets.column_iter().enumerate() {
                let t = r * delta + pose.center;
                let phase = C64::cis(k0 * t.dot(&p.rho));
                let sp = s * phase;
                let coef = j * k0 * a * sp;
                for i in 0..3 {
                    gc[(i, m)] += coef * p.rho[i];
                    let dphase = delta.dot(&drt_rho[i]);
                    gr[(i, m)] += coef * dphase + sp * da[i];
                }
            }
        }
        (gc, gr)
    }

    /// `d h_k^H / d c_n`, `3 x MN`, zero outside the block of sub-array `n`.
    pub fn grad_center(
        &self,
        geom: &ArrayGeometry,
        poses: &[Pose],
        k: usize,
        n: usize,
    ) -> Result<Matrix3xX<C64>> {
        self.embed_block(geom, poses, k, n, |g| g.0)
    }

    /// `d h_k^H / d Gamma_n` for `Gamma = alpha, beta, gamma` (rows),
    /// `3 x MN`, zero outside the block of sub-array `n`.
    pub fn grad_angles(
        &self,
        geom: &ArrayGeometry,
        poses: &[Pose],
        k: usize,
        n: usize,
    ) -> Result<Matrix3xX<C64>> {
        self.embed_block(geom, poses, k, n, |g| g.1)
    }

    fn embed_block(
        &self,
        geom: &ArrayGeometry,
        poses: &[Pose],
        k: usize,
        n: usize,
        pick: impl FnOnce((Matrix3xX<C64>, Matrix3xX<C64>)) -> Matrix3xX<C64>,
    ) -> Result<Matrix3xX<C64>> {
        self.check(geom, poses)?;
        if k >= self.n_users() {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: k,
                len: self.n_users(),
            });
        }
        if n >= poses.len() {
            return Err(Error::IndexOutOfRange {
                what: "sub-array",
                index: n,
                len: poses.len(),
            });
        }
        let m_per = geom.antennas_per_subarray();
        let block = pick(self.block_gradients(geom, &poses[n], k));
        let mut out = Matrix3xX::<C64>::zeros(geom.n_antennas());
        out.columns_mut(n * m_per, m_per).copy_from(&block);
        Ok(out)
    }
}

/// Channel via the factored pattern and polarization gains and the explicit
/// field-response vectors. Fails at a local pole.
pub fn channel_general(geom: &ArrayGeometry, poses: &[Pose], paths: &PathSet) -> Result<ChannelMatrix> {
    let t = antenna_positions(geom, poses)?;
    let m_per = geom.antennas_per_subarray();
    let k0 = std::f64::consts::TAU / geom.wavelength;
    let rots: Vec<Matrix3<f64>> = poses.iter().map(|p| rotation_matrix(&p.angles)).collect();
    let mut h = ChannelMatrix::zeros(geom.n_antennas(), paths.n_users());
    for (k, user) in paths.users.iter().enumerate() {
        // Sigma_k 1_{L_r}
        let s: Vec<C64> = user.prm.row_iter().map(|row| row.iter().sum()).collect();
        let rhos: Vec<Vector3<f64>> = (0..user.n_paths()).map(|l| user.rho(l)).collect();
        for (n, r) in rots.iter().enumerate() {
            let mut gain = Vec::with_capacity(user.n_paths());
            for (l, rho) in rhos.iter().enumerate() {
                let lcs = lcs_angles(r, rho);
                gain.push(pattern_gain(lcs.theta) * polarization_gain(r, rho, &user.p_r[l])?);
            }
            for m in 0..m_per {
                let col = n * m_per + m;
                let pos = t.column(col);
                let mut acc = C64::new(0.0, 0.0);
                for (l, rho) in rhos.iter().enumerate() {
                    // conj of the field response exp(+j k0 t . rho)
                    let g = C64::cis(k0 * pos.dot(rho)).conj();
                    acc += gain[l] * g * s[l];
                }
                h[(col, k)] = acc;
            }
        }
    }
    Ok(h)
}

/// Channel via the collapsed, pole-free closed form.
pub fn channel_fast(geom: &ArrayGeometry, poses: &[Pose], paths: &PathSet) -> Result<ChannelMatrix> {
    ChannelSynth::new(paths, GainModel::Polarized).channel(geom, poses)
}

/// See [`ChannelSynth::grad_center`].
pub fn channel_grad_center(
    geom: &ArrayGeometry,
    poses: &[Pose],
    paths: &PathSet,
    user: usize,
    subarray: usize,
) -> Result<Matrix3xX<C64>> {
    ChannelSynth::new(paths, GainModel::Polarized).grad_center(geom, poses, user, subarray)
}

/// See [`ChannelSynth::grad_angles`].
pub fn channel_grad_angles(
    geom: &ArrayGeometry,
    poses: &[Pose],
    paths: &PathSet,
    user: usize,
    subarray: usize,
) -> Result<Matrix3xX<C64>> {
    ChannelSynth::new(paths, GainModel::Polarized).grad_angles(geom, poses, user, subarray)
}
