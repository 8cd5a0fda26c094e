//! Fractional-programming surrogate of the sum rate and its block updates.
//!
//! With `omega_k = h_k^H W_A w_k` and `nu_k = sigma_k^2 + sum_k' |h_k^H W_A w_k'|^2`,
//! the surrogate is
//!
//! ```text
//! L = sum_k (1 + u_k)(2 Re{conj(v_k) omega_k} - |v_k|^2 nu_k) + ln(1 + u_k) - u_k
//! ```
//!
//! which equals `sum_k ln(1 + SINR_k)` once `u, v` take their closed-form
//! optimal values.

mod ao;
mod dbf;

pub use ao::{
    ao_run, ao_solve, default_start, initial_beamformers, AoConfig, AoProblem, RunReport, SubproblemTimings,
    Termination,
};
pub use dbf::{dbf_objective, dbf_update, solve_dbf, DbfSolution};

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelMatrix;
use crate::error::{check_dim, Error, Result};
use crate::manifold::{AbfQuadratic, CirclePoint};
use crate::C64;

/// Auxiliary variables of the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub u: Vec<f64>,
    pub v: Vec<C64>,
}

impl FpState {
    /// `mu_k = (1 + u_k) |v_k|^2`
    pub fn mu(&self) -> Vec<f64> {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (1.0 + u) * v.norm_sqr())
            .collect()
    }
}

/// Analog stage of the precoder.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalogBeamformer {
    /// Block-diagonal `blkdiag(b_1, .., b_N)` with `M` phase shifters per RF chain.
    SubConnected { b: CirclePoint, per_chain: usize },
    /// One RF chain per antenna.
    Identity { n_antennas: usize },
    /// Fully-connected phase-shifter network, `MN x N_RF`, unit-modulus entries.
    Dense(DMatrix<C64>),
}

impl AnalogBeamformer {
    pub fn n_antennas(&self) -> usize {
        match self {
            Self::SubConnected { b, .. } => b.len(),
            Self::Identity { n_antennas } => *n_antennas,
            Self::Dense(a) => a.nrows(),
        }
    }

    pub fn n_chains(&self) -> usize {
        match self {
            Self::SubConnected { b, per_chain } => b.len() / per_chain,
            Self::Identity { n_antennas } => *n_antennas,
            Self::Dense(a) => a.ncols(),
        }
    }

    /// `W_A^H X`
    pub fn adjoint_apply(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        match self {
            Self::SubConnected { b, per_chain } => {
                let m = *per_chain;
                let n = b.len() / m;
                let b = b.as_vector();
                DMatrix::from_fn(n, x.ncols(), |i, k| {
                    (0..m).map(|j| b[i * m + j].conj() * x[(i * m + j, k)]).sum()
                })
            }
            Self::Identity { .. } => x.clone(),
            Self::Dense(a) => a.adjoint() * x,
        }
    }

    /// `W_A W_D`
    pub fn apply(&self, w_d: &DMatrix<C64>) -> DMatrix<C64> {
        match self {
            Self::SubConnected { b, per_chain } => expand_block_diagonal(b, *per_chain, w_d),
            Self::Identity { .. } => w_d.clone(),
            Self::Dense(a) => a * w_d,
        }
    }

    /// Ratio `||W_A W_D||_F^2 / ||W_D||_F^2` when it is structural (sub-connected
    /// and identity); `None` for dense networks.
    pub fn power_scale(&self) -> Option<f64> {
        match self {
            Self::SubConnected { per_chain, .. } => Some(*per_chain as f64),
            Self::Identity { .. } => Some(1.0),
            Self::Dense(_) => None,
        }
    }
}

/// Digital and analog precoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformers {
    /// `N_RF x K`
    pub digital: DMatrix<C64>,
    pub analog: AnalogBeamformer,
}

impl Beamformers {
    /// Effective `MN x K` precoder.
    pub fn effective(&self) -> DMatrix<C64> {
        self.analog.apply(&self.digital)
    }

    pub fn transmit_power(&self) -> f64 {
        self.effective().norm_squared()
    }

    pub fn n_users(&self) -> usize {
        self.digital.ncols()
    }
}

fn expand_block_diagonal(b: &CirclePoint, m: usize, w_d: &DMatrix<C64>) -> DMatrix<C64> {
    let b = b.as_vector();
    DMatrix::from_fn(b.len(), w_d.ncols(), |row, k| b[row] * w_d[(row / m, k)])
}

/// `blkdiag(b_1, .., b_N) W_D` without forming the block-diagonal matrix.
/// The block length `M` is `len(b) / rows(W_D)`.
pub fn apply_abf(b: &CirclePoint, w_d: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let n = w_d.nrows();
    if n == 0 || !b.len().is_multiple_of(n) {
        return Err(Error::DimensionMismatch {
            what: "analog beamformer length (multiple of RF chains)",
            expected: n,
            got: b.len(),
        });
    }
    Ok(expand_block_diagonal(b, b.len() / n, w_d))
}

/// `G[(k, k')] = h_k^H f_k'`
pub(crate) fn cross_gains(h: &ChannelMatrix, f: &DMatrix<C64>) -> DMatrix<C64> {
    h.adjoint() * f
}

fn check_noise(h: &ChannelMatrix, noise: &[f64]) -> Result<()> {
    check_dim("noise powers", h.ncols(), noise.len())
}

/// Per-user SINR for an effective precoder.
pub fn sinr(h: &ChannelMatrix, f: &DMatrix<C64>, noise: &[f64]) -> Vec<f64> {
    let g = cross_gains(h, f);
    (0..h.ncols())
        .map(|k| {
            let desired = g[(k, k)].norm_sqr();
            let total: f64 = g.row(k).iter().map(|z| z.norm_sqr()).sum();
            desired / (total - desired + noise[k])
        })
        .collect()
}

/// Sum rate in bits/s/Hz for an effective `MN x K` precoder.
pub fn sum_rate_precoded(h: &ChannelMatrix, f: &DMatrix<C64>, noise: &[f64]) -> Result<f64> {
    check_noise(h, noise)?;
    check_dim("precoder rows", h.nrows(), f.nrows())?;
    check_dim("precoder columns", h.ncols(), f.ncols())?;
    Ok(sinr(h, f, noise).iter().map(|s| s.ln_1p()).sum::<f64>() / std::f64::consts::LN_2)
}

/// `sum_k log2(1 + SINR_k)`
pub fn sum_rate(h: &ChannelMatrix, bf: &Beamformers, noise: &[f64]) -> Result<f64> {
    sum_rate_precoded(h, &bf.effective(), noise)
}

pub(crate) fn update_uv_precoded(h: &ChannelMatrix, f: &DMatrix<C64>, noise: &[f64]) -> FpState {
    let g = cross_gains(h, f);
    let mut u = Vec::with_capacity(h.ncols());
    let mut v = Vec::with_capacity(h.ncols());
    for k in 0..h.ncols() {
        let desired = g[(k, k)];
        let total: f64 = g.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>() + noise[k];
        u.push(desired.norm_sqr() / (total - desired.norm_sqr()));
        v.push(desired / total);
    }
    FpState { u, v }
}

/// Closed-form optimal auxiliary variables for fixed beamformers and poses.
pub fn update_uv(h: &ChannelMatrix, bf: &Beamformers, noise: &[f64]) -> Result<FpState> {
    check_noise(h, noise)?;
    Ok(update_uv_precoded(h, &bf.effective(), noise))
}

pub(crate) fn fp_objective_precoded(
    h: &ChannelMatrix,
    f: &DMatrix<C64>,
    state: &FpState,
    noise: &[f64],
) -> f64 {
    let g = cross_gains(h, f);
    (0..h.ncols())
        .map(|k| {
            let (u, v) = (state.u[k], state.v[k]);
            let omega = g[(k, k)];
            let nu: f64 = g.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>() + noise[k];
            (1.0 + u) * (2.0 * (v.conj() * omega).re - v.norm_sqr() * nu) + u.ln_1p() - u
        })
        .sum()
}

/// Surrogate value in nats, including the `u, v`-only constant terms.
pub fn fp_objective(h: &ChannelMatrix, bf: &Beamformers, state: &FpState, noise: &[f64]) -> Result<f64> {
    check_noise(h, noise)?;
    check_dim("FP state u", h.ncols(), state.u.len())?;
    check_dim("FP state v", h.ncols(), state.v.len())?;
    Ok(fp_objective_precoded(h, &bf.effective(), state, noise))
}

/// Analog-beamformer subproblem for a sub-connected structure:
/// `h_bar_{k,k'}[nM+m] = conj(W_D[n,k']) h_k[nM+m]`, `omega_bar_k = (1+u_k) v_k h_bar_{k,k}`.
pub fn abf_quadratic(h: &ChannelMatrix, w_d: &DMatrix<C64>, state: &FpState) -> Result<AbfQuadratic> {
    let n = w_d.nrows();
    let k_users = h.ncols();
    check_dim("digital beamformer users", k_users, w_d.ncols())?;
    if n == 0 || !h.nrows().is_multiple_of(n) {
        return Err(Error::DimensionMismatch {
            what: "channel rows (multiple of RF chains)",
            expected: n,
            got: h.nrows(),
        });
    }
    let m = h.nrows() / n;
    let h_bar: Vec<Vec<DVector<C64>>> = (0..k_users)
        .map(|k| {
            (0..k_users)
                .map(|kp| DVector::from_fn(h.nrows(), |row, _| w_d[(row / m, kp)].conj() * h[(row, k)]))
                .collect()
        })
        .collect();
    let omega_bar = (0..k_users)
        .map(|k| &h_bar[k][k] * (state.v[k] * (1.0 + state.u[k])))
        .collect();
    Ok(AbfQuadratic {
        mu: state.mu(),
        h_bar,
        omega_bar,
    })
}
