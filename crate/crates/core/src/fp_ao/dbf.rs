//! Closed-form digital beamformer under a Frobenius power budget.
//!
//! For effective channels `psi_k = W_A^H h_k`, weights `mu_k` and
//! `omega_k = (1 + u_k) v_k psi_k`, maximizes
//!
//! ```text
//! sum_k ( -mu_k sum_k' |psi_k^H w_k'|^2 + 2 Re{omega_k^H w_k} )   s.t.  ||W||_F^2 <= budget
//! ```
//!
//! The maximizer is `w_k = (Psi + lambda I)^-1 omega_k` with
//! `Psi = sum_k mu_k psi_k psi_k^H`. One Hermitian eigendecomposition of `Psi`
//! turns `||W(lambda)||_F^2` into a scalar rational function, which makes the
//! bisection on `lambda` cheap and exact.

use nalgebra::{DMatrix, SymmetricEigen};

use super::FpState;
use crate::channel::ChannelMatrix;
use crate::error::{check_dim, Error, Result};
use crate::manifold::CirclePoint;
use crate::C64;

/// Eigenvalues below `EIG_FLOOR * max eigenvalue` are treated as zero when
/// `lambda = 0` (pseudo-inverse on the null space of `Psi`).
const EIG_FLOOR: f64 = 1e-12;
const MAX_BISECTIONS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DbfSolution {
    /// `N x K` digital beamformer.
    pub w: DMatrix<C64>,
    /// Lagrange multiplier of the power constraint.
    pub lambda: f64,
}

/// Objective of the digital-beamformer subproblem (to be maximized).
pub fn dbf_objective(psi: &DMatrix<C64>, state: &FpState, w: &DMatrix<C64>) -> f64 {
    let g = psi.adjoint() * w;
    (0..psi.ncols())
        .map(|k| {
            let mu = (1.0 + state.u[k]) * state.v[k].norm_sqr();
            let quad: f64 = g.row(k).iter().map(|z| z.norm_sqr()).sum();
            let lin = (state.v[k].conj() * (1.0 + state.u[k]) * g[(k, k)]).re;
            -mu * quad + 2.0 * lin
        })
        .sum()
}

struct Spectral {
    vectors: DMatrix<C64>,
    values: Vec<f64>,
    /// `U^H Omega`
    coeffs: DMatrix<C64>,
    /// Row energies of `coeffs`.
    energy: Vec<f64>,
    floor: f64,
}

impl Spectral {
    fn power(&self, lambda: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.energy)
            .map(|(&s, &e)| {
                let d = s + lambda;
                if lambda == 0.0 && s <= self.floor {
                    0.0
                } else {
                    e / (d * d)
                }
            })
            .sum()
    }

    fn beamformer(&self, lambda: f64) -> DMatrix<C64> {
        let mut scaled = self.coeffs.clone();
        for (i, &s) in self.values.iter().enumerate() {
            let inv = if lambda == 0.0 && s <= self.floor {
                0.0
            } else {
                1.0 / (s + lambda)
            };
            scaled.row_mut(i).scale_mut(inv);
        }
        &self.vectors * scaled
    }
}

/// Solves the power-constrained subproblem for effective channels `psi`
/// (`d x K`, column `k` is `psi_k`).
pub fn solve_dbf(psi: &DMatrix<C64>, state: &FpState, budget: f64) -> Result<DbfSolution> {
    let k_users = psi.ncols();
    check_dim("FP state u", k_users, state.u.len())?;
    check_dim("FP state v", k_users, state.v.len())?;
    if budget.is_nan() || budget <= 0.0 {
        return Err(Error::InvalidConfig {
            key: "power".into(),
            reason: format!("budget must be positive, got {budget}"),
        });
    }
    let d = psi.nrows();
    let mu = state.mu();
    let mut gram = DMatrix::<C64>::zeros(d, d);
    let mut omega = DMatrix::<C64>::zeros(d, k_users);
    for k in 0..k_users {
        let col = psi.column(k);
        gram.ger(C64::new(mu[k], 0.0), &col, &col.conjugate(), C64::new(1.0, 0.0));
        omega.set_column(k, &(col * (state.v[k] * (1.0 + state.u[k]))));
    }
    let gram = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(gram);
    let values: Vec<f64> = eig.eigenvalues.iter().map(|&s| s.max(0.0)).collect();
    let s_max = values.iter().copied().fold(0.0, f64::max);
    let coeffs = eig.eigenvectors.adjoint() * &omega;
    let energy = coeffs
        .row_iter()
        .map(|r| r.iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let spec = Spectral {
        vectors: eig.eigenvectors,
        values,
        coeffs,
        energy,
        floor: EIG_FLOOR * s_max,
    };

    if spec.power(0.0) <= budget {
        return Ok(DbfSolution {
            w: spec.beamformer(0.0),
            lambda: 0.0,
        });
    }

    // Bracket [lo, hi = 2 lo] with power(lo) > budget >= power(hi), starting
    // at 1 and doubling or halving as needed; power is strictly decreasing.
    let (mut lo, mut hi) = if spec.power(1.0) > budget {
        let mut hi = 2.0;
        while spec.power(hi) > budget {
            hi *= 2.0;
        }
        (0.5 * hi, hi)
    } else {
        let mut lo = 0.5;
        while spec.power(lo) <= budget {
            lo *= 0.5;
        }
        (lo, 2.0 * lo)
    };
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if spec.power(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DbfSolution {
        w: spec.beamformer(hi),
        lambda: hi,
    })
}

/// Digital beamformer of a sub-connected array: effective channels through
/// `blkdiag(b_n)` and per-RF-chain budget `P / M`.
pub fn dbf_update(
    h: &ChannelMatrix,
    b: &CirclePoint,
    n_chains: usize,
    state: &FpState,
    power: f64,
) -> Result<DbfSolution> {
    check_dim("analog beamformer length", h.nrows(), b.len())?;
    if n_chains == 0 || !b.len().is_multiple_of(n_chains) {
        return Err(Error::DimensionMismatch {
            what: "antennas (multiple of RF chains)",
            expected: n_chains,
            got: b.len(),
        });
    }
    let m = b.len() / n_chains;
    let analog = super::AnalogBeamformer::SubConnected {
        b: b.clone(),
        per_chain: m,
    };
    solve_dbf(&analog.adjoint_apply(h), state, power / m as f64)
}
