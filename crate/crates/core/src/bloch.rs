//! Closed-form two-level propagator for driven x-rotations under T1/T2 decay.
//!
//! The state is tracked in the yz-plane of the Bloch sphere with the ground
//! state at z = −1. Under a constant Rabi rate Ω about x the shifted
//! coordinates (y − y∞, z − z∞) evolve by a damped 2×2 rotation; this is the
//! forward model used to fit rotation errors from N-pulse data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlochError {
    #[error("T2 = {t2} s exceeds twice T1 = {t1} s")]
    T2TooLong { t1: f64, t2: f64 },
    #[error("non-positive coherence time")]
    NonPositiveTime,
    #[error("pulse duration must be positive")]
    NonPositiveDuration,
    #[error("unsupported sequence: {0}")]
    Sequence(String),
}

/// Energy relaxation and pure dephasing rates (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRates<T> {
    pub gamma1: T,
    pub gamma_phi: T,
}

impl<T: Real> DecayRates<T> {
    /// Γ1 = 1/T1 and Γφ = 1/T2 − 1/(2·T1).
    pub fn from_times(t1: T, t2: T) -> Result<Self, BlochError> {
        if !(t1 > T::zero()) || !(t2 > T::zero()) {
            return Err(BlochError::NonPositiveTime);
        }
        let gamma1 = T::one() / t1;
        let gamma_phi = T::one() / t2 - gamma1 / T::lit(2.0);
        // Allow rounding slack when T2 = 2·T1 exactly.
        if gamma_phi < -T::lit(1e-12) * gamma1 {
            return Err(BlochError::T2TooLong { t1: t1.as_f64(), t2: t2.as_f64() });
        }
        Ok(Self { gamma1, gamma_phi: gamma_phi.max(T::zero()) })
    }

    pub fn none() -> Self {
        Self { gamma1: T::zero(), gamma_phi: T::zero() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochYZ<T> {
    pub y: T,
    pub z: T,
}

impl<T: Real> BlochYZ<T> {
    pub fn ground() -> Self {
        Self { y: T::zero(), z: -T::one() }
    }

    pub fn length_sq(&self) -> T {
        self.y * self.y + self.z * self.z
    }
}

/// Constant-rate rotation lasting `tau`, parameterized by its fraction of a π
/// rotation: Ω = alpha_fraction·π/τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationPulseModel<T> {
    pub alpha_fraction: T,
    pub tau: T,
}

impl<T: Real> RotationPulseModel<T> {
    pub fn new(alpha_fraction: T, tau: T) -> Result<Self, BlochError> {
        if !(tau > T::zero()) {
            return Err(BlochError::NonPositiveDuration);
        }
        Ok(Self { alpha_fraction, tau })
    }

    pub fn rabi_rate(&self) -> T {
        self.alpha_fraction * T::PI() / self.tau
    }
}

/// cos(νt) and sin(νt)/ν as even functions of ν, given ν² (possibly negative).
fn even_trig<T: Real>(nu_sq: T, t: T) -> (T, T) {
    if nu_sq > T::zero() {
        let nu = nu_sq.sqrt();
        ((nu * t).cos(), (nu * t).sin() / nu)
    } else if nu_sq < T::zero() {
        let mu = (-nu_sq).sqrt();
        ((mu * t).cosh(), (mu * t).sinh() / mu)
    } else {
        (T::one(), t)
    }
}

/// Fixed point of the damped rotation for Rabi rate `omega`.
pub fn steady_state<T: Real>(omega: T, rates: &DecayRates<T>) -> BlochYZ<T> {
    let g1 = rates.gamma1;
    let g = g1 * (g1 + T::lit(2.0) * rates.gamma_phi);
    let d = g + T::lit(2.0) * omega * omega;
    if d == T::zero() {
        return BlochYZ { y: T::zero(), z: T::zero() };
    }
    BlochYZ {
        y: -T::lit(2.0) * omega * g1 / d,
        z: -g / d,
    }
}

/// Evolves the yz Bloch components for time `t` at Rabi rate `omega`.
pub fn propagate_for<T: Real>(state: BlochYZ<T>, omega: T, t: T, rates: &DecayRates<T>) -> BlochYZ<T> {
    let g1 = rates.gamma1;
    let gp = rates.gamma_phi;
    let two = T::lit(2.0);
    let ss = steady_state(omega, rates);
    let y0 = state.y - ss.y;
    let z0 = state.z - ss.z;
    let kappa = (g1 - two * gp) / T::lit(4.0);
    let nu_sq = omega * omega - kappa * kappa;
    let (c, s) = even_trig(nu_sq, t);
    let damp = (-(T::lit(3.0) * g1 + two * gp) * t / T::lit(4.0)).exp();
    let y = damp * ((c + s * kappa) * y0 + s * omega * z0);
    let z = damp * (-s * omega * y0 + (c - s * kappa) * z0);
    BlochYZ { y: y + ss.y, z: z + ss.z }
}

/// Applies one constant-rate pulse.
pub fn propagate<T: Real>(state: BlochYZ<T>, pulse: &RotationPulseModel<T>, rates: &DecayRates<T>) -> BlochYZ<T> {
    propagate_for(state, pulse.rabi_rate(), pulse.tau, rates)
}

/// p_e = (1 + z)/2.
pub fn excited_population<T: Real>(state: &BlochYZ<T>) -> T {
    (T::one() + state.z) / T::lit(2.0)
}
