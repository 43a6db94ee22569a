//! Measurement sources: everything downstream submits gate lists and gets
//! shot counts back.

use nalgebra::Complex;
use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

use crate::driveline::{DriveLineError, DriveLineTransfer};
use crate::qubit::{pulse_unitary, z_unitary, U2};
use crate::qutrit::{GateSpec, QutritSimulator, SimError};
use crate::readout::{sample_readout, ConfusionMatrix3, ReadoutError, ShotRecord};
use crate::scalar::{deg_to_rad, Real};
use crate::seed::StreamRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("sequence of {len} gates exceeds backend limit {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("{shots} shots exceed backend limit {max}")]
    TooManyShots { shots: u64, max: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error("drive line: {0}")]
    Line(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub max_sequence_length: usize,
    pub max_shots: u64,
}

impl Default for Capabilities {
    fn default() -> Self {
        Self { max_sequence_length: 1 << 20, max_shots: 1 << 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job<T> {
    pub gates: Vec<GateSpec<T>>,
    pub seed: u64,
}

pub trait Backend<T: Real>: Sync {
    fn capabilities(&self) -> Capabilities;

    /// Runs one sequence; callers go through [`Backend::submit`].
    fn execute(&self, gates: &[GateSpec<T>], shots: u64, seed: u64) -> Result<ShotRecord, BackendError>;

    /// Hint listing gates about to be used (simulators build channels up front).
    fn prepare(&self, _gates: &[GateSpec<T>]) -> Result<(), BackendError> {
        Ok(())
    }

    fn check(&self, len: usize, shots: u64) -> Result<(), BackendError> {
        let caps = self.capabilities();
        if len > caps.max_sequence_length {
            return Err(BackendError::SequenceTooLong { len, max: caps.max_sequence_length });
        }
        if shots > caps.max_shots {
            return Err(BackendError::TooManyShots { shots, max: caps.max_shots });
        }
        Ok(())
    }

    fn submit(&self, gates: &[GateSpec<T>], shots: u64, seed: u64) -> Result<ShotRecord, BackendError> {
        self.check(gates.len(), shots)?;
        self.execute(gates, shots, seed)
    }

    /// Records come back in submission order.
    fn submit_batch(&self, jobs: &[Job<T>], shots: u64) -> Result<Vec<ShotRecord>, BackendError> {
        for job in jobs {
            self.check(job.gates.len(), shots)?;
        }
        let mut distinct: Vec<GateSpec<T>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for g in jobs.iter().flat_map(|j| j.gates.iter()) {
            if seen.insert(g.key()) {
                distinct.push(*g);
            }
        }
        self.prepare(&distinct)?;
        jobs.par_iter().map(|j| self.execute(&j.gates, shots, j.seed)).collect()
    }
}

/// Backend over the three-level Lindblad simulator.
pub struct SimBackend<T: Real> {
    pub simulator: QutritSimulator<T>,
    pub capabilities: Capabilities,
}

impl<T: Real> SimBackend<T> {
    pub fn new(simulator: QutritSimulator<T>) -> Self {
        Self { simulator, capabilities: Capabilities::default() }
    }
}

impl<T: Real> Backend<T> for SimBackend<T> {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn execute(&self, gates: &[GateSpec<T>], shots: u64, seed: u64) -> Result<ShotRecord, BackendError> {
        Ok(self.simulator.run_sequence(gates, shots, seed)?)
    }

    fn prepare(&self, gates: &[GateSpec<T>]) -> Result<(), BackendError> {
        Ok(self.simulator.prepare(gates)?)
    }
}

/// Ideal qubit rotations at their nominal angles, each physical pulse
/// followed by a depolarizing channel ρ → pρ + (1 − p)·I/2.
pub struct DepolarizingBackend<T: Real> {
    pub polarization: T,
    pub confusion: ConfusionMatrix3<T>,
    /// (nominal angle°, over-rotation°) applied coherently to matching pulses.
    pub angle_errors: Vec<(T, T)>,
    /// When set, rotation angles follow the pulse amplitude through the line
    /// (degrees per delivered mV) instead of the nominal angle.
    pub drive: Option<(DriveLineTransfer<T>, T)>,
    pub capabilities: Capabilities,
}

impl<T: Real> DepolarizingBackend<T> {
    pub fn new(polarization: T, confusion: ConfusionMatrix3<T>) -> Self {
        Self { polarization, confusion, angle_errors: Vec::new(), drive: None, capabilities: Capabilities::default() }
    }

    /// Polarization giving average gate infidelity `error` (d = 2).
    pub fn from_average_error(error: T, confusion: ConfusionMatrix3<T>) -> Self {
        Self::new(T::one() - T::lit(2.0) * error, confusion)
    }

    pub fn with_angle_error(mut self, angle: T, error_deg: T) -> Self {
        self.angle_errors.push((angle, error_deg));
        self
    }

    /// Amplitude-driven rotations: `a_pi` through `line` gives exactly 180°.
    pub fn with_drive_line(mut self, line: DriveLineTransfer<T>, a_pi: T) -> Result<Self, DriveLineError> {
        let per_mv = T::lit(180.0) / line.apply(a_pi)?;
        self.drive = Some((line, per_mv));
        Ok(self)
    }

    fn rotation(&self, pulse: &crate::qutrit::PulseGate<T>) -> Result<T, DriveLineError> {
        let extra = self.angle_errors.iter().find(|e| e.0 == pulse.angle).map_or(T::zero(), |e| e.1);
        match &self.drive {
            Some((line, per_mv)) => Ok(*per_mv * line.apply(pulse.amplitude)? + extra),
            None => Ok(pulse.angle + extra),
        }
    }

    /// Populations (p_g, p_e, 0) after the sequence.
    pub fn populations(&self, gates: &[GateSpec<T>]) -> Result<[T; 3], DriveLineError> {
        let mut rho = U2::<T>::zeros();
        rho[(0, 0)] = Complex::new(T::one(), T::zero());
        let p = self.polarization;
        let half = (T::one() - p) / T::lit(2.0);
        for g in gates {
            match g {
                GateSpec::Pulse(pulse) => {
                    let u = pulse_unitary(deg_to_rad(self.rotation(pulse)?), pulse.phase);
                    rho = u * rho * u.adjoint();
                    rho *= Complex::new(p, T::zero());
                    rho[(0, 0)].re += half;
                    rho[(1, 1)].re += half;
                }
                GateSpec::VirtualZ { phase } => {
                    let u = z_unitary(*phase);
                    rho = u * rho * u.adjoint();
                }
                GateSpec::Idle { .. } => {}
            }
        }
        let pg = rho[(0, 0)].re.max(T::zero());
        let pe = rho[(1, 1)].re.max(T::zero());
        let s = pg + pe;
        Ok([pg / s, pe / s, T::zero()])
    }
}

impl<T: Real> Backend<T> for DepolarizingBackend<T> {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn execute(&self, gates: &[GateSpec<T>], shots: u64, seed: u64) -> Result<ShotRecord, BackendError> {
        let mut rng = StreamRng::seed_from_u64(seed);
        let pops = self.populations(gates).map_err(|e| BackendError::Line(e.to_string()))?;
        Ok(sample_readout(pops, &self.confusion, shots, &mut rng)?)
    }
}

/// Returns the same record for every submission, scaled to the shot count.
pub struct FixedBackend {
    pub fractions: [f64; 3],
}

impl<T: Real> Backend<T> for FixedBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn execute(&self, _gates: &[GateSpec<T>], shots: u64, _seed: u64) -> Result<ShotRecord, BackendError> {
        let n_g = (self.fractions[0] * shots as f64).round() as u64;
        let n_e = ((self.fractions[1] * shots as f64).round() as u64).min(shots - n_g);
        Ok(ShotRecord::new(n_g, n_e, shots - n_g - n_e))
    }
}
