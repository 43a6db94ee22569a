//! Rotation requests turned into concrete pulses.

use serde::{Deserialize, Serialize};

use crate::driveline::{AngleModel, DriveLineError};
use crate::qutrit::{GateSpec, PulseGate, PulseShape};
use crate::scalar::Real;

/// Pulse timing plus the amplitude rule for each rotation angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSet<T> {
    pub shape: PulseShape<T>,
    pub angle_model: AngleModel<T>,
    /// Individually calibrated (angle°, amplitude mV) pairs; exact-match lookup.
    #[serde(default)]
    pub overrides: Vec<(T, T)>,
}

impl<T: Real> GateSet<T> {
    /// Amplitudes proportional to the angle.
    pub fn linear(shape: PulseShape<T>, a_pi: T) -> Self {
        Self { shape, angle_model: AngleModel::linear(a_pi), overrides: Vec::new() }
    }

    pub fn with_model(shape: PulseShape<T>, angle_model: AngleModel<T>) -> Self {
        Self { shape, angle_model, overrides: Vec::new() }
    }

    pub fn with_override(mut self, angle: T, amplitude: T) -> Self {
        self.overrides.retain(|o| o.0 != angle);
        self.overrides.push((angle, amplitude));
        self
    }

    pub fn amplitude(&self, angle: T) -> Result<T, DriveLineError> {
        if let Some(&(_, a)) = self.overrides.iter().find(|o| o.0 == angle) {
            return Ok(a);
        }
        self.angle_model.amplitude_mv(angle)
    }

    /// Rotation by `angle` (degrees, within [0°, 180°]) about the axis at `phase`.
    pub fn pulse(&self, angle: T, phase: T) -> Result<GateSpec<T>, DriveLineError> {
        Ok(GateSpec::Pulse(PulseGate { angle, phase, amplitude: self.amplitude(angle)?, shape: self.shape }))
    }

    pub fn x(&self, angle: T) -> Result<GateSpec<T>, DriveLineError> {
        self.pulse(angle, T::zero())
    }

    pub fn y(&self, angle: T) -> Result<GateSpec<T>, DriveLineError> {
        self.pulse(angle, T::FRAC_PI_2())
    }
}
