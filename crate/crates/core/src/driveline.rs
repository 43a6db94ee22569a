//! Drive-line amplitude response.
//!
//! [`DriveLineTransfer`] is the simulated device under test: a static, odd,
//! monotonic map from the programmed envelope amplitude to the amplitude that
//! reaches the qubit. [`AngleModel`] is the fifth-order odd polynomial used to
//! correct for it:
//!
//! θ(Ã) = 180°·(1 + b(Ã² − 1) + a(Ã⁴ − 1))·Ã,  Ã = A/A_π.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{fit_least_squares, CurveFitProblem, DataPoint, FitError, FitOutcome, Pointwise};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriveLineError {
    #[error("amplitude {amplitude} mV outside the configured range ±{range} mV")]
    OutOfRange { amplitude: f64, range: f64 },
    #[error("transfer is not strictly increasing on the configured range")]
    NotMonotonic,
    #[error("invalid transfer parameters: {0}")]
    Invalid(String),
    #[error("angle model (a = {a}, b = {b}) is not monotonic on [0, 1]")]
    NonMonotonicModel { a: f64, b: f64 },
    #[error("angle {0}° outside [-180°, 180°]")]
    AngleOutOfRange(f64),
    #[error("angle model fit needs {0}")]
    InsufficientPoints(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransferKind<T> {
    Linear,
    /// f(A) = A_sat·tanh(A/A_sat)
    Tanh { saturation: T },
    /// f(A) = c1·A + c3·A³ + c5·A⁵
    OddPolynomial { c1: T, c3: T, c5: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveLineTransfer<T> {
    #[serde(flatten)]
    pub kind: TransferKind<T>,
    /// Largest programmable |amplitude| (mV).
    pub range: T,
    /// Amplitude unit used for reporting (mV).
    pub full_scale: T,
}

impl<T: Real> DriveLineTransfer<T> {
    pub fn new(kind: TransferKind<T>, range: T, full_scale: T) -> Result<Self, DriveLineError> {
        let line = Self { kind, range, full_scale };
        line.validate()?;
        Ok(line)
    }

    pub fn linear(range: T) -> Self {
        Self { kind: TransferKind::Linear, range, full_scale: range }
    }

    pub fn tanh(saturation: T, range: T) -> Result<Self, DriveLineError> {
        Self::new(TransferKind::Tanh { saturation }, range, range)
    }

    /// Tanh compression tuned so that linearly scaling a π amplitude `a_pi`
    /// over-rotates by at most `max_deviation_deg` (reached near Ã ≈ 0.57).
    pub fn tanh_for_deviation(a_pi: T, max_deviation_deg: T, range: T) -> Result<Self, DriveLineError> {
        if !(max_deviation_deg > T::zero()) || max_deviation_deg > T::lit(60.0) {
            return Err(DriveLineError::Invalid("deviation must lie in (0°, 60°]".into()));
        }
        // Peak deviation grows monotonically with x = A_π/A_sat.
        let mut lo = T::lit(1e-4);
        let mut hi = T::lit(5.0);
        for _ in 0..200 {
            let mid = (lo + hi) / T::lit(2.0);
            if tanh_peak_deviation(mid) < max_deviation_deg {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = (lo + hi) / T::lit(2.0);
        Self::tanh(a_pi / x, range)
    }

    pub fn validate(&self) -> Result<(), DriveLineError> {
        if !(self.range > T::zero()) || !(self.full_scale > T::zero()) {
            return Err(DriveLineError::Invalid("range and full scale must be positive".into()));
        }
        match self.kind {
            TransferKind::Linear => Ok(()),
            TransferKind::Tanh { saturation } => {
                if saturation > T::zero() && saturation.is_finite() {
                    Ok(())
                } else {
                    Err(DriveLineError::Invalid("tanh saturation must be positive".into()))
                }
            }
            TransferKind::OddPolynomial { c1, c3, c5 } => {
                // f'(A) = c1 + 3c3·A² + 5c5·A⁴ must stay positive on [0, range].
                let n = 4096;
                for i in 0..=n {
                    let a = self.range * T::from_usize_lossy(i) / T::from_usize_lossy(n);
                    let a2 = a * a;
                    let d = c1 + T::lit(3.0) * c3 * a2 + T::lit(5.0) * c5 * a2 * a2;
                    if !(d > T::zero()) {
                        return Err(DriveLineError::NotMonotonic);
                    }
                }
                Ok(())
            }
        }
    }

    fn eval_unchecked(&self, a: T) -> T {
        match self.kind {
            TransferKind::Linear => a,
            TransferKind::Tanh { saturation } => saturation * (a / saturation).tanh(),
            TransferKind::OddPolynomial { c1, c3, c5 } => {
                let a2 = a * a;
                a * (c1 + a2 * (c3 + a2 * c5))
            }
        }
    }

    /// Distorted amplitude reaching the qubit.
    pub fn apply(&self, amplitude: T) -> Result<T, DriveLineError> {
        if amplitude.abs() > self.range * (T::one() + T::lit(1e-12)) || !amplitude.is_finite() {
            return Err(DriveLineError::OutOfRange {
                amplitude: amplitude.as_f64(),
                range: self.range.as_f64(),
            });
        }
        Ok(self.eval_unchecked(amplitude))
    }

    /// Programmed amplitude producing `delivered` at the qubit (bisection).
    pub fn invert(&self, delivered: T) -> Result<T, DriveLineError> {
        let top = self.eval_unchecked(self.range);
        if delivered.abs() > top {
            return Err(DriveLineError::OutOfRange {
                amplitude: delivered.as_f64(),
                range: top.as_f64(),
            });
        }
        if let TransferKind::Linear = self.kind {
            return Ok(delivered);
        }
        let sign = if delivered < T::zero() { -T::one() } else { T::one() };
        let target = delivered.abs();
        let mut lo = T::zero();
        let mut hi = self.range;
        for _ in 0..200 {
            let mid = (lo + hi) / T::lit(2.0);
            if self.eval_unchecked(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= T::eps() * hi {
                break;
            }
        }
        Ok(sign * (lo + hi) / T::lit(2.0))
    }
}

fn tanh_peak_deviation<T: Real>(x: T) -> T {
    let n = 2000;
    let norm = x.tanh();
    let mut best = T::zero();
    for i in 0..=n {
        let a = T::from_usize_lossy(i) / T::from_usize_lossy(n);
        let d = T::lit(180.0) * ((a * x).tanh() / norm - a);
        if d > best {
            best = d;
        }
    }
    best
}

/// Odd fifth-order polynomial map from relative amplitude to rotation angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleModel<T> {
    pub a: T,
    pub b: T,
    /// Amplitude of a π rotation (mV).
    pub a_pi: T,
}

/// θ(Ã) for raw coefficients; shared by the model and its fit.
fn poly_angle<T: Real>(a: T, b: T, x: T) -> T {
    let x2 = x * x;
    T::lit(180.0) * (T::one() + b * (x2 - T::one()) + a * (x2 * x2 - T::one())) * x
}

fn poly_slope<T: Real>(a: T, b: T, x: T) -> T {
    let x2 = x * x;
    T::lit(180.0) * (T::one() + b * (T::lit(3.0) * x2 - T::one()) + a * (T::lit(5.0) * x2 * x2 - T::one()))
}

fn is_monotonic_on_unit<T: Real>(a: T, b: T) -> bool {
    let n = 2000;
    (0..=n).all(|i| poly_slope(a, b, T::from_usize_lossy(i) / T::from_usize_lossy(n)) > T::zero())
}

impl<T: Real> AngleModel<T> {
    pub fn new(a: T, b: T, a_pi: T) -> Result<Self, DriveLineError> {
        if !is_monotonic_on_unit(a, b) {
            return Err(DriveLineError::NonMonotonicModel { a: a.as_f64(), b: b.as_f64() });
        }
        if !(a_pi > T::zero()) {
            return Err(DriveLineError::Invalid("π amplitude must be positive".into()));
        }
        Ok(Self { a, b, a_pi })
    }

    /// Linear scaling relative to the π amplitude.
    pub fn linear(a_pi: T) -> Self {
        Self { a: T::zero(), b: T::zero(), a_pi }
    }

    /// θ(Ã) in degrees.
    pub fn angle_from_amplitude(&self, a_tilde: T) -> T {
        poly_angle(self.a, self.b, a_tilde)
    }

    /// θ(Ã) − 180°·Ã.
    pub fn deviation(&self, a_tilde: T) -> T {
        self.angle_from_amplitude(a_tilde) - T::lit(180.0) * a_tilde
    }

    /// Inverts θ(Ã) on [−1, 1] by Newton steps safeguarded with bisection.
    pub fn amplitude_for_angle(&self, theta_deg: T) -> Result<T, DriveLineError> {
        let limit = T::lit(180.0);
        if !(theta_deg.abs() <= limit * (T::one() + T::lit(1e-12))) {
            return Err(DriveLineError::AngleOutOfRange(theta_deg.as_f64()));
        }
        let sign = if theta_deg < T::zero() { -T::one() } else { T::one() };
        let target = theta_deg.abs().min(limit);
        if target == limit {
            return Ok(sign);
        }
        let mut lo = T::zero();
        let mut hi = T::one();
        let mut x = target / limit;
        let tol = T::lit(1e-11).max(T::eps() * T::lit(1e3));
        for _ in 0..200 {
            let f = self.angle_from_amplitude(x) - target;
            if f.abs() <= tol {
                break;
            }
            if f > T::zero() {
                hi = x;
            } else {
                lo = x;
            }
            let slope = poly_slope(self.a, self.b, x);
            let newton = x - f / slope;
            x = if newton > lo && newton < hi && slope > T::zero() {
                newton
            } else {
                (lo + hi) / T::lit(2.0)
            };
            if hi - lo <= T::eps() {
                break;
            }
        }
        Ok(sign * x)
    }

    /// Programmed amplitude (mV) for a rotation of `theta_deg`.
    pub fn amplitude_mv(&self, theta_deg: T) -> Result<T, DriveLineError> {
        Ok(self.amplitude_for_angle(theta_deg)? * self.a_pi)
    }
}

/// Fitted angle model with its residuals.
#[derive(Debug, Clone)]
pub struct AngleModelFit<T> {
    pub model: AngleModel<T>,
    /// θ_measured − θ_model per input point (degrees).
    pub residuals: Vec<T>,
    pub residual_max: T,
    pub fit: FitOutcome<T>,
}

/// Least-squares fit of (a, b) to calibrated (Ã, θ°) points.
pub fn fit_angle_model<T: Real>(points: &[(T, T)], a_pi: T) -> Result<AngleModelFit<T>, DriveLineError> {
    let mut xs: Vec<T> = points.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite amplitudes"));
    xs.dedup();
    if xs.len() < 3 {
        return Err(DriveLineError::InsufficientPoints("at least three distinct amplitudes".into()));
    }
    if !points.iter().any(|p| (p.0.abs() - T::one()).abs() < T::lit(0.1)) {
        return Err(DriveLineError::InsufficientPoints("a point near Ã = 1".into()));
    }
    let data: Vec<_> = points.iter().map(|&(x, y)| DataPoint::unweighted(x, y)).collect();
    let problem = CurveFitProblem::new(
        Pointwise(|p: &[T], x: T| poly_angle(p[0], p[1], x)),
        data,
        vec![T::zero(), T::zero()],
    )?;
    let fit = fit_least_squares(&problem)?;
    let (a, b) = (fit.params[0], fit.params[1]);
    let model = AngleModel::new(a, b, a_pi)?;
    let residuals: Vec<T> = points.iter().map(|&(x, y)| y - model.angle_from_amplitude(x)).collect();
    let residual_max = residuals.iter().fold(T::zero(), |m, r| m.max(r.abs()));
    Ok(AngleModelFit { model, residuals, residual_max, fit })
}
