//! Qubit pulse calibration on a simulated transmon: drive-line response,
//! N-pulse error amplification, and RB/PB/XEB benchmarking.
//!
//! Numerical code is generic over [`scalar::Real`] (f32 or f64); the aliases
//! below fix the scalar to f64.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod benchmarking;
pub mod bloch;
pub mod clifford;
pub mod driveline;
pub mod fitting;
pub mod gateset;
pub mod npulse;
pub mod qubit;
pub mod qutrit;
pub mod readout;
pub mod scalar;
pub mod seed;
pub mod stats;

pub type FitOutcome = fitting::FitOutcome<f64>;
pub type BootstrapSummary = fitting::BootstrapSummary<f64>;
pub type DecayRates = bloch::DecayRates<f64>;
pub type BlochYZ = bloch::BlochYZ<f64>;
pub type RotationPulseModel = bloch::RotationPulseModel<f64>;
pub type DriveLineTransfer = driveline::DriveLineTransfer<f64>;
pub type AngleModel = driveline::AngleModel<f64>;
pub type ConfusionMatrix3 = readout::ConfusionMatrix3<f64>;
pub type QutritModel = qutrit::QutritModel<f64>;
pub type QutritSimulator = qutrit::QutritSimulator<f64>;
pub type PulseShape = qutrit::PulseShape<f64>;
pub type GateSpec = qutrit::GateSpec<f64>;
pub type DensityMatrix3 = qutrit::DensityMatrix3<f64>;
pub type GateSet = gateset::GateSet<f64>;
pub type SimBackend = backend::SimBackend<f64>;
pub type DepolarizingBackend = backend::DepolarizingBackend<f64>;
pub type DecayCurve = benchmarking::DecayCurve<f64>;
pub type DecayAnalysis = benchmarking::DecayAnalysis<f64>;
pub type BenchmarkResult = benchmarking::BenchmarkResult<f64>;
pub type CalSequenceSpec = npulse::CalSequenceSpec<f64>;
pub type CalibrationResult = npulse::CalibrationResult<f64>;
pub type ResponseCurve = npulse::ResponseCurve<f64>;
