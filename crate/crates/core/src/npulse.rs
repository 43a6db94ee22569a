//! N-pulse error amplification: repeated pulses turn a small rotation error ε
//! into an oscillation of p_e around 1/2 that the closed-form propagator fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Job};
use crate::bloch::{excited_population, propagate_for, BlochError, BlochYZ, DecayRates};
use crate::driveline::{fit_angle_model, AngleModel, DriveLineError};
use crate::fitting::{fit_least_squares, Batch, CurveFitProblem, DataPoint, FitError, FitOutcome};
use crate::gateset::GateSet;
use crate::qutrit::{GateSpec, PulseGate, PulseShape};
use crate::readout::{mitigate, renormalize_computational, ConfusionMatrix3, ReadoutError};
use crate::scalar::Real;
use crate::seed::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NPulseError {
    #[error("invalid calibration sequence: {0}")]
    Spec(String),
    #[error("invalid calibration data: {0}")]
    Data(String),
    #[error("fitted rotation error {epsilon}° is outside the identifiable ±{window}°")]
    EpsilonOutOfRange { epsilon: f64, window: f64 },
    #[error("rotation-error fit did not converge after {iterations} iterations (residual {residual})")]
    FitNotConverged { iterations: usize, residual: f64 },
    #[error("calibration of {target}° did not reach tolerance; ε history {history:?}")]
    NotConverged { target: f64, history: Vec<f64> },
    #[error(transparent)]
    Bloch(#[from] BlochError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Line(#[from] DriveLineError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
}

/// Largest |ε| accepted from a fit (degrees).
pub const MAX_EPSILON_DEG: f64 = 30.0;

/// Which pulses are repeated N times after the X(π/2) initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "k", rename_all = "kebab-case")]
pub enum SequenceVariant {
    /// N × X(π)
    Pi,
    /// N × [k × X(π/k)]
    PiOverK(u32),
    /// N × [X(π/k), X(π − π/k)], the first pulse already calibrated
    Complement(u32),
}

impl SequenceVariant {
    /// Angle (degrees) of the pulse under calibration.
    pub fn target_deg<T: Real>(self) -> T {
        let half_turn = T::lit(180.0);
        match self {
            Self::Pi => half_turn,
            Self::PiOverK(k) => half_turn / T::lit(f64::from(k)),
            Self::Complement(k) => half_turn - half_turn / T::lit(f64::from(k)),
        }
    }

    /// Partner angle for the complement variant.
    pub fn partner_deg<T: Real>(self) -> Option<T> {
        match self {
            Self::Complement(k) => Some(T::lit(180.0) / T::lit(f64::from(k))),
            _ => None,
        }
    }

    /// Pulses under calibration per repetition.
    pub fn target_repeats(self) -> usize {
        match self {
            Self::PiOverK(k) => k as usize,
            _ => 1,
        }
    }

    fn k(self) -> Option<u32> {
        match self {
            Self::Pi => None,
            Self::PiOverK(k) | Self::Complement(k) => Some(k),
        }
    }

    /// Variant for an angle of the form 180°, 180°/k or 180° − 180°/k.
    pub fn for_angle<T: Real>(theta_deg: T) -> Option<Self> {
        let tol = T::lit(1e-9);
        if (theta_deg - T::lit(180.0)).abs() < tol {
            return Some(Self::Pi);
        }
        if !(theta_deg > T::zero() && theta_deg < T::lit(180.0)) {
            return None;
        }
        let k = T::lit(180.0) / theta_deg;
        if (k - k.round()).abs() < T::lit(1e-9) * k {
            return k.round().to_u32().map(Self::PiOverK);
        }
        let kc = T::lit(180.0) / (T::lit(180.0) - theta_deg);
        if (kc - kc.round()).abs() < T::lit(1e-9) * kc {
            return kc.round().to_u32().map(Self::Complement);
        }
        None
    }

    /// N ∈ {0, …, 150} on a stride of 5, 3 for the complement variant, and
    /// shorter for large k so the alias-free window stays near ±10°.
    pub fn default_n_values(self) -> Vec<usize> {
        let step = match self {
            Self::Pi => 5,
            Self::PiOverK(k) => (10 / k as usize).clamp(1, 5),
            Self::Complement(_) => 3,
        };
        (0..=150).step_by(step).collect()
    }
}

/// Half-width (degrees) of the ε range the N grid can distinguish.
///
/// With N sampled on a stride g, block rotations 180° + kε that differ by
/// 360°/(2g) leave the sampled states on the same equator points, so ε is
/// only identifiable within ±90°/(g·k), capped at ±30°.
pub fn identifiable_window<T: Real>(variant: SequenceVariant, n_values: &[usize]) -> T {
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let stride = n_values.iter().map(|&n| n - n_values[0]).fold(0, gcd).max(1);
    let reps = variant.target_repeats();
    T::lit(MAX_EPSILON_DEG).min(T::lit(90.0) / T::from_usize_lossy(stride * reps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalSequenceSpec<T> {
    pub variant: SequenceVariant,
    pub n_values: Vec<usize>,
    /// Fitted π fraction of the calibrated partner pulse (complement variant).
    pub reference_fraction: Option<T>,
    /// Idle time between consecutive pulses (s).
    #[serde(default)]
    pub gap: T,
}

impl<T: Real> CalSequenceSpec<T> {
    pub fn new(variant: SequenceVariant) -> Self {
        Self { variant, n_values: variant.default_n_values(), reference_fraction: None, gap: T::zero() }
    }

    pub fn validate(&self) -> Result<(), NPulseError> {
        if let Some(k) = self.variant.k() {
            if k < 2 {
                return Err(NPulseError::Spec(format!("k = {k} must be at least 2")));
            }
        }
        if self.n_values.is_empty() {
            return Err(NPulseError::Spec("no repetition counts".into()));
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NPulseError::Spec("repetition counts must be strictly increasing".into()));
        }
        if matches!(self.variant, SequenceVariant::Complement(_)) {
            match self.reference_fraction {
                Some(f) if f > T::zero() && f < T::lit(2.0) => {}
                _ => return Err(NPulseError::Spec("complement variant needs a calibrated π/k reference".into())),
            }
        }
        if !(self.gap >= T::zero()) {
            return Err(NPulseError::Spec("gap must be non-negative".into()));
        }
        Ok(())
    }
}

/// Concrete pulses used to realize a calibration sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalPulses<T> {
    pub init: GateSpec<T>,
    pub target: GateSpec<T>,
    pub partner: Option<GateSpec<T>>,
}

/// Initialization, then N repetitions of the variant's block.
pub fn build_sequence<T: Real>(
    spec: &CalSequenceSpec<T>,
    n: usize,
    pulses: &CalPulses<T>,
) -> Result<Vec<GateSpec<T>>, NPulseError> {
    let block: Vec<GateSpec<T>> = match spec.variant {
        SequenceVariant::Pi => vec![pulses.target],
        SequenceVariant::PiOverK(k) => vec![pulses.target; k as usize],
        SequenceVariant::Complement(_) => {
            let partner =
                pulses.partner.ok_or_else(|| NPulseError::Spec("complement variant needs a partner pulse".into()))?;
            vec![partner, pulses.target]
        }
    };
    let idle = (spec.gap > T::zero()).then_some(GateSpec::Idle { duration: spec.gap });
    let mut out = Vec::with_capacity(1 + n * block.len() * 2);
    out.push(pulses.init);
    for _ in 0..n {
        for g in &block {
            out.extend(idle);
            out.push(*g);
        }
    }
    Ok(out)
}

/// p_e after each requested N, propagating square pulses of duration `tau`.
/// The initialization pulse is taken as an exact π/2.
pub fn npulse_forward_model<T: Real>(
    alpha_fraction: T,
    spec: &CalSequenceSpec<T>,
    rates: &DecayRates<T>,
    tau: T,
    n_values: &[usize],
) -> Result<Vec<T>, NPulseError> {
    if !(tau > T::zero()) {
        return Err(BlochError::NonPositiveDuration.into());
    }
    if !(alpha_fraction > T::zero() && alpha_fraction < T::lit(2.0)) {
        return Err(NPulseError::Spec(format!("π fraction {alpha_fraction} outside (0, 2)")));
    }
    let rate = |fraction: T| fraction * T::PI() / tau;
    let target = rate(alpha_fraction);
    let block: Vec<T> = match spec.variant {
        SequenceVariant::Pi => vec![target],
        SequenceVariant::PiOverK(k) => vec![target; k as usize],
        SequenceVariant::Complement(_) => {
            let r = spec
                .reference_fraction
                .ok_or_else(|| NPulseError::Spec("complement variant needs a calibrated π/k reference".into()))?;
            vec![rate(r), target]
        }
    };
    let mut state = propagate_for(BlochYZ::ground(), rate(T::lit(0.5)), tau, rates);
    let max_n = n_values.iter().copied().max().unwrap_or(0);
    let mut at_n = Vec::with_capacity(max_n + 1);
    at_n.push(excited_population(&state));
    for _ in 0..max_n {
        for &omega in &block {
            if spec.gap > T::zero() {
                state = propagate_for(state, T::zero(), spec.gap, rates);
            }
            state = propagate_for(state, omega, tau, rates);
        }
        at_n.push(excited_population(&state));
    }
    Ok(n_values.iter().map(|&n| at_n[n]).collect())
}

/// Fitted rotation error of one N-pulse data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationFit<T> {
    pub target_deg: T,
    /// Fitted rotation (degrees) minus the target.
    pub epsilon: T,
    pub epsilon_sigma: T,
    pub alpha_fraction: T,
    pub fit: FitOutcome<T>,
    pub data: Vec<(usize, T)>,
}

/// Least-squares fit of the π fraction of the pulse under calibration.
///
/// A grid over the identifiable ε window picks the starting point, since the
/// cost has local minima spaced by roughly 360°/(repetitions in the longest
/// sequence).
pub fn fit_rotation_error<T: Real>(
    measured: &[(usize, T)],
    spec: &CalSequenceSpec<T>,
    rates: &DecayRates<T>,
    tau: T,
) -> Result<RotationFit<T>, NPulseError> {
    spec.validate()?;
    let mut ns: Vec<usize> = measured.iter().map(|m| m.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 8 {
        return Err(NPulseError::Data(format!("need at least 8 distinct N values, got {}", ns.len())));
    }
    if let Some(bad) = measured.iter().find(|m| !(m.1 >= T::zero() && m.1 <= T::one())) {
        return Err(NPulseError::Data(format!("p_e = {} at N = {} outside [0, 1]", bad.1, bad.0)));
    }
    let target = spec.variant.target_deg::<T>();
    let half_turn = T::lit(180.0);
    let eps_max = identifiable_window::<T>(spec.variant, &ns);
    let n_of: Vec<usize> = measured.iter().map(|m| m.0).collect();
    let cost = |alpha: T| -> Option<T> {
        let model = npulse_forward_model(alpha, spec, rates, tau, &n_of).ok()?;
        Some(model.iter().zip(measured).fold(T::zero(), |acc, (p, m)| acc + (*p - m.1) * (*p - m.1)))
    };

    let inner = eps_max * T::lit(0.98);
    let lo = ((target - inner) / half_turn).max(T::lit(1e-6));
    let hi = ((target + inner) / half_turn).min(T::lit(2.0) - T::lit(1e-6));
    let reps = spec.variant.target_repeats() * ns[ns.len() - 1].max(1);
    let step_deg = (T::lit(0.1)).min(T::lit(30.0) / T::from_usize_lossy(reps));
    let steps = ((hi - lo) * half_turn / step_deg).ceil().to_usize().unwrap_or(1).max(1);
    let mut best = (target / half_turn, T::lit(f64::INFINITY));
    for i in 0..=steps {
        let a = lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(steps);
        if let Some(c) = cost(a) {
            if c < best.1 {
                best = (a, c);
            }
        }
    }

    let data: Vec<DataPoint<T>> =
        measured.iter().map(|&(n, p)| DataPoint::unweighted(T::from_usize_lossy(n), p)).collect();
    let model = Batch(|p: &[T], xs: &[T]| -> Vec<T> {
        let ns: Vec<usize> = xs.iter().map(|x| x.to_usize().unwrap_or(0)).collect();
        npulse_forward_model(p[0], spec, rates, tau, &ns).unwrap_or_else(|_| vec![T::lit(f64::NAN); xs.len()])
    });
    let problem = CurveFitProblem::new(model, data, vec![best.0])?.with_bounds(vec![(lo, hi)])?;
    let fit = fit_least_squares(&problem)?;
    if !fit.converged {
        return Err(NPulseError::FitNotConverged { iterations: fit.iterations, residual: fit.residual_norm.as_f64() });
    }
    let alpha_fraction = fit.params[0];
    let epsilon = alpha_fraction * half_turn - target;
    if !(epsilon.abs() < eps_max) {
        return Err(NPulseError::EpsilonOutOfRange { epsilon: epsilon.as_f64(), window: eps_max.as_f64() });
    }
    Ok(RotationFit {
        target_deg: target,
        epsilon,
        epsilon_sigma: fit.std_error(0) * half_turn,
        alpha_fraction,
        fit,
        data: measured.to_vec(),
    })
}

/// current · θ / (θ + ε).
pub fn correct_amplitude<T: Real>(current: T, epsilon_deg: T, theta_target_deg: T) -> Result<T, NPulseError> {
    let denom = theta_target_deg + epsilon_deg;
    if !(denom > T::zero()) {
        return Err(NPulseError::Data(format!("θ + ε = {denom}° must be positive")));
    }
    Ok(current * theta_target_deg / denom)
}

/// Measurement settings shared by the calibration routines.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationContext<T: Real> {
    pub shape: PulseShape<T>,
    pub confusion: ConfusionMatrix3<T>,
    /// Independently characterized rates fed to the forward model.
    pub rates: DecayRates<T>,
    pub shots: u64,
    pub seed: u64,
    pub tolerance_deg: T,
    pub max_iterations: usize,
    /// Idle time between pulses (s).
    pub gap: T,
    /// Overrides the variant's default N grid.
    pub n_values: Option<Vec<usize>>,
}

impl<T: Real> CalibrationContext<T> {
    pub fn new(shape: PulseShape<T>, confusion: ConfusionMatrix3<T>, rates: DecayRates<T>) -> Self {
        Self {
            shape,
            confusion,
            rates,
            shots: 4096,
            seed: 0,
            tolerance_deg: T::lit(0.05),
            max_iterations: 5,
            gap: T::zero(),
            n_values: None,
        }
    }

    fn pulse(&self, angle: T, amplitude: T) -> GateSpec<T> {
        GateSpec::Pulse(PulseGate { angle, phase: T::zero(), amplitude, shape: self.shape })
    }

    fn spec(&self, variant: SequenceVariant, reference_fraction: Option<T>) -> CalSequenceSpec<T> {
        CalSequenceSpec {
            variant,
            n_values: self.n_values.clone().unwrap_or_else(|| variant.default_n_values()),
            reference_fraction,
            gap: self.gap,
        }
    }

    fn excited<B: Backend<T> + ?Sized>(&self, backend: &B, jobs: &[Job<T>]) -> Result<Vec<T>, NPulseError> {
        backend
            .submit_batch(jobs, self.shots)?
            .iter()
            .map(|r| {
                let m = mitigate(r, &self.confusion)?;
                Ok(renormalize_computational(m.populations)?.p_e)
            })
            .collect()
    }
}

/// One measure–fit–correct pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep<T> {
    pub amplitude: T,
    pub fit: RotationFit<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult<T> {
    pub target_deg: T,
    pub variant: SequenceVariant,
    /// ε measured at `amplitude_before` in the last pass.
    pub epsilon: T,
    pub alpha_fraction: T,
    pub amplitude_before: T,
    /// `amplitude_before · θ/(θ + ε)`.
    pub amplitude_after: T,
    pub iterations: usize,
    pub history: Vec<CalibrationStep<T>>,
}

impl<T: Real> CalibrationResult<T> {
    /// ε of the first pass, i.e. of the starting amplitude.
    pub fn initial_epsilon(&self) -> T {
        self.history[0].fit.epsilon
    }
}

/// Partner pulse for the complement variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partner<T> {
    pub amplitude: T,
    pub alpha_fraction: T,
}

/// Iterates measure → fit → correct until |ε| < tolerance.
pub fn calibrate_angle<B: Backend<T> + ?Sized, T: Real>(
    backend: &B,
    ctx: &CalibrationContext<T>,
    variant: SequenceVariant,
    start_amplitude: T,
    init_amplitude: T,
    partner: Option<Partner<T>>,
) -> Result<CalibrationResult<T>, NPulseError> {
    let target = variant.target_deg::<T>();
    let spec = ctx.spec(variant, partner.map(|p| p.alpha_fraction));
    spec.validate()?;
    let tau = ctx.shape.duration;
    let init = ctx.pulse(T::lit(90.0), init_amplitude);
    let partner_gate = match (variant.partner_deg::<T>(), partner) {
        (Some(angle), Some(p)) => Some(ctx.pulse(angle, p.amplitude)),
        _ => None,
    };
    let tag = format!("npulse-{}", target.as_f64().to_bits());
    let mut amplitude = start_amplitude;
    let mut history: Vec<CalibrationStep<T>> = Vec::new();
    for iteration in 1..=ctx.max_iterations.max(1) {
        let pulses = CalPulses { init, target: ctx.pulse(target, amplitude), partner: partner_gate };
        let jobs = spec
            .n_values
            .iter()
            .map(|&n| {
                Ok(Job {
                    gates: build_sequence(&spec, n, &pulses)?,
                    seed: derive_seed(ctx.seed, &tag, ((iteration as u64) << 32) | n as u64),
                })
            })
            .collect::<Result<Vec<_>, NPulseError>>()?;
        let pe = ctx.excited(backend, &jobs)?;
        let measured: Vec<(usize, T)> = spec.n_values.iter().copied().zip(pe).collect();
        let fit = fit_rotation_error(&measured, &spec, &ctx.rates, tau)?;
        let eps = fit.epsilon;
        let alpha = fit.alpha_fraction;
        let next = correct_amplitude(amplitude, eps, target)?;
        history.push(CalibrationStep { amplitude, fit });
        if eps.abs() < ctx.tolerance_deg {
            return Ok(CalibrationResult {
                target_deg: target,
                variant,
                epsilon: eps,
                alpha_fraction: alpha,
                amplitude_before: amplitude,
                amplitude_after: next,
                iterations: iteration,
                history,
            });
        }
        amplitude = next;
    }
    Err(NPulseError::NotConverged {
        target: target.as_f64(),
        history: history.iter().map(|s| s.fit.epsilon.as_f64()).collect(),
    })
}

/// Amplitude maximizing p_e after one pulse: a sweep over
/// `guess·(1 ± span)` followed by a least-squares parabola through the
/// points around the peak.
pub fn rabi_calibrate<B: Backend<T> + ?Sized, T: Real>(
    backend: &B,
    ctx: &CalibrationContext<T>,
    guess: T,
    span: T,
    points: usize,
) -> Result<T, NPulseError> {
    if points < 5 || !(span > T::zero() && span < T::one()) || !(guess > T::zero()) {
        return Err(NPulseError::Spec("Rabi sweep needs ≥ 5 points, 0 < span < 1 and a positive guess".into()));
    }
    let amps: Vec<T> = (0..points)
        .map(|i| {
            let f = T::from_usize_lossy(i) / T::from_usize_lossy(points - 1);
            guess * (T::one() - span + T::lit(2.0) * span * f)
        })
        .collect();
    let jobs: Vec<Job<T>> = amps
        .iter()
        .enumerate()
        .map(|(i, &a)| Job { gates: vec![ctx.pulse(T::lit(180.0), a)], seed: derive_seed(ctx.seed, "rabi", i as u64) })
        .collect();
    let pe = ctx.excited(backend, &jobs)?;
    let peak = (0..points).fold(0, |b, i| if pe[i] > pe[b] { i } else { b });
    let half = (points / 6).max(2);
    let lo = peak.saturating_sub(half);
    let hi = (peak + half).min(points - 1);
    // quadratic least squares in u = a − a_peak
    let a0 = amps[peak];
    let mut ata = nalgebra::Matrix3::<T>::zeros();
    let mut atb = nalgebra::Vector3::<T>::zeros();
    for i in lo..=hi {
        let u = (amps[i] - a0) / guess;
        let row = nalgebra::Vector3::new(T::one(), u, u * u);
        ata += row * row.transpose();
        atb += row * pe[i];
    }
    let coef = ata.lu().solve(&atb);
    let vertex = match coef {
        Some(c) if c[2] < T::zero() => a0 - c[1] / (T::lit(2.0) * c[2]) * guess,
        _ => a0,
    };
    Ok(vertex.max(amps[lo]).min(amps[hi]))
}

/// Calibrated (Ã, θ) points with the fitted amplitude rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve<T> {
    pub a_pi: T,
    /// (Ã, θ°) sorted by Ã, including (1, 180°).
    pub points: Vec<(T, T)>,
    pub model: AngleModel<T>,
    pub residuals: Vec<T>,
    pub residual_max: T,
    /// (Ã, θ − 180°·Ã): rotation beyond linear scaling, with (0, 0) prepended.
    pub deviations: Vec<(T, T)>,
    pub calibrations: Vec<CalibrationResult<T>>,
}

impl<T: Real> ResponseCurve<T> {
    /// Gate set using the fitted model, with calibrated amplitudes as exact overrides.
    pub fn gateset(&self, shape: PulseShape<T>) -> GateSet<T> {
        self.calibrations.iter().fold(GateSet::with_model(shape, self.model), |gs, c| {
            gs.with_override(c.target_deg, c.amplitude_after)
        })
    }

    /// Largest |ε| of the first (linear-scaling) pass over all angles.
    pub fn max_linear_epsilon(&self) -> T {
        self.calibrations.iter().fold(T::zero(), |m, c| m.max(c.initial_epsilon().abs()))
    }
}

/// Ordering that calibrates each partner before the complement angle using it.
fn calibration_order<T: Real>(angles: &[T]) -> Result<Vec<(T, SequenceVariant)>, NPulseError> {
    let mut out = Vec::new();
    for &a in angles {
        let v = SequenceVariant::for_angle(a)
            .ok_or_else(|| NPulseError::Spec(format!("{a}° is not 180°, 180°/k or 180° − 180°/k")))?;
        out.push((a, v));
    }
    let rank = |v: &SequenceVariant| match v {
        SequenceVariant::Pi => 0,
        SequenceVariant::PiOverK(2) => 1,
        SequenceVariant::PiOverK(_) => 2,
        SequenceVariant::Complement(_) => 3,
    };
    out.sort_by(|x, y| rank(&x.1).cmp(&rank(&y.1)).then(y.0.partial_cmp(&x.0).expect("finite angles")));
    Ok(out)
}

/// Calibrates every angle (180° first, starting from the Rabi amplitude
/// `a_pi_guess`), then fits the angle model.
pub fn reconstruct_response_curve<B: Backend<T> + ?Sized, T: Real>(
    backend: &B,
    ctx: &CalibrationContext<T>,
    angles: &[T],
    a_pi_guess: T,
) -> Result<ResponseCurve<T>, NPulseError> {
    if !angles.iter().any(|&a| (a - T::lit(180.0)).abs() < T::lit(1e-9)) {
        return Err(NPulseError::Spec("angle list must include 180°".into()));
    }
    let order = calibration_order(angles)?;
    let half_turn = T::lit(180.0);
    let mut a_pi = a_pi_guess;
    let mut init = a_pi_guess / T::lit(2.0);
    let mut done: Vec<CalibrationResult<T>> = Vec::new();
    for (angle, variant) in order {
        let start = if matches!(variant, SequenceVariant::Pi) { a_pi } else { a_pi * angle / half_turn };
        let partner = match variant.partner_deg::<T>() {
            Some(p) => {
                let c = done
                    .iter()
                    .find(|c| (c.target_deg - p).abs() < T::lit(1e-9))
                    .ok_or_else(|| NPulseError::Spec(format!("{angle}° needs {p}° calibrated first")))?;
                Some(Partner { amplitude: c.amplitude_after, alpha_fraction: p / half_turn })
            }
            None => None,
        };
        let r = calibrate_angle(backend, ctx, variant, start, init, partner)?;
        match variant {
            SequenceVariant::Pi => {
                a_pi = r.amplitude_after;
                init = a_pi / T::lit(2.0);
            }
            SequenceVariant::PiOverK(2) => init = r.amplitude_after,
            _ => {}
        }
        done.push(r);
    }
    let mut points: Vec<(T, T)> = done.iter().map(|c| (c.amplitude_after / a_pi, c.target_deg)).collect();
    points.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite amplitudes"));
    let fit = fit_angle_model(&points, a_pi)?;
    let mut deviations = vec![(T::zero(), T::zero())];
    deviations.extend(points.iter().map(|&(x, th)| (x, th - half_turn * x)));
    done.sort_by(|x, y| x.target_deg.partial_cmp(&y.target_deg).expect("finite angles"));
    Ok(ResponseCurve {
        a_pi,
        points,
        model: fit.model,
        residuals: fit.residuals,
        residual_max: fit.residual_max,
        deviations,
        calibrations: done,
    })
}

/// The eleven angles 15° … 180° used for response-curve reconstruction.
pub fn standard_angles<T: Real>() -> Vec<T> {
    [15.0, 22.5, 30.0, 45.0, 60.0, 90.0, 120.0, 135.0, 150.0, 165.0, 180.0].iter().map(|&a| T::lit(a)).collect()
}
