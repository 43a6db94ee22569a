//! Randomized, purity and cross-entropy benchmarking.
//!
//! Sequence generators, the estimators that turn measured populations into
//! per-length curve points, decay fits, and protocol runners written against
//! [`Backend`]. Expectation values use m = p_e − p_g, so the ground state sits
//! at ⟨σz⟩ = −1.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Job};
use crate::clifford::{CliffordTable, GROUP_SIZE};
use crate::driveline::DriveLineError;
use crate::fitting::{
    bootstrap_uncertainty, fit_exp_decay, fit_least_squares, CurveFitProblem, DataPoint, FitError, FitOutcome,
    Pointwise, ResamplePlan,
};
use crate::gateset::GateSet;
use crate::qubit::{probabilities_from_ground, pulse_unitary, z_unitary, U2};
use crate::qutrit::GateSpec;
use crate::readout::{mitigate, renormalize_computational, ConfusionMatrix3, ReadoutError, ShotRecord};
use crate::scalar::{deg_to_rad, Real};
use crate::seed::{derive_seed, StreamRng};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("invalid benchmark input: {0}")]
    Invalid(String),
    #[error("ideal and incoherent distributions coincide at length {0}")]
    Degenerate(usize),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Line(#[from] DriveLineError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
}

/// Probabilities entering logarithms are clamped to [ε, 1 − ε].
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Minimum number of sequences for a variance-based purity estimate.
pub const MIN_PURITY_SEQUENCES: usize = 10;

/// A length enters the XEB purity fit once the ideal per-sequence variance is
/// within this relative distance of the Porter-Thomas value.
pub const PORTER_THOMAS_TOLERANCE: f64 = 0.2;

// ---------------------------------------------------------------- tomography

/// Pre-measurement rotation selecting the Bloch component read out as p_e − p_g.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TomographyAxis {
    Z,
    Y,
    X,
}

impl TomographyAxis {
    pub const ALL: [Self; 3] = [Self::Z, Self::Y, Self::X];

    /// Z: nothing; Y: X(π/2); X: Y(π/2).
    pub fn pulse<T: Real>(self, gateset: &GateSet<T>) -> Result<Option<GateSpec<T>>, DriveLineError> {
        match self {
            Self::Z => Ok(None),
            Self::Y => gateset.x(T::lit(90.0)).map(Some),
            Self::X => gateset.y(T::lit(90.0)).map(Some),
        }
    }

    /// Factor mapping the measured p_e − p_g to the Bloch component.
    ///
    /// X(π/2) carries y onto −z and Y(π/2) carries x onto +z.
    pub fn sign<T: Real>(self) -> T {
        match self {
            Self::Y => -T::one(),
            Self::Z | Self::X => T::one(),
        }
    }
}

/// sx² + sy² + sz².
pub fn estimate_purity<T: Real>(sx: T, sy: T, sz: T) -> T {
    sx * sx + sy * sy + sz * sz
}

// ---------------------------------------------------------------- generators

/// Random Cliffords plus the element returning the ideal state to |g⟩.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbSequence {
    pub cliffords: Vec<usize>,
    pub recovery: usize,
}

impl RbSequence {
    /// Cliffords followed by the recovery element.
    pub fn with_recovery(&self) -> Vec<usize> {
        let mut all = self.cliffords.clone();
        all.push(self.recovery);
        all
    }
}

fn random_cliffords(m: usize, seed: u64) -> Vec<usize> {
    let mut rng = StreamRng::seed_from_u64(seed);
    (0..m).map(|_| rng.random_range(0..GROUP_SIZE)).collect()
}

pub fn generate_rb_sequence<T: Real>(table: &CliffordTable<T>, m: usize, seed: u64) -> RbSequence {
    let cliffords = random_cliffords(m, seed);
    let recovery = table.inverse(table.net(&cliffords));
    RbSequence { cliffords, recovery }
}

/// Random Clifford body for purity benchmarking (no recovery element).
pub fn generate_pb_sequence(m: usize, seed: u64) -> Vec<usize> {
    random_cliffords(m, seed)
}

/// Physical circuits for a purity body, one per tomography axis in
/// [`TomographyAxis::ALL`] order.
pub fn pb_circuits<T: Real>(
    table: &CliffordTable<T>,
    body: &[usize],
    gateset: &GateSet<T>,
) -> Result<[Vec<GateSpec<T>>; 3], DriveLineError> {
    let base = table.expand(body, gateset)?;
    let mut out: [Vec<GateSpec<T>>; 3] = Default::default();
    for (slot, axis) in out.iter_mut().zip(TomographyAxis::ALL) {
        let mut c = base.clone();
        c.extend(axis.pulse(gateset)?);
        *slot = c;
    }
    Ok(out)
}

/// Rotation-angle rule of an XEB cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum XebMode<T> {
    /// Same angle (degrees) every cycle.
    Fixed { angle_deg: T },
    /// Uniform in [0°, 180°] per cycle.
    Random,
}

/// X(θ) followed by a virtual Z(φ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XebCycle<T> {
    pub angle_deg: T,
    pub phase: T,
}

/// `quantum_deg` rounds random angles so the simulator's gate cache stays bounded.
pub fn generate_xeb_sequence<T: Real>(m: usize, mode: XebMode<T>, quantum_deg: T, seed: u64) -> Vec<XebCycle<T>> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let two_pi = T::lit(2.0) * T::PI();
    (0..m)
        .map(|_| {
            let angle_deg = match mode {
                XebMode::Fixed { angle_deg } => angle_deg,
                XebMode::Random => {
                    let raw = T::lit(rng.random::<f64>() * 180.0);
                    if quantum_deg > T::zero() {
                        ((raw / quantum_deg).round() * quantum_deg).min(T::lit(180.0))
                    } else {
                        raw
                    }
                }
            };
            let phase = T::lit(rng.random::<f64>()) * two_pi;
            XebCycle { angle_deg, phase }
        })
        .collect()
}

pub fn xeb_gates<T: Real>(cycles: &[XebCycle<T>], gateset: &GateSet<T>) -> Result<Vec<GateSpec<T>>, DriveLineError> {
    let mut out = Vec::with_capacity(2 * cycles.len());
    for c in cycles {
        out.push(gateset.x(c.angle_deg)?);
        out.push(GateSpec::VirtualZ { phase: c.phase });
    }
    Ok(out)
}

/// Ideal (p_g, p_e) after the cycles, from exact 2×2 products.
pub fn xeb_ideal<T: Real>(cycles: &[XebCycle<T>]) -> [T; 2] {
    let u = cycles.iter().fold(U2::<T>::identity(), |acc, c| {
        z_unitary(c.phase) * pulse_unitary(deg_to_rad(c.angle_deg), T::zero()) * acc
    });
    probabilities_from_ground(&u)
}

// ---------------------------------------------------------------- XEB estimators

fn clamp_probability<T: Real>(r: T) -> T {
    let e = T::lit(PROBABILITY_CLAMP);
    r.max(e).min(T::one() - e)
}

/// −Σ q_i ln r_i summed over outcomes and averaged over sequences; r is
/// clamped before the logarithm.
pub fn cross_entropy<T: Real>(q: &[[T; 2]], r: &[[T; 2]]) -> Result<T, BenchError> {
    if q.len() != r.len() || q.is_empty() {
        return Err(BenchError::Invalid(format!("{} measured vs {} ideal distributions", q.len(), r.len())));
    }
    let terms: Vec<T> = q
        .iter()
        .zip(r)
        .map(|(qk, rk)| -(qk[0] * clamp_probability(rk[0]).ln() + qk[1] * clamp_probability(rk[1]).ln()))
        .collect();
    if terms.iter().any(|t| !t.is_finite()) {
        return Err(BenchError::Invalid("non-finite probability".into()));
    }
    Ok(stats::mean(&terms))
}

fn uniform<T: Real>(n: usize) -> Vec<[T; 2]> {
    vec![[T::lit(0.5), T::lit(0.5)]; n]
}

/// XEB sequence fidelity at one length. `length` only labels the error.
pub fn xeb_fidelity<T: Real>(measured: &[[T; 2]], ideal: &[[T; 2]], length: usize) -> Result<T, BenchError> {
    let s_incoh = cross_entropy(&uniform(ideal.len()), ideal)?;
    let s_ideal = cross_entropy(ideal, ideal)?;
    let den = s_incoh - s_ideal;
    if !(den.abs() >= T::lit(1e-12)) {
        return Err(BenchError::Degenerate(length));
    }
    Ok((s_incoh - cross_entropy(measured, ideal)?) / den)
}

/// Per-sequence contributions whose mean is [`xeb_fidelity`].
fn xeb_fidelity_terms<T: Real>(measured: &[[T; 2]], ideal: &[[T; 2]], length: usize) -> Result<Vec<T>, BenchError> {
    let s_incoh = cross_entropy(&uniform(ideal.len()), ideal)?;
    let s_ideal = cross_entropy(ideal, ideal)?;
    let den = s_incoh - s_ideal;
    if !(den.abs() >= T::lit(1e-12)) {
        return Err(BenchError::Degenerate(length));
    }
    measured
        .iter()
        .zip(ideal)
        .map(|(q, r)| Ok((cross_entropy(&uniform(1), &[*r])? - cross_entropy(&[*q], &[*r])?) / den))
        .collect()
}

/// Porter-Thomas variance for `n` qubits.
pub fn porter_thomas_variance<T: Real>(n_qubits: u32) -> T {
    let d = T::lit(f64::from(2u32.pow(n_qubits)));
    (d - T::one()) / (d * d * (d + T::one()))
}

/// Sample variance of the per-sequence p_e over the Porter-Thomas variance.
pub fn xeb_purity<T: Real>(p_e: &[T]) -> Result<T, BenchError> {
    if p_e.len() < MIN_PURITY_SEQUENCES {
        return Err(BenchError::Invalid(format!(
            "speckle purity needs at least {MIN_PURITY_SEQUENCES} sequences, got {}",
            p_e.len()
        )));
    }
    Ok(stats::sample_variance(p_e) / porter_thomas_variance::<T>(1))
}

/// How the XEB decay base converts to an error per cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XebConvention {
    /// base = 1 − (4ⁿ/(4ⁿ − 1))·(2ⁿ/(2ⁿ − 1))·E; 8/3 for one qubit.
    #[default]
    Standard,
    /// base = 1 − d/(d − 1)·E, E being the depolarizing average infidelity.
    AverageInfidelity,
}

pub fn xeb_factor<T: Real>(n_qubits: u32, convention: XebConvention) -> T {
    let d = T::lit(f64::from(2u32.pow(n_qubits)));
    let dd = d * d;
    match convention {
        XebConvention::Standard => dd / (dd - T::one()) * d / (d - T::one()),
        XebConvention::AverageInfidelity => d / (d - T::one()),
    }
}

// ---------------------------------------------------------------- curves and fits

/// Per-length aggregate of per-sequence values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve<T> {
    pub lengths: Vec<usize>,
    pub means: Vec<T>,
    pub stds: Vec<T>,
    pub n_sequences: Vec<usize>,
}

impl<T: Real> DecayCurve<T> {
    pub fn push(&mut self, length: usize, mean: T, std: T, n: usize) {
        self.lengths.push(length);
        self.means.push(mean);
        self.stds.push(std);
        self.n_sequences.push(n);
    }

    /// Mean and sample standard deviation of each sample set.
    pub fn from_samples(lengths: &[usize], samples: &[Vec<T>]) -> Self {
        let mut c = Self::default();
        for (&m, s) in lengths.iter().zip(samples) {
            let std = if s.len() > 1 { stats::sample_std(s) } else { T::zero() };
            c.push(m, stats::mean(s), std, s.len());
        }
        c
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Unweighted fit points: the fits depend only on lengths and means.
    pub fn points(&self) -> Vec<DataPoint<T>> {
        self.lengths
            .iter()
            .zip(&self.means)
            .map(|(&m, &y)| DataPoint::unweighted(T::from_usize_lossy(m), y))
            .collect()
    }
}

/// Value with fit and (optionally) bootstrap uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub value: T,
    pub sigma_fit: T,
    pub sigma_bootstrap: Option<T>,
}

impl<T: Real> Estimate<T> {
    pub fn new(value: T, sigma_fit: T) -> Self {
        Self { value, sigma_fit, sigma_bootstrap: None }
    }

    /// The larger of the two uncertainties.
    pub fn sigma(&self) -> T {
        self.sigma_bootstrap.map_or(self.sigma_fit, |b| b.max(self.sigma_fit))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayAnalysis<T> {
    pub curve: DecayCurve<T>,
    pub fit: FitOutcome<T>,
    /// Fitted decay base (α, u or the XEB base).
    pub base: Estimate<T>,
    pub derived_error: Estimate<T>,
}

fn fit_base<T: Real>(curve: &DecayCurve<T>, offset: Option<T>) -> Result<(FitOutcome<T>, Estimate<T>), BenchError> {
    let fit = match offset {
        None => fit_exp_decay(curve.points())?,
        Some(b) => fit_fixed_offset(curve, b)?,
    };
    let base = Estimate::new(fit.params[1], fit.std_error(1));
    Ok((fit, base))
}

/// `A·base^m + b` with `b` held; the outcome keeps the three-parameter layout
/// with zero variance for the offset.
fn fit_fixed_offset<T: Real>(curve: &DecayCurve<T>, b: T) -> Result<FitOutcome<T>, FitError> {
    let data = curve.points();
    if data.len() < 2 {
        return Err(FitError::Underdetermined { points: data.len(), params: 2 });
    }
    let xs: Vec<T> = data.iter().map(|d| d.x).collect();
    let ys: Vec<T> = data.iter().map(|d| d.y).collect();
    let g = crate::fitting::exp_decay_guess(&xs, &ys);
    let two = T::lit(2.0);
    let a0 = if ys[0] - b != T::zero() { ys[0] - b } else { g[0] };
    let a0 = a0.max(-two).min(two);
    let model = Pointwise(move |p: &[T], x: T| p[0] * p[1].powf(x) + b);
    let problem =
        CurveFitProblem::new(model, data, vec![a0, g[1]])?.with_bounds(vec![(-two, two), (T::lit(1e-9), T::one())])?;
    let mut out = fit_least_squares(&problem)?;
    out.params.push(b);
    for row in &mut out.covariance {
        row.push(T::zero());
    }
    out.covariance.push(vec![T::zero(); 3]);
    Ok(out)
}

/// Held asymptotes for the sequence (⟨σz⟩ or XEB fidelity) and purity decays;
/// `None` leaves the offset free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecayOffsets<T> {
    pub sequence: Option<T>,
    pub purity: Option<T>,
}

fn check_n_bar<T: Real>(n_bar: T) -> Result<(), BenchError> {
    if n_bar > T::zero() && n_bar.is_finite() {
        Ok(())
    } else {
        Err(BenchError::Invalid(format!("gates per Clifford must be positive, got {n_bar}")))
    }
}

/// Fits ⟨σz⟩(m) = A·α^m + B; E = (1 − α)/(2·N̄).
pub fn fit_rb<T: Real>(curve: &DecayCurve<T>, n_bar: T) -> Result<DecayAnalysis<T>, BenchError> {
    fit_rb_with(curve, n_bar, None)
}

/// [`fit_rb`] with an optionally held offset B.
pub fn fit_rb_with<T: Real>(curve: &DecayCurve<T>, n_bar: T, offset: Option<T>) -> Result<DecayAnalysis<T>, BenchError> {
    check_n_bar(n_bar)?;
    let (fit, base) = fit_base(curve, offset)?;
    let two_n = T::lit(2.0) * n_bar;
    let derived_error = Estimate::new((T::one() - base.value) / two_n, base.sigma_fit / two_n);
    Ok(DecayAnalysis { curve: curve.clone(), fit, base, derived_error })
}

/// Fits ⟨P⟩(m) = A'·u^m + B'; E_inc = (1 − √u)/(2·N̄).
pub fn fit_pb<T: Real>(curve: &DecayCurve<T>, n_bar: T) -> Result<DecayAnalysis<T>, BenchError> {
    fit_pb_with(curve, n_bar, None)
}

/// [`fit_pb`] with an optionally held offset B'.
pub fn fit_pb_with<T: Real>(curve: &DecayCurve<T>, n_bar: T, offset: Option<T>) -> Result<DecayAnalysis<T>, BenchError> {
    check_n_bar(n_bar)?;
    let (fit, base) = fit_base(curve, offset)?;
    let two_n = T::lit(2.0) * n_bar;
    let root = base.value.sqrt();
    let sigma = base.sigma_fit / (T::lit(2.0) * root * two_n);
    let derived_error = Estimate::new((T::one() - root) / two_n, sigma);
    Ok(DecayAnalysis { curve: curve.clone(), fit, base, derived_error })
}

/// Fits F(m) = A·(1 − c·E)^m + B and √P(m) = A'·(1 − c·E_inc)^m + B' with
/// c from [`xeb_factor`]; returns (fidelity analysis, purity analysis).
pub fn fit_xeb<T: Real>(
    fidelity: &DecayCurve<T>,
    sqrt_purity: &DecayCurve<T>,
    n_qubits: u32,
    convention: XebConvention,
) -> Result<(DecayAnalysis<T>, DecayAnalysis<T>), BenchError> {
    fit_xeb_with(fidelity, sqrt_purity, n_qubits, convention, DecayOffsets::default())
}

/// [`fit_xeb`] with optionally held offsets.
pub fn fit_xeb_with<T: Real>(
    fidelity: &DecayCurve<T>,
    sqrt_purity: &DecayCurve<T>,
    n_qubits: u32,
    convention: XebConvention,
    offsets: DecayOffsets<T>,
) -> Result<(DecayAnalysis<T>, DecayAnalysis<T>), BenchError> {
    let c = xeb_factor::<T>(n_qubits, convention);
    let analyse = |curve: &DecayCurve<T>, offset: Option<T>| -> Result<DecayAnalysis<T>, BenchError> {
        let (fit, base) = fit_base(curve, offset)?;
        let derived_error = Estimate::new((T::one() - base.value) / c, base.sigma_fit / c);
        Ok(DecayAnalysis { curve: curve.clone(), fit, base, derived_error })
    };
    Ok((analyse(fidelity, offsets.sequence)?, analyse(sqrt_purity, offsets.purity)?))
}

/// p_f(m) = l/(l+s)·(1 − e^{−(l+s)m}) + p0·e^{−(l+s)m}.
pub fn leakage_model<T: Real>(l: T, s: T, p0: T, m: T) -> T {
    let k = l + s;
    let decay = (-k * m).exp();
    // l·(1 − e^{−km})/k stays finite as k → 0
    let grow = if k.abs() > T::lit(1e-300) {
        let x = k * m;
        let frac = if x.abs() < T::lit(1e-5) { m * (T::one() - x / T::lit(2.0)) } else { (T::one() - decay) / k };
        l * frac
    } else {
        l * m
    };
    grow + p0 * decay
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageFit<T> {
    pub curve: DecayCurve<T>,
    pub fit: FitOutcome<T>,
    /// Leakage per Clifford (or cycle).
    pub l: Estimate<T>,
    /// Return rate per Clifford (or cycle).
    pub s: Estimate<T>,
    pub p0: Estimate<T>,
    /// Leakage per physical gate, l/N̄.
    pub leakage: Estimate<T>,
}

/// Fits the leakage rate equation to per-length mean p_f.
pub fn fit_leakage<T: Real>(curve: &DecayCurve<T>, n_bar: T) -> Result<LeakageFit<T>, BenchError> {
    check_n_bar(n_bar)?;
    let data = curve.points();
    if data.len() < 3 {
        return Err(FitError::Underdetermined { points: data.len(), params: 3 }.into());
    }
    let (first, last) = (data[0], data[data.len() - 1]);
    let span = (last.x - first.x).max(T::one());
    let tiny = T::lit(1e-12);
    let l0 = ((last.y - first.y) / span).max(tiny);
    let asym = last.y.max(tiny);
    let s0 = (l0 * (T::one() / asym - T::one())).max(T::one() / (T::lit(10.0) * last.x.max(T::one())));
    let p00 = first.y.max(T::zero()).min(T::one());
    let model = Pointwise(|p: &[T], m: T| leakage_model(p[0], p[1], p[2], m));
    let problem = CurveFitProblem::new(model, data, vec![l0.min(T::one()), s0.min(T::one()), p00])?.with_bounds(vec![
        (T::zero(), T::one()),
        (T::zero(), T::one()),
        (T::zero(), T::one()),
    ])?;
    let fit = fit_least_squares(&problem)?;
    let (l, s, p0) = (fit.params[0], fit.params[1], fit.params[2]);
    if !(l + s > T::zero()) {
        return Err(BenchError::Invalid(format!("leakage fit has l + s = {} ≤ 0", l + s)));
    }
    let l_est = Estimate::new(l, fit.std_error(0));
    Ok(LeakageFit {
        curve: curve.clone(),
        l: l_est,
        s: Estimate::new(s, fit.std_error(1)),
        p0: Estimate::new(p0, fit.std_error(2)),
        leakage: Estimate::new(l / n_bar, l_est.sigma_fit / n_bar),
        fit,
    })
}

// ---------------------------------------------------------------- results

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Rb,
    Pb,
    XebFixed,
    XebRandom,
}

impl Protocol {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Rb => "rb",
            Self::Pb => "pb",
            Self::XebFixed => "xeb-fixed",
            Self::XebRandom => "xeb-random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAnalysis<T> {
    pub name: String,
    pub analysis: DecayAnalysis<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult<T> {
    pub protocol: Protocol,
    /// Physical pulses per Clifford (1 per XEB cycle) used for normalization.
    pub n_bar: T,
    /// Total error per gate.
    pub e: Estimate<T>,
    pub e_inc: Option<Estimate<T>>,
    pub e_coh: Option<Estimate<T>>,
    pub leakage: Option<LeakageFit<T>>,
    pub analyses: Vec<NamedAnalysis<T>>,
    /// Per-length mean p_f, also when the leakage fit fails.
    pub leakage_curve: DecayCurve<T>,
    /// Lengths dropped from a fit, with the curve they were dropped from.
    pub excluded: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

impl<T: Real> BenchmarkResult<T> {
    pub fn analysis(&self, name: &str) -> Option<&DecayAnalysis<T>> {
        self.analyses.iter().find(|a| a.name == name).map(|a| &a.analysis)
    }
}

fn difference<T: Real>(e: &Estimate<T>, inc: &Estimate<T>, boot: Option<T>) -> Estimate<T> {
    Estimate {
        value: e.value - inc.value,
        sigma_fit: (e.sigma_fit * e.sigma_fit + inc.sigma_fit * inc.sigma_fit).sqrt(),
        sigma_bootstrap: boot,
    }
}

// ---------------------------------------------------------------- runners

/// Settings shared by the runners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub lengths: Vec<usize>,
    pub sequences: usize,
    pub shots: u64,
    pub seed: u64,
    /// Sequence-level bootstrap resamples; 0 disables the bootstrap.
    pub bootstrap_repeats: usize,
}

impl RunSettings {
    fn validate(&self) -> Result<(), BenchError> {
        if self.lengths.len() < 3 {
            return Err(BenchError::Invalid("at least three sequence lengths are needed".into()));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Invalid("sequence lengths must be strictly increasing".into()));
        }
        if self.sequences == 0 || self.shots == 0 {
            return Err(BenchError::Invalid("sequences and shots must be positive".into()));
        }
        if self.lengths.iter().any(|&m| m > u32::MAX as usize) || self.sequences > u32::MAX as usize {
            return Err(BenchError::Invalid("lengths and sequence counts must fit in 32 bits".into()));
        }
        Ok(())
    }
}

/// Stream index of sequence `j` at length `m`; independent of the other lengths.
fn sequence_key(m: usize, j: usize) -> u64 {
    ((m as u64) << 32) | j as u64
}

fn measured<T: Real>(
    record: &ShotRecord,
    confusion: &ConfusionMatrix3<T>,
    warnings: &mut usize,
) -> Result<[T; 3], BenchError> {
    let mit = mitigate(record, confusion)?;
    if mit.warning.is_some() {
        *warnings += 1;
    }
    let sub = renormalize_computational(mit.populations)?;
    Ok([sub.p_g, sub.p_e, sub.p_f])
}

fn select<T: Copy>(samples: &[T], pick: Option<&[usize]>) -> Vec<T> {
    match pick {
        Some(idx) => idx.iter().map(|&i| samples[i]).collect(),
        None => samples.to_vec(),
    }
}

fn resampled_curve<T: Real>(lengths: &[usize], samples: &[Vec<T>], sel: Option<&[Vec<usize>]>) -> DecayCurve<T> {
    let picked: Vec<Vec<T>> =
        samples.iter().enumerate().map(|(i, s)| select(s, sel.map(|v| v[i].as_slice()))).collect();
    DecayCurve::from_samples(lengths, &picked)
}

fn bootstrap_sigma<T: Real, F>(
    plan: &ResamplePlan,
    repeats: usize,
    warnings: &mut Vec<String>,
    label: &str,
    f: F,
) -> Option<T>
where
    F: Fn(&[Vec<usize>]) -> Result<T, BenchError> + Sync,
{
    if repeats < 2 {
        return None;
    }
    match bootstrap_uncertainty(plan, f, repeats) {
        Ok(s) => {
            if s.failed > 0 {
                warnings.push(format!("{label}: {} of {} bootstrap resamples failed", s.failed, s.repeats));
            }
            Some(s.robust_std)
        }
        Err(e) => {
            warnings.push(format!("{label}: bootstrap unavailable ({e})"));
            None
        }
    }
}

fn leakage_or_warn<T: Real>(curve: &DecayCurve<T>, n_bar: T, warnings: &mut Vec<String>) -> Option<LeakageFit<T>> {
    match fit_leakage(curve, n_bar) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("leakage fit failed: {e}"));
            None
        }
    }
}

/// Randomized benchmarking, optionally with purity tomography on the same
/// random bodies (`purity = true` gives the PB protocol).
pub struct RbRun<'a, T: Real> {
    pub table: &'a CliffordTable<T>,
    pub gateset: &'a GateSet<T>,
    pub confusion: &'a ConfusionMatrix3<T>,
    pub settings: &'a RunSettings,
    pub purity: bool,
    /// Pulses per Clifford; defaults to the table average.
    pub n_bar: Option<T>,
    pub offsets: DecayOffsets<T>,
}

const RB_SHOT_TAGS: [&str; 4] = ["rb-shots", "pb-shots-z", "pb-shots-y", "pb-shots-x"];

impl<T: Real> RbRun<'_, T> {
    pub fn run<B: Backend<T> + ?Sized>(&self, backend: &B) -> Result<BenchmarkResult<T>, BenchError> {
        let cfg = self.settings;
        cfg.validate()?;
        let n_bar = self.n_bar.unwrap_or_else(|| self.table.average_pulses());
        check_n_bar(n_bar)?;
        let k = cfg.sequences;
        let mut clip_warnings = 0usize;
        let mut sz: Vec<Vec<T>> = Vec::with_capacity(cfg.lengths.len());
        let mut purity: Vec<Vec<T>> = Vec::with_capacity(cfg.lengths.len());
        let mut pf: Vec<Vec<T>> = Vec::with_capacity(cfg.lengths.len());
        for &m in &cfg.lengths {
            let mut jobs = Vec::with_capacity(k * 4);
            for j in 0..k {
                let key = sequence_key(m, j);
                let seq = generate_rb_sequence(self.table, m, derive_seed(cfg.seed, "rb-sequence", key));
                jobs.push(Job {
                    gates: self.table.expand(&seq.with_recovery(), self.gateset)?,
                    seed: derive_seed(cfg.seed, RB_SHOT_TAGS[0], key),
                });
                if self.purity {
                    for (v, gates) in pb_circuits(self.table, &seq.cliffords, self.gateset)?.into_iter().enumerate() {
                        jobs.push(Job { gates, seed: derive_seed(cfg.seed, RB_SHOT_TAGS[v + 1], key) });
                    }
                }
            }
            let records = backend.submit_batch(&jobs, cfg.shots)?;
            let per = if self.purity { 4 } else { 1 };
            let (mut s_m, mut p_m, mut f_m) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
            for chunk in records.chunks(per) {
                let pops: Vec<[T; 3]> =
                    chunk.iter().map(|r| measured(r, self.confusion, &mut clip_warnings)).collect::<Result<_, _>>()?;
                let expect = |p: &[T; 3]| p[1] - p[0];
                s_m.push(expect(&pops[0]));
                if self.purity {
                    let comps: Vec<T> =
                        TomographyAxis::ALL.iter().zip(&pops[1..]).map(|(a, p)| a.sign::<T>() * expect(p)).collect();
                    p_m.push(estimate_purity(comps[2], comps[1], comps[0]));
                }
                let fs: Vec<T> = pops.iter().map(|p| p[2]).collect();
                f_m.push(stats::mean(&fs));
            }
            sz.push(s_m);
            purity.push(p_m);
            pf.push(f_m);
        }

        let lengths = &cfg.lengths;
        let mut warnings = Vec::new();
        if clip_warnings > 0 {
            warnings.push(format!("readout mitigation clipped > 5% probability in {clip_warnings} records"));
        }
        let off = self.offsets;
        let rb = fit_rb_with(&DecayCurve::from_samples(lengths, &sz), n_bar, off.sequence)?;
        let plan = ResamplePlan { group_sizes: vec![k; lengths.len()], seed: derive_seed(cfg.seed, "rb-bootstrap", 0) };
        let e_of = |sel: &[Vec<usize>]| fit_rb_with(&resampled_curve(lengths, &sz, Some(sel)), n_bar, off.sequence).map(|a| a.derived_error.value);
        let mut e = rb.derived_error;
        e.sigma_bootstrap = bootstrap_sigma(&plan, cfg.bootstrap_repeats, &mut warnings, "E", e_of);
        let mut analyses = vec![NamedAnalysis { name: "rb".into(), analysis: rb }];

        let (mut e_inc, mut e_coh) = (None, None);
        if self.purity {
            let pb = fit_pb_with(&DecayCurve::from_samples(lengths, &purity), n_bar, off.purity)?;
            let inc_of = |sel: &[Vec<usize>]| {
                fit_pb_with(&resampled_curve(lengths, &purity, Some(sel)), n_bar, off.purity).map(|a| a.derived_error.value)
            };
            let coh_of = |sel: &[Vec<usize>]| Ok::<T, BenchError>(e_of(sel)? - inc_of(sel)?);
            let mut inc = pb.derived_error;
            inc.sigma_bootstrap = bootstrap_sigma(&plan, cfg.bootstrap_repeats, &mut warnings, "E_inc", inc_of);
            let boot = bootstrap_sigma(&plan, cfg.bootstrap_repeats, &mut warnings, "E_coh", coh_of);
            e_coh = Some(difference(&e, &inc, boot));
            e_inc = Some(inc);
            analyses.push(NamedAnalysis { name: "pb-purity".into(), analysis: pb });
        }
        let leakage_curve = DecayCurve::from_samples(lengths, &pf);
        let leakage = leakage_or_warn(&leakage_curve, n_bar, &mut warnings);
        Ok(BenchmarkResult {
            protocol: if self.purity { Protocol::Pb } else { Protocol::Rb },
            n_bar,
            e,
            e_inc,
            e_coh,
            leakage,
            analyses,
            leakage_curve,
            excluded: Vec::new(),
            warnings,
        })
    }
}

/// Cross-entropy benchmarking with [X(θ), Z(φ)] cycles.
pub struct XebRun<'a, T: Real> {
    pub gateset: &'a GateSet<T>,
    pub confusion: &'a ConfusionMatrix3<T>,
    pub settings: &'a RunSettings,
    pub mode: XebMode<T>,
    /// Random angles are rounded to this many degrees.
    pub angle_quantum_deg: T,
    pub convention: XebConvention,
    pub offsets: DecayOffsets<T>,
}

struct XebData<T> {
    measured: Vec<Vec<[T; 2]>>,
    ideal: Vec<Vec<[T; 2]>>,
}

impl<T: Real> XebData<T> {
    fn fidelity_curve(
        &self,
        lengths: &[usize],
        sel: Option<&[Vec<usize>]>,
        excluded: &mut Vec<usize>,
    ) -> Result<DecayCurve<T>, BenchError> {
        let mut curve = DecayCurve::default();
        for (i, &m) in lengths.iter().enumerate() {
            let pick = sel.map(|v| v[i].as_slice());
            let meas = select(&self.measured[i], pick);
            let ideal = select(&self.ideal[i], pick);
            match xeb_fidelity_terms(&meas, &ideal, m) {
                Ok(terms) => {
                    let std = if terms.len() > 1 { stats::sample_std(&terms) } else { T::zero() };
                    curve.push(m, stats::mean(&terms), std, terms.len());
                }
                Err(BenchError::Degenerate(_)) => excluded.push(m),
                Err(e) => return Err(e),
            }
        }
        Ok(curve)
    }

    fn purity_curve(&self, lengths: &[usize], use_length: &[bool], sel: Option<&[Vec<usize>]>) -> Result<DecayCurve<T>, BenchError> {
        let mut curve = DecayCurve::default();
        for (i, &m) in lengths.iter().enumerate() {
            if !use_length[i] {
                continue;
            }
            let pe: Vec<T> = select(&self.measured[i], sel.map(|v| v[i].as_slice())).iter().map(|p| p[1]).collect();
            let p = xeb_purity(&pe)?.max(T::zero());
            // spread of √P from the variance of the sample variance
            let n = T::from_usize_lossy(pe.len());
            let mu = stats::mean(&pe);
            let m4 = stats::mean(&pe.iter().map(|&x| (x - mu).powi(4)).collect::<Vec<_>>());
            let s2 = stats::sample_variance(&pe);
            let var_s2 = ((m4 - s2 * s2 * (n - T::lit(3.0)) / (n - T::one())) / n).max(T::zero());
            let pt = porter_thomas_variance::<T>(1);
            let root = p.sqrt();
            let se = if root > T::zero() { var_s2.sqrt() / pt / (T::lit(2.0) * root) } else { T::zero() };
            curve.push(m, root, se * n.sqrt(), pe.len());
        }
        Ok(curve)
    }
}

impl<T: Real> XebRun<'_, T> {
    pub fn run<B: Backend<T> + ?Sized>(&self, backend: &B) -> Result<BenchmarkResult<T>, BenchError> {
        let cfg = self.settings;
        cfg.validate()?;
        let k = cfg.sequences;
        let protocol = match self.mode {
            XebMode::Fixed { .. } => Protocol::XebFixed,
            XebMode::Random => Protocol::XebRandom,
        };
        let tag = protocol.tag();
        let seq_tag = format!("{tag}-sequence");
        let shot_tag = format!("{tag}-shots");
        let mut clip_warnings = 0usize;
        let mut data = XebData { measured: Vec::new(), ideal: Vec::new() };
        let mut pf: Vec<Vec<T>> = Vec::new();
        let mut use_for_purity = Vec::new();
        for &m in &cfg.lengths {
            let mut jobs = Vec::with_capacity(k);
            let mut ideal = Vec::with_capacity(k);
            for j in 0..k {
                let key = sequence_key(m, j);
                let cycles =
                    generate_xeb_sequence(m, self.mode, self.angle_quantum_deg, derive_seed(cfg.seed, &seq_tag, key));
                ideal.push(xeb_ideal(&cycles));
                jobs.push(Job { gates: xeb_gates(&cycles, self.gateset)?, seed: derive_seed(cfg.seed, &shot_tag, key) });
            }
            let records = backend.submit_batch(&jobs, cfg.shots)?;
            let mut meas = Vec::with_capacity(k);
            let mut f_m = Vec::with_capacity(k);
            for r in &records {
                let p = measured(r, self.confusion, &mut clip_warnings)?;
                meas.push([p[0], p[1]]);
                f_m.push(p[2]);
            }
            let ideal_pe: Vec<T> = ideal.iter().map(|p| p[1]).collect();
            let ideal_var = if k > 1 { stats::sample_variance(&ideal_pe) } else { T::zero() };
            let pt = porter_thomas_variance::<T>(1);
            use_for_purity.push(k >= MIN_PURITY_SEQUENCES && ((ideal_var - pt) / pt).abs() <= T::lit(PORTER_THOMAS_TOLERANCE));
            data.measured.push(meas);
            data.ideal.push(ideal);
            pf.push(f_m);
        }

        let lengths = &cfg.lengths;
        let mut warnings = Vec::new();
        if clip_warnings > 0 {
            warnings.push(format!("readout mitigation clipped > 5% probability in {clip_warnings} records"));
        }
        let mut excluded_f = Vec::new();
        let f_curve = data.fidelity_curve(lengths, None, &mut excluded_f)?;
        let p_curve = data.purity_curve(lengths, &use_for_purity, None)?;
        let mut excluded: Vec<(String, usize)> = excluded_f.iter().map(|&m| ("xeb-fidelity".to_string(), m)).collect();
        excluded.extend(
            lengths.iter().zip(&use_for_purity).filter(|(_, &u)| !u).map(|(&m, _)| ("xeb-sqrt-purity".to_string(), m)),
        );
        let (fa, pa) = fit_xeb_with(&f_curve, &p_curve, 1, self.convention, self.offsets)?;

        let plan =
            ResamplePlan { group_sizes: vec![k; lengths.len()], seed: derive_seed(cfg.seed, &format!("{tag}-bootstrap"), 0) };
        let c = xeb_factor::<T>(1, self.convention);
        let to_error = |curve: &DecayCurve<T>, offset: Option<T>| -> Result<T, BenchError> {
            let (_, base) = fit_base(curve, offset)?;
            Ok((T::one() - base.value) / c)
        };
        let e_of = |sel: &[Vec<usize>]| to_error(&data.fidelity_curve(lengths, Some(sel), &mut Vec::new())?, self.offsets.sequence);
        let inc_of = |sel: &[Vec<usize>]| to_error(&data.purity_curve(lengths, &use_for_purity, Some(sel))?, self.offsets.purity);
        let coh_of = |sel: &[Vec<usize>]| Ok::<T, BenchError>(e_of(sel)? - inc_of(sel)?);
        let mut e = fa.derived_error;
        let mut inc = pa.derived_error;
        e.sigma_bootstrap = bootstrap_sigma(&plan, cfg.bootstrap_repeats, &mut warnings, "E", e_of);
        inc.sigma_bootstrap = bootstrap_sigma(&plan, cfg.bootstrap_repeats, &mut warnings, "E_inc", inc_of);
        let boot = bootstrap_sigma(&plan, cfg.bootstrap_repeats, &mut warnings, "E_coh", coh_of);
        let e_coh = difference(&e, &inc, boot);

        let n_bar = T::one();
        let leakage_curve = DecayCurve::from_samples(lengths, &pf);
        let leakage = leakage_or_warn(&leakage_curve, n_bar, &mut warnings);
        Ok(BenchmarkResult {
            protocol,
            n_bar,
            e,
            e_inc: Some(inc),
            e_coh: Some(e_coh),
            leakage,
            analyses: vec![
                NamedAnalysis { name: "xeb-fidelity".into(), analysis: fa },
                NamedAnalysis { name: "xeb-sqrt-purity".into(), analysis: pa },
            ],
            leakage_curve,
            excluded,
            warnings,
        })
    }
}

/// Lengths 1, 2, 4, … up to and including `max` (which is appended if not a power of two).
pub fn log2_lengths(max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut m = 1usize;
    while m <= max {
        out.push(m);
        m = m.saturating_mul(2);
    }
    if out.last() != Some(&max) && max > 0 {
        out.push(max);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purity_examples() {
        assert_eq!(estimate_purity(1.0_f64, 0.0, 0.0), 1.0);
        assert_eq!(estimate_purity(0.0_f64, 0.0, 0.0), 0.0);
        assert!((estimate_purity(0.6_f64, 0.0, 0.8) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((cross_entropy(&[[0.5, 0.5]], &[[0.5, 0.5]]).unwrap() - ln2).abs() < 1e-15);
        assert!((cross_entropy(&[[1.0, 0.0]], &[[0.5, 0.5]]).unwrap() - ln2).abs() < 1e-15);
        let v = cross_entropy(&[[1.0_f64, 0.0]], &[[1.0 - 1e-12, 1e-12]]).unwrap();
        assert!((v - 1e-12).abs() < 1e-15);
        assert!(cross_entropy::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn xeb_fidelity_linear_in_measurement() {
        let ideal = vec![[0.9_f64, 0.1], [0.2, 0.8], [0.65, 0.35]];
        let half: Vec<[f64; 2]> = ideal.iter().map(|p| [0.5 * p[0] + 0.25, 0.5 * p[1] + 0.25]).collect();
        assert!((xeb_fidelity(&ideal, &ideal, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(xeb_fidelity(&uniform(3), &ideal, 1).unwrap().abs() < 1e-12);
        assert!((xeb_fidelity(&half, &ideal, 1).unwrap() - 0.5).abs() < 1e-12);
        let flat = uniform::<f64>(3);
        assert_eq!(xeb_fidelity(&ideal, &flat, 7), Err(BenchError::Degenerate(7)));
    }

    #[test]
    fn porter_thomas_and_factor() {
        assert!((porter_thomas_variance::<f64>(1) - 1.0 / 12.0).abs() < 1e-15);
        assert!((xeb_factor::<f64>(1, XebConvention::Standard) - 8.0 / 3.0).abs() < 1e-15);
        assert_eq!(xeb_factor::<f64>(1, XebConvention::AverageInfidelity), 2.0);
        assert!((1.0 - xeb_factor::<f64>(1, XebConvention::Standard) * 6.3e-4 - 0.99832).abs() < 1e-12);
    }

    #[test]
    fn xeb_purity_examples() {
        assert_eq!(xeb_purity(&[0.5_f64; 12]).unwrap(), 0.0);
        assert!(xeb_purity(&[0.5_f64; 9]).is_err());
    }

    #[test]
    fn rb_substitution() {
        let curve = DecayCurve {
            lengths: vec![1, 10, 100, 1000],
            means: [1usize, 10, 100, 1000].iter().map(|&m| -0.45 * 0.999_f64.powi(m as i32) + 0.52 - 1.0).collect(),
            stds: vec![0.0; 4],
            n_sequences: vec![1; 4],
        };
        let a = fit_rb(&curve, 1.125).unwrap();
        assert!((a.base.value - 0.999).abs() < 1e-9);
        assert!((a.derived_error.value - 4.444e-4).abs() < 1e-6);
    }

    #[test]
    fn pb_matches_rb_for_squared_base() {
        let lengths = [1usize, 8, 64, 512];
        let curve = |b: f64| DecayCurve {
            lengths: lengths.to_vec(),
            means: lengths.iter().map(|&m| 0.9 * b.powi(m as i32) + 0.05).collect(),
            stds: vec![0.0; 4],
            n_sequences: vec![1; 4],
        };
        let alpha = 0.998;
        let e = fit_rb(&curve(alpha), 1.0).unwrap().derived_error.value;
        let inc = fit_pb(&curve(alpha * alpha), 1.0).unwrap().derived_error.value;
        assert!((e - inc).abs() < 1e-9);
    }

    #[test]
    fn leakage_model_limits() {
        let (l, s, p0) = (1e-4_f64, 2e-3, 0.01);
        assert_eq!(leakage_model(l, s, p0, 0.0), p0);
        assert!((leakage_model(l, s, p0, 1e7) - l / (l + s)).abs() < 1e-15);
        assert!((leakage_model(1e-5_f64, 0.0, 0.0, 100.0) - (-(-1e-3_f64).exp_m1()) ).abs() < 1e-15);
        assert_eq!(leakage_model(1e-5_f64, -1e-5, 0.0, 100.0), 1e-3);
    }

    #[test]
    fn rb_recovery_returns_to_identity() {
        let table = CliffordTable::<f64>::new();
        assert_eq!(generate_rb_sequence(&table, 0, 3).recovery, 0);
        for m in 0..=50 {
            let seq = generate_rb_sequence(&table, m, m as u64);
            assert_eq!(table.net(&seq.with_recovery()), 0);
            assert_eq!(seq, generate_rb_sequence(&table, m, m as u64));
        }
    }

    #[test]
    fn xeb_cycles_are_one_pulse_each() {
        let cycles = generate_xeb_sequence(17, XebMode::Random, 0.01_f64, 5);
        assert_eq!(cycles, generate_xeb_sequence(17, XebMode::Random, 0.01, 5));
        let gs = GateSet::linear(crate::qutrit::PulseShape::new(15e-9, 0.0), 240.0);
        let gates = xeb_gates(&cycles, &gs).unwrap();
        assert_eq!(gates.iter().filter(|g| g.is_physical()).count(), 17);
        for c in &cycles {
            let steps = c.angle_deg / 0.01;
            assert!((steps - steps.round()).abs() < 1e-6 && (0.0..=180.0).contains(&c.angle_deg));
        }
    }

    #[test]
    fn log_lengths() {
        assert_eq!(log2_lengths(8), vec![1, 2, 4, 8]);
        assert_eq!(log2_lengths(10), vec![1, 2, 4, 8, 10]);
    }
}
