//! Three-level transmon simulator standing in for the physical device.
//!
//! The rotating-frame Hamiltonian is
//!
//! H = α|f⟩⟨f| + ½[ε(t)(|e⟩⟨g| + √2|f⟩⟨e|) + h.c.],  ε = κ·(I + iQ)·e^{iφ},
//!
//! with κ the Rabi rate per delivered millivolt. Relaxation runs g←e at Γ1 and
//! e←f at `ef_relaxation_scale`·Γ1; dephasing uses √(2Γφ)·diag(0, 1, √s) so the
//! g–e coherence decays at Γφ and the g–f coherence at s·Γφ.
//!
//! Density matrices are vectorized column-major (index i + 3j holds ρ_ij) so
//! that vec(AρB) = (Bᵀ ⊗ A)·vec(ρ).

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Complex, SMatrix, SVector};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloch::{BlochError, DecayRates};
use crate::driveline::{DriveLineError, DriveLineTransfer};
use crate::readout::{sample_readout, ConfusionMatrix3, ReadoutError, ShotRecord};
use crate::scalar::Real;
use crate::seed::StreamRng;

pub type C<T> = Complex<T>;
pub type Op3<T> = SMatrix<C<T>, 3, 3>;
pub type Super9<T> = SMatrix<C<T>, 9, 9>;
pub type Vec9<T> = SVector<C<T>, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid pulse: {0}")]
    Pulse(String),
    #[error("density matrix check failed: {0}")]
    State(String),
    #[error(transparent)]
    Rates(#[from] BlochError),
    #[error(transparent)]
    Line(#[from] DriveLineError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
}

fn c<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

fn cis<T: Real>(phase: T) -> C<T> {
    Complex::new(phase.cos(), phase.sin())
}

/// Published device parameters used as simulation defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevicePreset {
    pub name: &'static str,
    /// α/2π (Hz)
    pub anharmonicity_hz: f64,
    pub t1: f64,
    pub t2_star: f64,
    pub t2_echo: f64,
    /// π-pulse amplitude (mV)
    pub a_pi_mv: f64,
    pub readout_error: f64,
}

pub const DEVICE_A: DevicePreset = DevicePreset {
    name: "A",
    anharmonicity_hz: -153e6,
    t1: 12.3e-6,
    t2_star: 9.86e-6,
    t2_echo: 14.7e-6,
    a_pi_mv: 730.0,
    readout_error: 0.03,
};

pub const DEVICE_B: DevicePreset = DevicePreset {
    name: "B",
    anharmonicity_hz: -183e6,
    t1: 60.9e-6,
    t2_star: 55.3e-6,
    t2_echo: 67.3e-6,
    a_pi_mv: 235.0,
    readout_error: 0.04,
};

impl DevicePreset {
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "A" | "a" => Some(DEVICE_A),
            "B" | "b" => Some(DEVICE_B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct QutritModel<T: Real> {
    /// Angular anharmonicity (rad/s), negative for a transmon.
    pub anharmonicity: T,
    pub t1: T,
    pub t2: T,
    pub ef_relaxation_scale: T,
    pub f_dephasing_scale: T,
    /// Rabi rate (rad/s) per delivered millivolt of envelope.
    pub rabi_rate_per_mv: T,
    pub confusion: ConfusionMatrix3<T>,
}

impl<T: Real> QutritModel<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.anharmonicity == T::zero() || !self.anharmonicity.is_finite() {
            return Err(SimError::Model("anharmonicity must be non-zero".into()));
        }
        if !(self.rabi_rate_per_mv > T::zero()) {
            return Err(SimError::Model("drive constant must be positive".into()));
        }
        if !(self.ef_relaxation_scale >= T::zero()) || !(self.f_dephasing_scale >= T::zero()) {
            return Err(SimError::Model("level scaling factors must be non-negative".into()));
        }
        if self.t1.is_finite() || self.t2.is_finite() {
            DecayRates::from_times(self.t1, self.t2)?;
        }
        Ok(())
    }

    /// Γ1, Γφ; infinite coherence times give zero rates.
    pub fn rates(&self) -> DecayRates<T> {
        let g1 = if self.t1.is_finite() { T::one() / self.t1 } else { T::zero() };
        let g2 = if self.t2.is_finite() { T::one() / self.t2 } else { T::zero() };
        DecayRates { gamma1: g1, gamma_phi: (g2 - g1 / T::lit(2.0)).max(T::zero()) }
    }

    /// Preset with the chosen T2, drive constant set so that a `shape` pulse of
    /// the preset π amplitude passed through `line` is a π rotation.
    pub fn from_preset(
        preset: &DevicePreset,
        t2: T,
        line: &DriveLineTransfer<T>,
        shape: &PulseShape<T>,
    ) -> Result<Self, SimError> {
        let anharmonicity = T::lit(2.0) * T::PI() * T::lit(preset.anharmonicity_hz);
        let mut model = Self {
            anharmonicity,
            t1: T::lit(preset.t1),
            t2,
            ef_relaxation_scale: T::lit(2.0),
            f_dephasing_scale: T::lit(4.0),
            rabi_rate_per_mv: T::one(),
            confusion: ConfusionMatrix3::symmetric(T::lit(preset.readout_error))?,
        };
        model.rabi_rate_per_mv = rabi_rate_for_pi(T::lit(preset.a_pi_mv), line, shape)?;
        model.validate()?;
        Ok(model)
    }

    /// Same model without decoherence.
    pub fn coherent(&self) -> Self {
        Self { t1: T::lit(f64::INFINITY), t2: T::lit(f64::INFINITY), ..*self }
    }

    pub fn with_ideal_readout(&self) -> Self {
        Self { confusion: ConfusionMatrix3::identity(), ..*self }
    }

    /// DRAG quadrature weight −1/(2α).
    pub fn default_drag(&self) -> T {
        -T::one() / (T::lit(2.0) * self.anharmonicity)
    }
}

/// κ such that the envelope area at amplitude `a_pi` through `line` gives π.
pub fn rabi_rate_for_pi<T: Real>(a_pi: T, line: &DriveLineTransfer<T>, shape: &PulseShape<T>) -> Result<T, SimError> {
    let unit = shape.envelope(T::one(), T::zero()).with_drag(T::zero());
    let area = synth_drag_envelope(&unit)?
        .iter()
        .fold(T::zero(), |acc, s| acc + s.re)
        * shape.sample_period;
    let delivered = line.apply(a_pi)?;
    if !(area > T::zero()) || !(delivered > T::zero()) {
        return Err(SimError::Pulse("π pulse has no area".into()));
    }
    Ok(T::PI() / (delivered * area))
}

/// Pulse timing shared by every gate of a gate set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape<T> {
    pub duration: T,
    /// Envelope spans ±truncation·σ.
    pub truncation: T,
    pub sample_period: T,
    pub drag_coefficient: T,
}

impl<T: Real> PulseShape<T> {
    pub fn new(duration: T, drag_coefficient: T) -> Self {
        Self {
            duration,
            truncation: T::lit(2.5),
            sample_period: T::lit(0.5e-9),
            drag_coefficient,
        }
    }

    pub fn sigma(&self) -> T {
        self.duration / (T::lit(2.0) * self.truncation)
    }

    pub fn envelope(&self, amplitude: T, phase: T) -> PulseEnvelope<T> {
        PulseEnvelope {
            duration: self.duration,
            sigma: self.sigma(),
            truncation: self.truncation,
            drag_coefficient: self.drag_coefficient,
            amplitude,
            phase,
            sample_period: self.sample_period,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEnvelope<T> {
    pub duration: T,
    pub sigma: T,
    pub truncation: T,
    /// Weight (s) of the in-phase derivative on the quadrature.
    pub drag_coefficient: T,
    /// Peak in-phase amplitude (mV).
    pub amplitude: T,
    pub phase: T,
    pub sample_period: T,
}

impl<T: Real> PulseEnvelope<T> {
    pub fn with_drag(self, drag_coefficient: T) -> Self {
        Self { drag_coefficient, ..self }
    }

    pub fn n_samples(&self) -> Result<usize, SimError> {
        if !(self.sample_period > T::zero()) {
            return Err(SimError::Pulse("sample period must be positive".into()));
        }
        if !(self.duration >= T::zero()) {
            return Err(SimError::Pulse("duration must be non-negative".into()));
        }
        let n = (self.duration / self.sample_period).round();
        if self.duration > T::zero() && n < T::one() {
            return Err(SimError::Pulse("duration shorter than one sample".into()));
        }
        Ok(n.as_f64() as usize)
    }

    pub fn validate(&self) -> Result<usize, SimError> {
        let n = self.n_samples()?;
        if n == 0 {
            return Ok(0);
        }
        if !(self.sigma > T::zero()) || !(self.truncation > T::zero()) {
            return Err(SimError::Pulse("σ and truncation must be positive".into()));
        }
        let implied = T::lit(2.0) * self.truncation * self.sigma;
        if (implied - self.duration).abs() > T::lit(1e-9) * self.duration {
            return Err(SimError::Pulse(format!(
                "duration {} differs from 2·truncation·σ = {}",
                self.duration, implied
            )));
        }
        Ok(n)
    }
}

/// Sampled complex envelope (mV), one value per sample period.
pub fn synth_drag_envelope<T: Real>(spec: &PulseEnvelope<T>) -> Result<Vec<C<T>>, SimError> {
    let n = spec.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let dt = spec.sample_period;
    let center = T::from_usize_lossy(n) * dt / T::lit(2.0);
    let two_var = T::lit(2.0) * spec.sigma * spec.sigma;
    let edge = (-spec.truncation * spec.truncation / T::lit(2.0)).exp();
    let times: Vec<T> = (0..n).map(|k| (T::from_usize_lossy(k) + T::lit(0.5)) * dt - center).collect();
    let gauss: Vec<T> = times.iter().map(|&t| (-t * t / two_var).exp()).collect();
    let peak = gauss.iter().fold(T::zero(), |m, &g| m.max(g));
    let scale = spec.amplitude / (peak - edge);
    let rot = cis(spec.phase);
    Ok(times
        .iter()
        .zip(&gauss)
        .map(|(&t, &g)| {
            let i = scale * (g - edge);
            let di = -scale * g * t / (spec.sigma * spec.sigma);
            Complex::new(i, spec.drag_coefficient * di) * rot
        })
        .collect())
}

/// Rotating-frame 3×3 density matrix over {g, e, f}.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix3<T: Real>(pub Op3<T>);

impl<T: Real> DensityMatrix3<T> {
    pub fn basis(level: usize) -> Self {
        let mut m = Op3::zeros();
        m[(level, level)] = c(T::one());
        Self(m)
    }

    pub fn ground() -> Self {
        Self::basis(0)
    }

    pub fn populations(&self) -> [T; 3] {
        [self.0[(0, 0)].re, self.0[(1, 1)].re, self.0[(2, 2)].re]
    }

    pub fn to_vec9(&self) -> Vec9<T> {
        Vec9::from_fn(|k, _| self.0[(k % 3, k / 3)])
    }

    pub fn from_vec9(v: &Vec9<T>) -> Self {
        Self(Op3::from_fn(|i, j| v[i + 3 * j]))
    }

    /// Hermiticity 1e-10, unit trace 1e-9, eigenvalues ≥ −1e-9 (relaxed for f32).
    pub fn check(&self) -> Result<(), SimError> {
        let floor = T::eps() * T::lit(1e3);
        let herm_tol = T::lit(1e-10).max(floor);
        let tr_tol = T::lit(1e-9).max(floor);
        let m = &self.0;
        let herm = (m - m.adjoint()).iter().fold(T::zero(), |a, z| a.max(z.norm_sqr().sqrt()));
        if herm > herm_tol {
            return Err(SimError::State(format!("not Hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr.re - T::one()).abs() > tr_tol || tr.im.abs() > tr_tol {
            return Err(SimError::State(format!("trace {} + {}i", tr.re, tr.im)));
        }
        let h = (m + m.adjoint()) * c(T::lit(0.5));
        let min = h.symmetric_eigenvalues().iter().fold(T::lit(f64::INFINITY), |a, &v| a.min(v));
        if min < -tr_tol {
            return Err(SimError::State(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }
}

fn kron<T: Real>(a: &Op3<T>, b: &Op3<T>) -> Super9<T> {
    Super9::from_fn(|r, s| a[(r / 3, s / 3)] * b[(r % 3, s % 3)])
}

fn ladder<T: Real>() -> Op3<T> {
    // |e⟩⟨g| + √2|f⟩⟨e|
    let mut m = Op3::zeros();
    m[(1, 0)] = c(T::one());
    m[(2, 1)] = c(T::lit(2.0).sqrt());
    m
}

/// Drive-independent part of the Liouvillian and the pieces needed to add a drive.
struct Generator<T: Real> {
    static_part: Super9<T>,
    raise_left: Super9<T>,
    raise_right: Super9<T>,
}

impl<T: Real> Generator<T> {
    fn new(model: &QutritModel<T>) -> Self {
        let id = Op3::<T>::identity();
        let mut h0 = Op3::zeros();
        h0[(2, 2)] = c(model.anharmonicity);
        let minus_i = Complex::new(T::zero(), -T::one());
        let mut l = (kron(&id, &h0) - kron(&h0.transpose(), &id)) * minus_i;

        let rates = model.rates();
        let mut collapses: Vec<Op3<T>> = Vec::new();
        if rates.gamma1 > T::zero() {
            let mut a = Op3::zeros();
            a[(0, 1)] = c(rates.gamma1.sqrt());
            collapses.push(a);
            let mut b = Op3::zeros();
            b[(1, 2)] = c((model.ef_relaxation_scale * rates.gamma1).sqrt());
            collapses.push(b);
        }
        if rates.gamma_phi > T::zero() {
            let g = (T::lit(2.0) * rates.gamma_phi).sqrt();
            let mut n = Op3::zeros();
            n[(1, 1)] = c(g);
            n[(2, 2)] = c(g * model.f_dephasing_scale.sqrt());
            collapses.push(n);
        }
        let half = c(T::lit(0.5));
        for op in &collapses {
            let ctc = op.adjoint() * op;
            l += kron(&op.conjugate(), op) - (kron(&id, &ctc) + kron(&ctc.transpose(), &id)) * half;
        }
        let raise = ladder::<T>();
        Self {
            static_part: l,
            raise_left: kron(&id, &raise),
            raise_right: kron(&raise.transpose(), &id),
        }
    }

    /// L for a constant complex drive ε (rad/s).
    fn with_drive(&self, eps: C<T>) -> Super9<T> {
        if eps.re == T::zero() && eps.im == T::zero() {
            return self.static_part;
        }
        // H_d = ½(ε·R + ε*·R†); −i(I⊗H − Hᵀ⊗I)
        let half = c(T::lit(0.5));
        let minus_i = Complex::new(T::zero(), -T::one());
        let left = self.raise_left * (eps * half) + self.raise_left.adjoint() * (eps.conj() * half);
        let right = self.raise_right * (eps * half) + self.raise_right.adjoint() * (eps.conj() * half);
        self.static_part + (left - right) * minus_i
    }
}

/// Propagator for a zero-order-hold drive (rad/s per sample) with `substeps`
/// exact sub-propagators per sample.
fn drive_propagator<T: Real>(
    generator: &Generator<T>,
    drive: &[C<T>],
    sample_period: T,
    substeps: usize,
) -> Super9<T> {
    let mut total = Super9::identity();
    let h = c(sample_period / T::from_usize_lossy(substeps.max(1)));
    let mut last: Option<(C<T>, Super9<T>)> = None;
    for &eps in drive {
        let step = match last {
            Some((e, p)) if e == eps => p,
            _ => (generator.with_drive(eps) * h).exp(),
        };
        last = Some((eps, step));
        for _ in 0..substeps.max(1) {
            total = step * total;
        }
    }
    total
}

/// Integrates the Lindblad equation across a sampled drive (rad/s).
pub fn evolve<T: Real>(
    rho0: &DensityMatrix3<T>,
    drive: &[C<T>],
    sample_period: T,
    model: &QutritModel<T>,
    substeps: usize,
) -> Result<DensityMatrix3<T>, SimError> {
    rho0.check()?;
    let p = drive_propagator(&Generator::new(model), drive, sample_period, substeps);
    let out = DensityMatrix3::from_vec9(&(p * rho0.to_vec9()));
    out.check()?;
    Ok(out)
}

/// Free evolution for time `t`.
pub fn idle_propagator<T: Real>(model: &QutritModel<T>, t: T) -> Super9<T> {
    (Generator::new(model).static_part * c(t)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseGate<T> {
    /// Nominal rotation (degrees); a label, the physics uses `amplitude`.
    pub angle: T,
    /// Rotation axis phase (rad).
    pub phase: T,
    /// Programmed peak amplitude (mV).
    pub amplitude: T,
    pub shape: PulseShape<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "kebab-case")]
pub enum GateSpec<T> {
    Pulse(PulseGate<T>),
    /// Frame update diag(1, e^{iφ}, e^{2iφ}); no duration.
    VirtualZ { phase: T },
    Idle { duration: T },
}

impl<T: Real> GateSpec<T> {
    pub fn is_physical(&self) -> bool {
        matches!(self, GateSpec::Pulse(_))
    }

    pub fn key(&self) -> GateKey {
        let b = |x: T| x.as_f64().to_bits();
        match self {
            GateSpec::Pulse(p) => GateKey::Pulse([
                b(p.angle),
                b(p.phase),
                b(p.amplitude),
                b(p.shape.duration),
                b(p.shape.truncation),
                b(p.shape.sample_period),
                b(p.shape.drag_coefficient),
            ]),
            GateSpec::VirtualZ { phase } => GateKey::VirtualZ(b(*phase)),
            GateSpec::Idle { duration } => GateKey::Idle(b(*duration)),
        }
    }
}

/// Exact-match cache key built from the bit patterns of a gate's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKey {
    Pulse([u64; 7]),
    VirtualZ(u64),
    Idle(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSuperoperator<T: Real> {
    pub matrix: Super9<T>,
    pub label: GateSpec<T>,
}

impl<T: Real> GateSuperoperator<T> {
    pub fn apply(&self, rho: &DensityMatrix3<T>) -> DensityMatrix3<T> {
        DensityMatrix3::from_vec9(&(self.matrix * rho.to_vec9()))
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Self) -> Super9<T> {
        next.matrix * self.matrix
    }

    /// max |Tr S(|i⟩⟨j|) − δ_ij|.
    pub fn trace_defect(&self) -> T {
        let mut worst = T::zero();
        for col in 0..9 {
            let (i, j) = (col % 3, col / 3);
            let tr = (0..3).fold(c(T::zero()), |acc, a| acc + self.matrix[(a * 4, col)]);
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((tr - c(target)).norm_sqr().sqrt());
        }
        worst
    }

    /// Σ_ij |i⟩⟨j| ⊗ S(|i⟩⟨j|)
    pub fn choi(&self) -> Super9<T> {
        Super9::from_fn(|r, s| {
            let (i, a) = (r / 3, r % 3);
            let (j, b) = (s / 3, s % 3);
            self.matrix[(a + 3 * b, i + 3 * j)]
        })
    }

    pub fn choi_min_eigenvalue(&self) -> T {
        let j = self.choi();
        let h = (j + j.adjoint()) * c(T::lit(0.5));
        h.symmetric_eigenvalues().iter().fold(T::lit(f64::INFINITY), |a, &v| a.min(v))
    }

    pub fn check(&self) -> Result<(), SimError> {
        let tp = self.trace_defect();
        if tp > T::lit(1e-8).max(T::eps() * T::lit(1e3)) {
            return Err(SimError::State(format!("channel not trace preserving ({tp:e})")));
        }
        let min = self.choi_min_eigenvalue();
        if min < -T::lit(1e-7).max(T::eps() * T::lit(1e3)) {
            return Err(SimError::State(format!("channel not completely positive ({min:e})")));
        }
        Ok(())
    }
}

pub fn virtual_z<T: Real>(phase: T) -> Super9<T> {
    Super9::from_fn(|r, s| {
        if r != s {
            return c(T::zero());
        }
        let (i, j) = (r % 3, r / 3);
        let k = T::lit(i as f64 - j as f64);
        cis(k * phase)
    })
}

/// Envelope in rad/s after the line and the drive constant.
pub fn delivered_drive<T: Real>(
    pulse: &PulseGate<T>,
    line: &DriveLineTransfer<T>,
    model: &QutritModel<T>,
) -> Result<Vec<C<T>>, SimError> {
    let programmed = synth_drag_envelope(&pulse.shape.envelope(pulse.amplitude, pulse.phase))?;
    let delivered = line.apply(pulse.amplitude)?;
    if pulse.amplitude == T::zero() {
        return Ok(programmed);
    }
    let gain = c(model.rabi_rate_per_mv * delivered / pulse.amplitude);
    Ok(programmed.into_iter().map(|s| s * gain).collect())
}

pub fn gate_superoperator<T: Real>(
    gate: &GateSpec<T>,
    line: &DriveLineTransfer<T>,
    model: &QutritModel<T>,
    substeps: usize,
) -> Result<GateSuperoperator<T>, SimError> {
    let matrix = match gate {
        GateSpec::VirtualZ { phase } => virtual_z(*phase),
        GateSpec::Idle { duration } => {
            if *duration < T::zero() {
                return Err(SimError::Pulse("negative idle duration".into()));
            }
            idle_propagator(model, *duration)
        }
        GateSpec::Pulse(p) => {
            let drive = delivered_drive(p, line, model)?;
            drive_propagator(&Generator::new(model), &drive, p.shape.sample_period, substeps)
        }
    };
    let s = GateSuperoperator { matrix, label: *gate };
    s.check()?;
    Ok(s)
}

/// Simulated device: a model, a drive line and a cache of gate channels.
pub struct QutritSimulator<T: Real> {
    pub model: QutritModel<T>,
    pub line: DriveLineTransfer<T>,
    pub substeps: usize,
    cache: RwLock<HashMap<GateKey, Arc<GateSuperoperator<T>>>>,
}

impl<T: Real> Clone for QutritSimulator<T> {
    fn clone(&self) -> Self {
        Self {
            model: self.model,
            line: self.line,
            substeps: self.substeps,
            cache: RwLock::new(self.cache.read().expect("cache lock").clone()),
        }
    }
}

impl<T: Real> QutritSimulator<T> {
    pub fn new(model: QutritModel<T>, line: DriveLineTransfer<T>) -> Result<Self, SimError> {
        model.validate()?;
        line.validate()?;
        Ok(Self { model, line, substeps: 4, cache: RwLock::new(HashMap::new()) })
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self.cache.write().expect("cache lock").clear();
        self
    }

    pub fn cached_gates(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn superoperator(&self, gate: &GateSpec<T>) -> Result<Arc<GateSuperoperator<T>>, SimError> {
        let key = gate.key();
        if let Some(s) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(gate_superoperator(gate, &self.line, &self.model, self.substeps)?);
        self.cache.write().expect("cache lock").entry(key).or_insert_with(|| Arc::clone(&s));
        Ok(s)
    }

    /// Builds every missing channel in parallel.
    pub fn prepare<'a, I>(&self, gates: I) -> Result<(), SimError>
    where
        I: IntoIterator<Item = &'a GateSpec<T>>,
    {
        let mut pending: HashMap<GateKey, GateSpec<T>> = HashMap::new();
        {
            let cache = self.cache.read().expect("cache lock");
            for g in gates {
                let k = g.key();
                if !cache.contains_key(&k) {
                    pending.entry(k).or_insert(*g);
                }
            }
        }
        let built: Vec<_> = pending
            .into_par_iter()
            .map(|(k, g)| gate_superoperator(&g, &self.line, &self.model, self.substeps).map(|s| (k, Arc::new(s))))
            .collect::<Result<_, _>>()?;
        self.cache.write().expect("cache lock").extend(built);
        Ok(())
    }

    /// Final state after the sequence, starting from |g⟩⟨g|.
    pub fn final_state(&self, gates: &[GateSpec<T>]) -> Result<DensityMatrix3<T>, SimError> {
        let mut v = DensityMatrix3::ground().to_vec9();
        for g in gates {
            v = self.superoperator(g)?.matrix * v;
        }
        Ok(DensityMatrix3::from_vec9(&v))
    }

    /// (p_g, p_e, p_f) after the sequence, clamped and normalized.
    pub fn populations(&self, gates: &[GateSpec<T>]) -> Result<[T; 3], SimError> {
        let p = self.final_state(gates)?.populations().map(|x| x.max(T::zero()));
        let s = p[0] + p[1] + p[2];
        Ok(p.map(|x| x / s))
    }

    pub fn run_sequence(&self, gates: &[GateSpec<T>], shots: u64, seed: u64) -> Result<ShotRecord, SimError> {
        let p = self.populations(gates)?;
        let mut rng = StreamRng::seed_from_u64(seed);
        Ok(sample_readout(p, &self.model.confusion, shots, &mut rng)?)
    }
}
