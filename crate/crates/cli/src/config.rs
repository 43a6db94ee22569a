//! Experiment configuration (TOML, versioned schema).
//!
//! Every block is optional; missing fields take the profile defaults.

use serde::{Deserialize, Serialize};

use drivecal::benchmarking::XebConvention;
use drivecal::qutrit::DevicePreset;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Full-scale sequence counts and lengths.
    #[default]
    Paper,
    /// Reduced scale for smoke runs.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub profile: Option<Profile>,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default)]
    pub line: LineConfig,
    #[serde(default)]
    pub pulse: PulseConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum T2Choice {
    /// Echo T2 (Hahn), the default decoherence channel.
    #[default]
    Echo,
    /// Ramsey T2*.
    Star,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    /// "A" or "B"; fields below override the preset.
    pub preset: Option<String>,
    pub anharmonicity_hz: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    #[serde(default)]
    pub t2_kind: T2Choice,
    pub a_pi_mv: Option<f64>,
    pub readout_error: Option<f64>,
    pub ef_relaxation_scale: Option<f64>,
    pub f_dephasing_scale: Option<f64>,
    /// Drop T1/T2 entirely.
    #[serde(default)]
    pub coherent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineKind {
    Linear,
    #[default]
    Tanh,
    OddPolynomial,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    #[serde(default)]
    pub kind: LineKind,
    /// Peak over-rotation of linear scaling (tanh line tuned from this).
    pub max_deviation_deg: Option<f64>,
    /// Explicit tanh saturation (mV); overrides `max_deviation_deg`.
    pub saturation_mv: Option<f64>,
    pub c1: Option<f64>,
    pub c3: Option<f64>,
    pub c5: Option<f64>,
    pub range_mv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    /// Seconds.
    pub duration: Option<f64>,
    /// DRAG quadrature weight (s); default −1/(2α).
    pub drag: Option<f64>,
    /// Gaussian spans ±truncation·σ; default 2.5.
    pub truncation: Option<f64>,
    /// AWG sample period (s); default 0.5 ns.
    pub sample_period: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Three-level master-equation simulator.
    #[default]
    Simulator,
    /// Ideal qubit rotations plus a depolarizing channel per pulse.
    Depolarizing,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    /// Average gate infidelity per pulse for the depolarizing backend.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Angles (degrees) for `calibrate npulse`; default [180, 90].
    pub angles: Option<Vec<f64>>,
    pub shots: Option<u64>,
    pub tolerance_deg: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Idle time between pulses (s).
    pub gap: Option<f64>,
    /// Repetition counts; default per sequence variant.
    pub n_values: Option<Vec<usize>>,
    /// Rabi sweep half-width as a fraction of the preset amplitude.
    pub rabi_span: Option<f64>,
    pub rabi_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Response-curve model plus per-angle calibrated amplitudes.
    #[default]
    Calibrated,
    /// π amplitude calibrated, other angles scaled linearly.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XebAngleMode {
    #[default]
    Random,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XebConfig {
    #[serde(default)]
    pub mode: XebAngleMode,
    /// Angle for fixed mode (degrees).
    pub angle_deg: Option<f64>,
    /// Random angles are rounded to this step (degrees).
    pub angle_quantum_deg: Option<f64>,
    #[serde(default)]
    pub convention: XebConvention,
}

/// Asymptote of a decay fit: held at a value or fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OffsetSetting {
    Held(f64),
    Free(FreeKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeKeyword {
    Free,
}

impl Default for OffsetSetting {
    fn default() -> Self {
        Self::Held(0.0)
    }
}

impl OffsetSetting {
    pub fn held(self) -> Option<f64> {
        match self {
            Self::Held(b) => Some(b),
            Self::Free(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Option<Vec<usize>>,
    pub max_length: Option<usize>,
    pub sequences: Option<usize>,
    pub shots: Option<u64>,
    pub bootstrap: Option<usize>,
    #[serde(default)]
    pub scaling: Scaling,
    /// Pulses per Clifford; default from the decomposition table.
    pub n_bar: Option<f64>,
    /// Sequence-decay offset: a held value or `"free"`; held at 0 by default.
    #[serde(default)]
    pub sequence_offset: OffsetSetting,
    /// Purity-decay offset: a held value or `"free"`; held at 0 by default.
    #[serde(default)]
    pub purity_offset: OffsetSetting,
    #[serde(default)]
    pub xeb: XebConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimGate {
    /// Rotation angle (degrees); omit for a virtual Z.
    pub angle: Option<f64>,
    /// Rotation axis phase (degrees) or virtual-Z phase.
    #[serde(default)]
    pub phase: f64,
    /// Idle time (s).
    pub idle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub gates: Vec<SimGate>,
    pub shots: Option<u64>,
    #[serde(default)]
    pub scaling: Scaling,
}

/// One validation failure, addressed by TOML path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

struct Checker(Vec<FieldError>);

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(FieldError { path: path.into(), message: message.into() });
    }

    fn positive(&mut self, path: &str, v: Option<f64>) {
        if let Some(x) = v {
            if !(x > 0.0 && x.is_finite()) {
                self.fail(path, format!("must be positive and finite, got {x}"));
            }
        }
    }

    fn nonzero<N: PartialEq + Default + Copy>(&mut self, path: &str, v: Option<N>) {
        if v == Some(N::default()) {
            self.fail(path, "must be positive");
        }
    }

    fn increasing(&mut self, path: &str, v: &Option<Vec<usize>>, min_len: usize) {
        if let Some(xs) = v {
            if xs.len() < min_len {
                self.fail(path, format!("needs at least {min_len} entries"));
            }
            if xs.windows(2).any(|w| w[0] >= w[1]) {
                self.fail(path, "must be strictly increasing");
            }
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<FieldError>> {
        toml::from_str(text).map_err(|e| {
            let path = e.span().map_or_else(|| "<root>".to_string(), |s| locate(text, s.start));
            vec![FieldError { path, message: e.message().to_string() }]
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(&self) -> Result<DevicePreset, FieldError> {
        let name = self.device.preset.as_deref().unwrap_or("B");
        DevicePreset::by_name(name)
            .ok_or_else(|| FieldError { path: "device.preset".into(), message: format!("unknown preset {name:?}") })
    }

    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut c = Checker(Vec::new());
        if self.schema_version != SCHEMA_VERSION {
            c.fail("schema_version", format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if let Err(e) = self.preset() {
            c.0.push(e);
        }
        let d = &self.device;
        c.positive("device.t1", d.t1);
        c.positive("device.t2", d.t2);
        c.positive("device.a_pi_mv", d.a_pi_mv);
        if let Some(a) = d.anharmonicity_hz {
            if a == 0.0 || !a.is_finite() {
                c.fail("device.anharmonicity_hz", "must be non-zero and finite");
            }
        }
        if let Some(r) = d.readout_error {
            if !(0.0..0.5).contains(&r) {
                c.fail("device.readout_error", "must lie in [0, 0.5)");
            }
        }
        for (p, v) in [("device.ef_relaxation_scale", d.ef_relaxation_scale), ("device.f_dephasing_scale", d.f_dephasing_scale)] {
            if v.is_some_and(|x| !(x >= 0.0)) {
                c.fail(p, "must be non-negative");
            }
        }
        if let (Ok(p), false) = (self.preset(), d.coherent) {
            let t1 = d.t1.unwrap_or(p.t1);
            let t2 = d.t2.unwrap_or(match d.t2_kind {
                T2Choice::Echo => p.t2_echo,
                T2Choice::Star => p.t2_star,
            });
            if t2 > 2.0 * t1 {
                c.fail("device.t2", format!("T2 = {t2} exceeds 2·T1 = {}", 2.0 * t1));
            }
        }

        let l = &self.line;
        c.positive("line.range_mv", l.range_mv);
        c.positive("line.saturation_mv", l.saturation_mv);
        if let Some(x) = l.max_deviation_deg {
            if !(x > 0.0 && x <= 60.0) {
                c.fail("line.max_deviation_deg", "must lie in (0, 60]");
            }
        }
        if l.kind == LineKind::OddPolynomial && l.c1.is_none() {
            c.fail("line.c1", "required for the odd-polynomial line");
        }

        c.positive("pulse.duration", self.pulse.duration);
        c.positive("pulse.truncation", self.pulse.truncation);
        c.positive("pulse.sample_period", self.pulse.sample_period);
        if let Some(p) = self.pulse.sample_period {
            if p > self.pulse.duration.unwrap_or(15e-9) {
                c.fail("pulse.sample_period", "must not exceed the pulse duration");
            }
        }
        for (path, o) in [("bench.sequence_offset", self.bench.sequence_offset), ("bench.purity_offset", self.bench.purity_offset)] {
            if o.held().is_some_and(|b| !(-1.0..=1.0).contains(&b)) {
                c.fail(path, "held offset must lie in [-1, 1]");
            }
        }
        if self.pulse.drag.is_some_and(|x| !x.is_finite()) {
            c.fail("pulse.drag", "must be finite");
        }
        if let Some(e) = self.backend.error {
            if !(0.0..0.5).contains(&e) {
                c.fail("backend.error", "must lie in [0, 0.5)");
            }
        }

        let cal = &self.calibrate;
        if let Some(angles) = &cal.angles {
            if angles.is_empty() {
                c.fail("calibrate.angles", "must not be empty");
            }
            for (i, &a) in angles.iter().enumerate() {
                if drivecal::npulse::SequenceVariant::for_angle(a).is_none() {
                    c.fail(&format!("calibrate.angles[{i}]"), format!("{a}° is not 180°, 180°/k or 180° − 180°/k"));
                }
            }
        }
        c.nonzero("calibrate.shots", cal.shots);
        c.nonzero("calibrate.max_iterations", cal.max_iterations);
        c.positive("calibrate.tolerance_deg", cal.tolerance_deg);
        if cal.gap.is_some_and(|g| !(g >= 0.0)) {
            c.fail("calibrate.gap", "must be non-negative");
        }
        c.increasing("calibrate.n_values", &cal.n_values, 8);
        if let Some(s) = cal.rabi_span {
            if !(s > 0.0 && s < 1.0) {
                c.fail("calibrate.rabi_span", "must lie in (0, 1)");
            }
        }
        if cal.rabi_points.is_some_and(|p| p < 5) {
            c.fail("calibrate.rabi_points", "must be at least 5");
        }

        let b = &self.bench;
        c.increasing("bench.lengths", &b.lengths, 3);
        if b.lengths.as_ref().is_some_and(|l| l.contains(&0)) {
            c.fail("bench.lengths", "lengths must be positive");
        }
        if b.max_length.is_some_and(|m| m < 4) {
            c.fail("bench.max_length", "must be at least 4");
        }
        c.nonzero("bench.sequences", b.sequences);
        c.nonzero("bench.shots", b.shots);
        c.positive("bench.n_bar", b.n_bar);
        if let Some(a) = b.xeb.angle_deg {
            if !(a > 0.0 && a <= 180.0) {
                c.fail("bench.xeb.angle_deg", "must lie in (0, 180]");
            }
        }
        if b.xeb.angle_quantum_deg.is_some_and(|q| !(q >= 0.0)) {
            c.fail("bench.xeb.angle_quantum_deg", "must be non-negative");
        }

        for (i, g) in self.sim.gates.iter().enumerate() {
            if let Some(a) = g.angle {
                if !(0.0..=180.0).contains(&a) {
                    c.fail(&format!("sim.gates[{i}].angle"), "must lie in [0, 180]");
                }
                if g.idle.is_some() {
                    c.fail(&format!("sim.gates[{i}]"), "a gate is either a pulse or an idle");
                }
            }
            if g.idle.is_some_and(|t| !(t >= 0.0)) {
                c.fail(&format!("sim.gates[{i}].idle"), "must be non-negative");
            }
        }
        c.nonzero("sim.shots", self.sim.shots);

        if c.0.is_empty() {
            Ok(())
        } else {
            Err(c.0)
        }
    }

    pub fn effective_profile(&self, cli: Option<Profile>) -> Profile {
        cli.or(self.profile).unwrap_or_default()
    }

    pub fn xeb_convention(&self) -> XebConvention {
        self.bench.xeb.convention
    }
}

/// `line:col` of a byte offset, for parse errors without a field path.
fn locate(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, str::len) + 1;
    format!("line {line}, column {col}")
}
