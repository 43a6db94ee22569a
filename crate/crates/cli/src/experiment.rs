//! Builds the device and backend from a config and runs one protocol.

use serde::{Deserialize, Serialize};

use drivecal::backend::{Backend, DepolarizingBackend, SimBackend};
use drivecal::benchmarking::{
    log2_lengths, BenchmarkResult, DecayCurve, DecayOffsets, RbRun, RunSettings, XebMode, XebRun,
};
use drivecal::clifford::clifford_table;
use drivecal::driveline::{DriveLineTransfer, TransferKind};
use drivecal::gateset::GateSet;
use drivecal::npulse::{
    calibrate_angle, rabi_calibrate, reconstruct_response_curve, standard_angles, CalibrationContext,
    CalibrationResult, Partner, ResponseCurve, SequenceVariant,
};
use drivecal::qutrit::{DevicePreset, GateSpec, PulseShape, QutritModel, QutritSimulator};
use drivecal::readout::{mitigate, ConfusionMatrix3, ShotRecord};
use drivecal::seed::derive_seed;

use crate::config::{BackendKind, ExperimentConfig, LineKind, Profile, Scaling, T2Choice, XebAngleMode};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrateMode {
    Npulse,
    ResponseCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BenchProtocol {
    Rb,
    Pb,
    Xeb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", content = "mode", rename_all = "kebab-case")]
pub enum Command {
    Calibrate(CalibrateMode),
    Bench(BenchProtocol),
    Sim,
}

/// Device, line and pulse resolved from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub preset: DevicePreset,
    pub model: QutritModel<f64>,
    pub line: DriveLineTransfer<f64>,
    pub shape: PulseShape<f64>,
    pub a_pi: f64,
    pub profile: Profile,
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig, profile: Profile) -> Result<Self, CliError> {
        let base = cfg.preset().map_err(|e| CliError::Validation(vec![e]))?;
        let d = &cfg.device;
        let mut preset = base;
        if let Some(a) = d.anharmonicity_hz {
            preset.anharmonicity_hz = a;
        }
        if let Some(t1) = d.t1 {
            preset.t1 = t1;
        }
        if let Some(a) = d.a_pi_mv {
            preset.a_pi_mv = a;
        }
        if let Some(r) = d.readout_error {
            preset.readout_error = r;
        }
        let t2 = d.t2.unwrap_or(match d.t2_kind {
            T2Choice::Echo => preset.t2_echo,
            T2Choice::Star => preset.t2_star,
        });
        let l = &cfg.line;
        let range = l.range_mv.unwrap_or(1000.0);
        let line = match l.kind {
            LineKind::Linear => DriveLineTransfer::linear(range),
            LineKind::Tanh => match l.saturation_mv {
                Some(s) => DriveLineTransfer::tanh(s, range),
                None => DriveLineTransfer::tanh_for_deviation(preset.a_pi_mv, l.max_deviation_deg.unwrap_or(3.6), range),
            }
            .map_err(|e| CliError::runtime("driveline", e))?,
            LineKind::OddPolynomial => DriveLineTransfer::new(
                TransferKind::OddPolynomial { c1: l.c1.unwrap_or(1.0), c3: l.c3.unwrap_or(0.0), c5: l.c5.unwrap_or(0.0) },
                range,
                range,
            )
            .map_err(|e| CliError::runtime("driveline", e))?,
        };
        let duration = cfg.pulse.duration.unwrap_or(15e-9);
        let mut bare = PulseShape::new(duration, 0.0);
        if let Some(t) = cfg.pulse.truncation {
            bare.truncation = t;
        }
        if let Some(p) = cfg.pulse.sample_period {
            bare.sample_period = p;
        }
        let mut model =
            QutritModel::from_preset(&preset, t2, &line, &bare).map_err(|e| CliError::runtime("qutrit-sim", e))?;
        if let Some(s) = d.ef_relaxation_scale {
            model.ef_relaxation_scale = s;
        }
        if let Some(s) = d.f_dephasing_scale {
            model.f_dephasing_scale = s;
        }
        if d.coherent {
            model = model.coherent();
        }
        let shape = PulseShape { drag_coefficient: cfg.pulse.drag.unwrap_or_else(|| model.default_drag()), ..bare };
        Ok(Self { preset, model, line, shape, a_pi: preset.a_pi_mv, profile })
    }

    fn simulator(&self) -> Result<SimBackend<f64>, CliError> {
        let sim = QutritSimulator::new(self.model, self.line).map_err(|e| CliError::runtime("qutrit-sim", e))?;
        Ok(SimBackend::new(sim))
    }

    fn depolarizing(&self, cfg: &ExperimentConfig, amplitude_driven: bool) -> Result<DepolarizingBackend<f64>, CliError> {
        let b = DepolarizingBackend::from_average_error(cfg.backend.error.unwrap_or(1e-4), self.model.confusion);
        if amplitude_driven {
            b.with_drive_line(self.line, self.a_pi).map_err(|e| CliError::runtime("driveline", e))
        } else {
            Ok(b)
        }
    }

    fn context(&self, cfg: &ExperimentConfig, seed: u64) -> CalibrationContext<f64> {
        let c = &cfg.calibrate;
        let mut ctx = CalibrationContext::new(self.shape, self.model.confusion, self.model.rates());
        ctx.shots = c.shots.unwrap_or(match self.profile {
            Profile::Paper => 4096,
            Profile::Fast => 1024,
        });
        ctx.seed = derive_seed(seed, "calibration", 0);
        if let Some(t) = c.tolerance_deg {
            ctx.tolerance_deg = t;
        }
        if let Some(n) = c.max_iterations {
            ctx.max_iterations = n;
        }
        ctx.gap = c.gap.unwrap_or(0.0);
        ctx.n_values = c.n_values.clone();
        ctx
    }
}

/// Calibration steps run before a protocol (or as the protocol itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// π amplitude from the Rabi sweep (mV).
    pub rabi_a_pi: f64,
    pub results: Vec<CalibrationResult<f64>>,
    pub response_curve: Option<ResponseCurve<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub gates: Vec<GateSpec<f64>>,
    /// Noise-free readout populations (g, e, f).
    pub populations: [f64; 3],
    pub record: ShotRecord,
    pub mitigated: [f64; 3],
}

/// Everything a run reports; serialized as the result record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub schema_version: u32,
    pub command: Command,
    pub profile: Profile,
    pub seed: u64,
    pub config_sha256: String,
    pub a_pi_mv: f64,
    pub calibration: Option<CalibrationSummary>,
    pub benchmark: Option<BenchmarkResult<f64>>,
    pub sim: Option<SimSummary>,
}

impl RunOutput {
    /// Decay curves keyed by file stem.
    pub fn decay_curves(&self) -> Vec<(String, DecayCurve<f64>)> {
        let mut out = Vec::new();
        if let Some(b) = &self.benchmark {
            for a in &b.analyses {
                out.push((a.name.clone(), a.analysis.curve.clone()));
            }
            out.push(("leakage".to_string(), b.leakage_curve.clone()));
        }
        if let Some(c) = &self.calibration {
            for r in &c.results {
                let last = r.history.last().expect("calibration has at least one pass");
                let mut curve = DecayCurve::default();
                for &(n, p) in &last.fit.data {
                    curve.push(n, p, (p * (1.0 - p)).max(0.0).sqrt(), 1);
                }
                out.push((format!("npulse-{}", angle_label(r.target_deg)), curve));
            }
        }
        out
    }
}

/// "22.5" → "22p5", so angles make portable file names.
/// Powers of two up to max/8, then steps of max/16: speckle purity is only
/// usable once sequences scramble, so the long lengths carry the purity fit.
pub fn xeb_lengths(max: usize) -> Vec<usize> {
    let step = (max / 16).max(1);
    let mut out: Vec<usize> = log2_lengths(max).into_iter().filter(|&m| m <= 2 * step).collect();
    let mut m = out.last().map_or(step, |&l| l + step);
    while m <= max {
        out.push(m);
        m += step;
    }
    if out.last() != Some(&max) {
        out.push(max);
    }
    out
}

pub fn angle_label(deg: f64) -> String {
    format!("{deg}").replace('.', "p")
}

pub fn run(cfg: &ExperimentConfig, command: Command, profile: Profile, config_sha256: String) -> Result<RunOutput, CliError> {
    let setup = Setup::from_config(cfg, profile)?;
    let seed = cfg.seed;
    let mut out = RunOutput {
        schema_version: crate::config::SCHEMA_VERSION,
        command,
        profile,
        seed,
        config_sha256,
        a_pi_mv: setup.a_pi,
        calibration: None,
        benchmark: None,
        sim: None,
    };
    match command {
        Command::Calibrate(mode) => {
            let summary = match cfg.backend.kind {
                BackendKind::Simulator => calibrate(&setup.simulator()?, &setup, cfg, mode, seed)?,
                BackendKind::Depolarizing => calibrate(&setup.depolarizing(cfg, true)?, &setup, cfg, mode, seed)?,
            };
            out.calibration = Some(summary);
        }
        Command::Bench(protocol) => match cfg.backend.kind {
            BackendKind::Simulator => {
                let backend = setup.simulator()?;
                let (gateset, cal) = prerequisite_gateset(&backend, &setup, cfg, cfg.bench.scaling, seed)?;
                out.calibration = Some(cal);
                out.benchmark = Some(bench(&backend, &setup, cfg, protocol, &gateset, seed)?);
            }
            BackendKind::Depolarizing => {
                let backend = setup.depolarizing(cfg, false)?;
                let gateset = GateSet::linear(setup.shape, setup.a_pi);
                out.benchmark = Some(bench(&backend, &setup, cfg, protocol, &gateset, seed)?);
            }
        },
        Command::Sim => {
            let summary = match cfg.backend.kind {
                BackendKind::Simulator => {
                    let backend = setup.simulator()?;
                    let (gateset, cal) = prerequisite_gateset(&backend, &setup, cfg, cfg.sim.scaling, seed)?;
                    out.calibration = Some(cal);
                    let gates = sim_gates(cfg, &gateset)?;
                    let pops = backend.simulator.populations(&gates).map_err(|e| CliError::runtime("qutrit-sim", e))?;
                    sim_summary(&backend, &setup, cfg, gates, pops, seed)?
                }
                BackendKind::Depolarizing => {
                    let backend = setup.depolarizing(cfg, false)?;
                    let gates = sim_gates(cfg, &GateSet::linear(setup.shape, setup.a_pi))?;
                    let pops = backend.populations(&gates).map_err(|e| CliError::runtime("driveline", e))?;
                    sim_summary(&backend, &setup, cfg, gates, pops, seed)?
                }
            };
            out.sim = Some(summary);
        }
    }
    Ok(out)
}

fn rabi<B: Backend<f64>>(backend: &B, setup: &Setup, cfg: &ExperimentConfig, ctx: &CalibrationContext<f64>) -> Result<f64, CliError> {
    let c = &cfg.calibrate;
    let points = c.rabi_points.unwrap_or(match setup.profile {
        Profile::Paper => 41,
        Profile::Fast => 21,
    });
    rabi_calibrate(backend, ctx, setup.a_pi, c.rabi_span.unwrap_or(0.1), points).map_err(|e| CliError::runtime("npulse-cal", e))
}

fn calibrate<B: Backend<f64>>(
    backend: &B,
    setup: &Setup,
    cfg: &ExperimentConfig,
    mode: CalibrateMode,
    seed: u64,
) -> Result<CalibrationSummary, CliError> {
    let ctx = setup.context(cfg, seed);
    let rabi_a_pi = rabi(backend, setup, cfg, &ctx)?;
    match mode {
        CalibrateMode::ResponseCurve => {
            let angles = cfg.calibrate.angles.clone().unwrap_or_else(standard_angles);
            let curve = reconstruct_response_curve(backend, &ctx, &angles, rabi_a_pi)
                .map_err(|e| CliError::runtime("npulse-cal", e))?;
            Ok(CalibrationSummary { rabi_a_pi, results: curve.calibrations.clone(), response_curve: Some(curve) })
        }
        CalibrateMode::Npulse => {
            let angles = cfg.calibrate.angles.clone().unwrap_or_else(|| vec![180.0, 90.0]);
            let results = calibrate_list(backend, &ctx, &angles, rabi_a_pi)?;
            Ok(CalibrationSummary { rabi_a_pi, results, response_curve: None })
        }
    }
}

/// π first, then π/2 (used for initialization), then the rest in the order
/// given; complements reuse calibrated partners when present.
fn calibrate_list<B: Backend<f64>>(
    backend: &B,
    ctx: &CalibrationContext<f64>,
    angles: &[f64],
    rabi_a_pi: f64,
) -> Result<Vec<CalibrationResult<f64>>, CliError> {
    let err = |e| CliError::runtime("npulse-cal", e);
    let pi = calibrate_angle(backend, ctx, SequenceVariant::Pi, rabi_a_pi, rabi_a_pi / 2.0, None).map_err(err)?;
    let a_pi = pi.amplitude_after;
    let mut done = vec![pi];
    let mut rest: Vec<f64> = angles.iter().copied().filter(|&a| a != 180.0).collect();
    rest.sort_by_key(|&a| a != 90.0);
    let mut init = a_pi / 2.0;
    for angle in rest {
        let variant = SequenceVariant::for_angle(angle).ok_or_else(|| {
            CliError::Validation(vec![crate::config::FieldError {
                path: "calibrate.angles".into(),
                message: format!("{angle}° has no N-pulse sequence"),
            }])
        })?;
        let partner = match variant.partner_deg::<f64>() {
            Some(p) => {
                let amp = match done.iter().find(|c| c.target_deg == p) {
                    Some(c) => c.amplitude_after,
                    None => {
                        let v = SequenceVariant::for_angle(p).expect("π/k angle");
                        let c = calibrate_angle(backend, ctx, v, a_pi * p / 180.0, init, None).map_err(err)?;
                        let a = c.amplitude_after;
                        done.push(c);
                        a
                    }
                };
                Some(Partner { amplitude: amp, alpha_fraction: p / 180.0 })
            }
            None => None,
        };
        let r = calibrate_angle(backend, ctx, variant, a_pi * angle / 180.0, init, partner).map_err(err)?;
        if angle == 90.0 {
            init = r.amplitude_after;
        }
        done.push(r);
    }
    Ok(done)
}

/// Gate set for benchmarking, running the calibrations it depends on.
fn prerequisite_gateset<B: Backend<f64>>(
    backend: &B,
    setup: &Setup,
    cfg: &ExperimentConfig,
    scaling: Scaling,
    seed: u64,
) -> Result<(GateSet<f64>, CalibrationSummary), CliError> {
    match scaling {
        Scaling::Calibrated => {
            let summary = calibrate(backend, setup, cfg, CalibrateMode::ResponseCurve, seed)?;
            let curve = summary.response_curve.as_ref().expect("response curve requested");
            Ok((curve.gateset(setup.shape), summary))
        }
        Scaling::Linear => {
            let ctx = setup.context(cfg, seed);
            let rabi_a_pi = rabi(backend, setup, cfg, &ctx)?;
            let results = calibrate_list(backend, &ctx, &[180.0], rabi_a_pi)?;
            let a_pi = results[0].amplitude_after;
            Ok((GateSet::linear(setup.shape, a_pi), CalibrationSummary { rabi_a_pi, results, response_curve: None }))
        }
    }
}

fn bench<B: Backend<f64>>(
    backend: &B,
    setup: &Setup,
    cfg: &ExperimentConfig,
    protocol: BenchProtocol,
    gateset: &GateSet<f64>,
    seed: u64,
) -> Result<BenchmarkResult<f64>, CliError> {
    let b = &cfg.bench;
    let fast = setup.profile == Profile::Fast;
    let xeb = protocol == BenchProtocol::Xeb;
    let max = b.max_length.unwrap_or(match (xeb, fast) {
        (false, _) => 1024,
        (true, false) => 512,
        (true, true) => 256,
    });
    let settings = RunSettings {
        lengths: b.lengths.clone().unwrap_or_else(|| if xeb { xeb_lengths(max) } else { log2_lengths(max) }),
        sequences: b.sequences.unwrap_or(match (xeb, fast) {
            (false, false) => 30,
            (true, false) => 100,
            (true, true) => 50,
            (false, true) => 10,
        }),
        shots: b.shots.unwrap_or(if fast { 500 } else { 1000 }),
        seed: derive_seed(seed, "bench", 0),
        bootstrap_repeats: b.bootstrap.unwrap_or(if fast { 50 } else { 200 }),
    };
    let offsets = DecayOffsets { sequence: b.sequence_offset.held(), purity: b.purity_offset.held() };
    let confusion: ConfusionMatrix3<f64> = setup.model.confusion;
    let err = |e| CliError::runtime("benchmarking", e);
    match protocol {
        BenchProtocol::Rb | BenchProtocol::Pb => {
            let table = clifford_table::<f64>();
            RbRun {
                table: &table,
                gateset,
                confusion: &confusion,
                settings: &settings,
                purity: protocol == BenchProtocol::Pb,
                n_bar: b.n_bar,
                offsets,
            }
            .run(backend)
            .map_err(err)
        }
        BenchProtocol::Xeb => {
            let mode = match b.xeb.mode {
                XebAngleMode::Random => XebMode::Random,
                XebAngleMode::Fixed => XebMode::Fixed { angle_deg: b.xeb.angle_deg.unwrap_or(90.0) },
            };
            XebRun {
                gateset,
                confusion: &confusion,
                settings: &settings,
                mode,
                angle_quantum_deg: b.xeb.angle_quantum_deg.unwrap_or(0.5),
                convention: cfg.xeb_convention(),
                offsets,
            }
            .run(backend)
            .map_err(err)
        }
    }
}

fn sim_gates(cfg: &ExperimentConfig, gateset: &GateSet<f64>) -> Result<Vec<GateSpec<f64>>, CliError> {
    cfg.sim
        .gates
        .iter()
        .map(|g| match (g.angle, g.idle) {
            (Some(a), _) => gateset.pulse(a, g.phase.to_radians()).map_err(|e| CliError::runtime("driveline", e)),
            (None, Some(t)) => Ok(GateSpec::Idle { duration: t }),
            (None, None) => Ok(GateSpec::VirtualZ { phase: g.phase.to_radians() }),
        })
        .collect()
}

fn sim_summary<B: Backend<f64>>(
    backend: &B,
    setup: &Setup,
    cfg: &ExperimentConfig,
    gates: Vec<GateSpec<f64>>,
    pops: [f64; 3],
    seed: u64,
) -> Result<SimSummary, CliError> {
    let shots = cfg.sim.shots.unwrap_or(1000);
    let record =
        backend.submit(&gates, shots, derive_seed(seed, "sim", 0)).map_err(|e| CliError::runtime("sim-backend", e))?;
    let mitigated =
        mitigate(&record, &setup.model.confusion).map_err(|e| CliError::runtime("readout", e))?.populations;
    Ok(SimSummary { gates, populations: pops, record, mitigated })
}
