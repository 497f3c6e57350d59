//! Deterministic closed-loop simulation.
//!
//! The input SOP wanders on the sphere at a constant angular speed, the target
//! hops through an alphabet of SOPs at a fixed symbol rate, and the polarimeter
//! adds Gaussian noise. All randomness derives from one master seed split into
//! independent ChaCha streams, so a configuration and a seed fully determine
//! the trace.

use std::f64::consts::TAU;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{
    run_episode, ControllerConfig, EpisodeIo, InputSop, Mode, ProbeTiming, TargetSop,
    DEFAULT_SWITCH_THRESHOLD,
};
use crate::device::{CalibrationConstants, CalibrationFile, DeviceModel};
use crate::error::{Error, Result};
use crate::sgd::SgdConfig;
use crate::sop::{quat_from_axis_angle, rotate, AxisAngle, StokesVector, Vec3};
use crate::trace::TraceSample;

const DRIFT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const SGD_STREAM: u64 = 3;
const SCHEDULE_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// Constant angular speed, fresh isotropic direction every step.
    #[default]
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftModel {
    /// Angular speed on the sphere, rad/s.
    pub rate: f64,
    pub kind: DriftKind,
    /// Overrides the stream derived from the master seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Starting input SOP; drawn uniformly when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<StokesVector>,
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel {
            rate: 6000.0,
            kind: DriftKind::RandomWalk,
            seed: None,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolSequence {
    #[default]
    Cyclic,
    SeededRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSchedule {
    /// Target changes per second; 0 holds the first symbol forever.
    pub symbol_rate: f64,
    pub alphabet: Vec<StokesVector>,
    pub sequence: SymbolSequence,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TargetSchedule {
    fn default() -> Self {
        TargetSchedule {
            symbol_rate: 50e3,
            alphabet: vec![
                StokesVector::H,
                StokesVector::V,
                StokesVector::D,
                StokesVector::A,
            ],
            sequence: SymbolSequence::Cyclic,
            seed: None,
        }
    }
}

impl TargetSchedule {
    pub fn fixed(target: StokesVector) -> Self {
        TargetSchedule {
            symbol_rate: 0.0,
            alphabet: vec![target],
            ..TargetSchedule::default()
        }
    }

    /// `floor(t · symbol_rate)`, with products within 1e-9 (relative) of an
    /// integer snapped to it so that `k·dt` sample times land on symbol edges.
    pub fn symbol_index(&self, t: f64) -> u64 {
        if self.symbol_rate <= 0.0 || t <= 0.0 {
            return 0;
        }
        let x = t * self.symbol_rate;
        let r = x.round();
        let idx = if (x - r).abs() <= 1e-9 * r.max(1.0) {
            r
        } else {
            x.floor()
        };
        idx as u64
    }

    fn symbol(&self, index: u64, derived_seed: u64) -> StokesVector {
        let n = self.alphabet.len() as u64;
        let pick = match self.sequence {
            SymbolSequence::Cyclic => index % n,
            SymbolSequence::SeededRandom => {
                let mut rng = stream(self.seed.unwrap_or(derived_seed), SCHEDULE_STREAM);
                rng.set_word_pos(u128::from(index) * 2);
                rng.next_u64() % n
            }
        };
        self.alphabet[pick as usize]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate.is_finite() && self.symbol_rate >= 0.0) {
            return Err(Error::field(
                "targets.symbol_rate",
                "must be finite and >= 0",
            ));
        }
        if self.alphabet.is_empty() {
            return Err(Error::field("targets.alphabet", "must not be empty"));
        }
        Ok(())
    }
}

/// Target at time `t`.
pub fn target_at(schedule: &TargetSchedule, t: f64) -> StokesVector {
    schedule.symbol(schedule.symbol_index(t), 0)
}

struct ScheduledTargets<'a> {
    schedule: &'a TargetSchedule,
    seed: u64,
}

impl TargetSop for ScheduledTargets<'_> {
    fn target_at(&self, t: f64) -> StokesVector {
        self.schedule
            .symbol(self.schedule.symbol_index(t), self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviation of the additive noise on each normalized Stokes component.
    pub polarimeter_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Uniformly distributed SOP.
pub fn random_sop<R: Rng + ?Sized>(rng: &mut R) -> StokesVector {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    StokesVector::from_vec(Vec3::new(r * phi.cos(), r * phi.sin(), z))
}

/// Moves `s` by exactly `rate·dt` radians in a uniformly random direction.
pub fn drift_step<R: Rng + ?Sized>(
    s: StokesVector,
    rate: f64,
    dt: f64,
    rng: &mut R,
) -> StokesVector {
    let angle = rate * dt;
    if angle == 0.0 {
        return s;
    }
    let v = s.as_vec();
    let axis = loop {
        let g = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let perp = g - v * g.dot(v);
        if perp.norm() > 1e-6 {
            break perp.normalized().expect("non-zero");
        }
    };
    let q = quat_from_axis_angle(AxisAngle::new(axis, angle).expect("unit axis"));
    rotate(q, s)
}

/// Polarimeter reading of `s_true`.
pub fn measure<R: Rng + ?Sized>(
    s_true: StokesVector,
    noise: &NoiseModel,
    rng: &mut R,
) -> StokesVector {
    let sigma = noise.polarimeter_sigma;
    if sigma == 0.0 {
        return s_true;
    }
    let mut draw = || -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    };
    let noisy = s_true.as_vec() + Vec3::new(draw(), draw(), draw());
    StokesVector::from_direction(noisy).unwrap_or(s_true)
}

/// Drifting input SOP driven by its own random stream.
pub struct DriftProcess<R> {
    current: StokesVector,
    rate: f64,
    rng: R,
}

impl<R: Rng> DriftProcess<R> {
    pub fn new(start: StokesVector, rate: f64, rng: R) -> Self {
        DriftProcess {
            current: start,
            rate,
            rng,
        }
    }
}

impl<R: Rng> InputSop for DriftProcess<R> {
    fn current(&self) -> StokesVector {
        self.current
    }

    fn advance(&mut self, dt: f64) {
        self.current = drift_step(self.current, self.rate, dt, &mut self.rng);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Loop iteration period, seconds.
    pub dt: f64,
    /// Simulated time, seconds; the run has `round(duration / dt)` iterations.
    pub duration: f64,
    pub drift: DriftModel,
    pub targets: TargetSchedule,
    pub noise: NoiseModel,
    pub controller: ControllerConfig,
    pub device: DeviceModel,
    pub master_seed: u64,
    pub probe_timing: ProbeTiming,
}

impl Default for SimConfig {
    /// 1 µs loop, 6 krad/s drift, 50 kBd target hopping over H/V/D/A, noiseless.
    fn default() -> Self {
        let device = DeviceModel::default();
        SimConfig {
            dt: 1e-6,
            duration: 0.1,
            drift: DriftModel::default(),
            targets: TargetSchedule::default(),
            noise: NoiseModel::default(),
            controller: ControllerConfig::new(device.true_calibration),
            device,
            master_seed: 0,
            probe_timing: ProbeTiming::Shared,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        ((self.duration / self.dt).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::field(
                "dt",
                format!("must be finite and > 0, got {}", self.dt),
            ));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(Error::field(
                "duration",
                format!("must be finite and >= dt, got {}", self.duration),
            ));
        }
        if !(self.drift.rate.is_finite() && self.drift.rate >= 0.0) {
            return Err(Error::field("drift.rate", "must be finite and >= 0"));
        }
        self.targets.validate()?;
        let sigma = self.noise.polarimeter_sigma;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::field(
                "noise.polarimeter_sigma",
                "must be finite and >= 0",
            ));
        }
        self.controller.validate()?;
        self.device.validate().map_err(|e| match e {
            Error::InvalidField { field, message } => {
                Error::field(format!("device.{field}"), message)
            }
            other => other,
        })?;
        Ok(())
    }

    /// Parses one scenario document or a `{"scenarios": [...]}` list.
    pub fn list_from_json_str(text: &str) -> Result<Vec<SimConfig>> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            Error::field(
                "config",
                format!("{e} (line {}, column {})", e.line(), e.column()),
            )
        })?;
        let files: Vec<ScenarioFile> =
            match value.get("scenarios") {
                Some(list) => serde_json::from_value(list.clone())
                    .map_err(|e| Error::field("scenarios", e.to_string()))?,
                None => vec![serde_json::from_value(value)
                    .map_err(|e| Error::field("config", e.to_string()))?],
            };
        if files.is_empty() {
            return Err(Error::field("scenarios", "must not be empty"));
        }
        files.into_iter().map(SimConfig::try_from).collect()
    }

    pub fn from_json_str(text: &str) -> Result<SimConfig> {
        let mut list = Self::list_from_json_str(text)?;
        if list.len() != 1 {
            return Err(Error::field("scenarios", "expected a single scenario"));
        }
        Ok(list.remove(0))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("serializable")
    }
}

/// On-disk scenario schema (SI units throughout).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub dt: f64,
    pub duration: f64,
    pub master_seed: u64,
    pub probe_timing: ProbeTiming,
    pub drift: DriftModel,
    pub targets: TargetSchedule,
    pub noise: NoiseModel,
    pub controller: ControllerFile,
    pub device: CalibrationFile,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile::from(&SimConfig::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerFile {
    pub switch_threshold: f64,
    pub sgd: SgdConfig,
    /// Believed calibration; the device's true calibration when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConstants>,
    /// Defaults to the device drive range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voltage_limit: Option<f64>,
    pub clamp_voltages: bool,
}

impl Default for ControllerFile {
    fn default() -> Self {
        ControllerFile {
            switch_threshold: DEFAULT_SWITCH_THRESHOLD,
            sgd: SgdConfig::default(),
            calibration: None,
            voltage_limit: None,
            clamp_voltages: true,
        }
    }
}

impl TryFrom<ScenarioFile> for SimConfig {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        let device = f.device.device();
        let controller = ControllerConfig {
            switch_threshold: f.controller.switch_threshold,
            sgd: f.controller.sgd,
            calibration: f.controller.calibration.unwrap_or(device.true_calibration),
            voltage_limit: f.controller.voltage_limit.unwrap_or(device.voltage_limit),
            clamp_voltages: f.controller.clamp_voltages,
        };
        let cfg = SimConfig {
            dt: f.dt,
            duration: f.duration,
            drift: f.drift,
            targets: f.targets,
            noise: f.noise,
            controller,
            device,
            master_seed: f.master_seed,
            probe_timing: f.probe_timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&SimConfig> for ScenarioFile {
    fn from(c: &SimConfig) -> Self {
        ScenarioFile {
            dt: c.dt,
            duration: c.duration,
            master_seed: c.master_seed,
            probe_timing: c.probe_timing,
            drift: c.drift,
            targets: c.targets.clone(),
            noise: c.noise,
            controller: ControllerFile {
                switch_threshold: c.controller.switch_threshold,
                sgd: c.controller.sgd,
                calibration: Some(c.controller.calibration),
                voltage_limit: Some(c.controller.voltage_limit),
                clamp_voltages: c.controller.clamp_voltages,
            },
            device: c.device.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModeCounts {
    pub rotation: usize,
    pub sgd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Share of samples with error strictly below the switching threshold.
    pub fraction_below_threshold: f64,
    /// Per target change: iterations until the error first drops below the
    /// threshold, or `null` if it does not before the next change.
    pub recovery_iterations: Vec<Option<usize>>,
    pub mode_counts: ModeCounts,
    pub max_abs_voltage: f64,
}

/// Indices where the target differs from the previous sample.
pub fn target_shifts(trace: &[TraceSample]) -> Vec<usize> {
    trace
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].s_target != w[1].s_target)
        .map(|(i, _)| i + 1)
        .collect()
}

pub fn summarize(trace: &[TraceSample], threshold: f64) -> Summary {
    let n = trace.len();
    let below = trace.iter().filter(|s| s.error < threshold).count();
    let shifts = target_shifts(trace);
    let recovery_iterations = shifts
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let end = shifts.get(k + 1).copied().unwrap_or(n);
            trace[start..end].iter().position(|s| s.error < threshold)
        })
        .collect();
    let rotation = trace.iter().filter(|s| s.mode == Mode::Rotation).count();
    Summary {
        fraction_below_threshold: if n == 0 { 0.0 } else { below as f64 / n as f64 },
        recovery_iterations,
        mode_counts: ModeCounts {
            rotation,
            sgd: n - rotation,
        },
        max_abs_voltage: trace
            .iter()
            .map(|s| s.voltages.max_abs())
            .fold(0.0, f64::max),
    }
}

/// Rotation-mode samples that occur more than `window` iterations after the
/// most recent target change (the first sample counts as a change).
pub fn rotations_outside_window(trace: &[TraceSample], window: usize) -> Vec<usize> {
    let mut last_shift = 0;
    let mut out = Vec::new();
    for (i, s) in trace.iter().enumerate() {
        if i > 0 && s.s_target != trace[i - 1].s_target {
            last_shift = i;
        }
        if s.mode == Mode::Rotation && i - last_shift > window {
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Vec<TraceSample>,
    pub summary: Summary,
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let seed = cfg.master_seed;
    let mut drift_rng = stream(cfg.drift.seed.unwrap_or(seed), DRIFT_STREAM);
    let mut noise_rng = stream(cfg.noise.seed.unwrap_or(seed), NOISE_STREAM);
    let mut sgd_rng = stream(seed, SGD_STREAM);

    let start = match cfg.drift.initial {
        Some(s) => s,
        None => random_sop(&mut drift_rng),
    };
    let mut input = DriftProcess::new(start, cfg.drift.rate, drift_rng);
    let targets = ScheduledTargets {
        schedule: &cfg.targets,
        seed,
    };
    let io = EpisodeIo {
        noise: &cfg.noise,
        noise_rng: &mut noise_rng,
        sgd_rng: &mut sgd_rng,
    };
    let trace = run_episode(
        &mut input,
        &targets,
        io,
        &cfg.controller,
        &cfg.device,
        cfg.steps(),
        cfg.dt,
        cfg.probe_timing,
    )?;
    let summary = summarize(&trace, cfg.controller.switch_threshold);
    Ok(SimOutput { trace, summary })
}
