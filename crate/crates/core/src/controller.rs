//! Hybrid control law.
//!
//! Far from the target (chord distance above `switch_threshold`) the stage is
//! re-planned analytically from the estimated input SOP; close to the target
//! the voltages are refined by stochastic gradient descent, which tolerates
//! measurement error and the ill-conditioning of the planner near the target.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{
    device_transfer, validate_range, CalibrationConstants, DeviceModel, ElectrodeVoltages,
    DEFAULT_VOLTAGE_LIMIT,
};
use crate::error::{Error, Result};
use crate::estimator::estimate_input;
use crate::planner::plan_rotation;
use crate::sgd::{cost, estimate_gradient, sgd_step, SgdConfig, VoltagePair};
use crate::sim::{measure, NoiseModel};
use crate::sop::{sop_distance, StokesVector};
use crate::trace::TraceSample;

/// Default switching distance, in chord units.
pub const DEFAULT_SWITCH_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Rotation,
    Sgd,
}

impl Mode {
    /// Single-letter tag used in trace files (`R` rotation, `G` gradient).
    pub fn tag(self) -> char {
        match self {
            Mode::Rotation => 'R',
            Mode::Sgd => 'G',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub switch_threshold: f64,
    pub sgd: SgdConfig,
    /// Calibration the controller believes the stage has.
    pub calibration: CalibrationConstants,
    pub voltage_limit: f64,
    /// Clamp out-of-range commands instead of failing.
    pub clamp_voltages: bool,
}

impl ControllerConfig {
    pub fn new(calibration: CalibrationConstants) -> Self {
        ControllerConfig {
            switch_threshold: DEFAULT_SWITCH_THRESHOLD,
            sgd: SgdConfig::default(),
            calibration,
            voltage_limit: DEFAULT_VOLTAGE_LIMIT,
            clamp_voltages: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.switch_threshold;
        if !(t > 0.0 && t < 2.0) {
            return Err(Error::field(
                "controller.switch_threshold",
                format!("must lie in (0, 2), got {t}"),
            ));
        }
        self.sgd.validate()?;
        self.calibration.validate()?;
        if !(self.voltage_limit.is_finite() && self.voltage_limit > self.sgd.epsilon_probe) {
            return Err(Error::field(
                "controller.voltage_limit",
                "must be finite and larger than sgd.epsilon_probe",
            ));
        }
        Ok(())
    }

    /// Commands are kept one probe width inside the drive range so that
    /// gradient probes never leave it.
    fn command_limit(&self) -> f64 {
        self.voltage_limit - self.sgd.epsilon_probe
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub voltages: VoltagePair,
    pub mode: Mode,
    pub last_error: f64,
    /// Whether the last command had to be clamped into range.
    pub clamped: bool,
}

impl ControllerState {
    /// Power-on state: zero birefringence under the believed calibration.
    pub fn initial(cfg: &ControllerConfig) -> Self {
        ControllerState {
            voltages: VoltagePair::new(cfg.calibration.v_bias_a, cfg.calibration.v_bias_c),
            mode: Mode::Sgd,
            last_error: 0.0,
            clamped: false,
        }
    }

    pub fn electrode_voltages(&self) -> ElectrodeVoltages {
        ElectrodeVoltages::new(self.voltages.v_a, self.voltages.v_c)
    }
}

fn limit_command(v: VoltagePair, cfg: &ControllerConfig) -> Result<(VoltagePair, bool)> {
    let lim = cfg.command_limit();
    if !cfg.clamp_voltages {
        validate_range(ElectrodeVoltages::new(v.v_a, v.v_c), lim)?;
        return Ok((v, false));
    }
    let c = VoltagePair::new(v.v_a.clamp(-lim, lim), v.v_c.clamp(-lim, lim));
    Ok((c, c != v))
}

/// One iteration of the switching law.
///
/// `probe` measures the cost at trial voltages; it is only called in SGD mode.
pub fn controller_step<R, F>(
    state: &ControllerState,
    s_out_measured: StokesVector,
    s_target: StokesVector,
    cfg: &ControllerConfig,
    probe: F,
    rng: &mut R,
) -> Result<ControllerState>
where
    R: Rng + ?Sized,
    F: FnMut(VoltagePair, &mut R) -> Result<f64>,
{
    let d = sop_distance(s_out_measured, s_target);
    let (mode, wanted) = if d > cfg.switch_threshold {
        let s_in = estimate_input(s_out_measured, state.electrode_voltages(), cfg.calibration);
        let plan = plan_rotation(s_in, s_target)?;
        let v = crate::device::voltages_from_setting(plan.setting(), cfg.calibration);
        (Mode::Rotation, VoltagePair::new(v.v_a, v.v_c))
    } else {
        let grad = estimate_gradient(probe, state.voltages, &cfg.sgd, rng)?;
        (Mode::Sgd, sgd_step(state.voltages, grad, d, &cfg.sgd))
    };
    let (voltages, clamped) = limit_command(wanted, cfg)?;
    Ok(ControllerState {
        voltages,
        mode,
        last_error: d,
        clamped,
    })
}

/// Source of the drifting SOP entering the stage.
pub trait InputSop {
    fn current(&self) -> StokesVector;
    fn advance(&mut self, dt: f64);
}

/// Target SOP as a function of time.
pub trait TargetSop {
    fn target_at(&self, t: f64) -> StokesVector;
}

/// Fixed SOP, for static scenarios.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub StokesVector);

impl InputSop for Constant {
    fn current(&self) -> StokesVector {
        self.0
    }

    fn advance(&mut self, _dt: f64) {}
}

impl TargetSop for Constant {
    fn target_at(&self, _t: f64) -> StokesVector {
        self.0
    }
}

/// How gradient probes consume simulated time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTiming {
    /// All probes of one iteration fit inside the loop period.
    #[default]
    Shared,
    /// Every probe costs a full loop period, during which the input drifts.
    Strict,
}

/// Random streams and measurement model of one episode.
pub struct EpisodeIo<'a, R: Rng> {
    pub noise: &'a NoiseModel,
    /// Stream for the per-iteration polarimeter reading.
    pub noise_rng: &'a mut R,
    /// Stream for gradient-probe measurements.
    pub sgd_rng: &'a mut R,
}

/// Closed-loop run: measure, decide, apply, for `steps` iterations.
///
/// Each sample records the voltages in force during the iteration, the true
/// output they produced, and the mode the controller chose in response.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R, I, T>(
    input: &mut I,
    targets: &T,
    io: EpisodeIo<'_, R>,
    cfg: &ControllerConfig,
    model: &DeviceModel,
    steps: usize,
    dt: f64,
    timing: ProbeTiming,
) -> Result<Vec<TraceSample>>
where
    R: Rng,
    I: InputSop,
    T: TargetSop,
{
    let start = ControllerState::initial(cfg);
    run_episode_from(start, input, targets, io, cfg, model, steps, dt, timing)
}

/// [`run_episode`] starting from an arbitrary controller state.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_from<R, I, T>(
    start: ControllerState,
    input: &mut I,
    targets: &T,
    io: EpisodeIo<'_, R>,
    cfg: &ControllerConfig,
    model: &DeviceModel,
    steps: usize,
    dt: f64,
    timing: ProbeTiming,
) -> Result<Vec<TraceSample>>
where
    R: Rng,
    I: InputSop,
    T: TargetSop,
{
    if steps == 0 {
        return Err(Error::field("steps", "must be >= 1"));
    }
    let EpisodeIo {
        noise,
        noise_rng,
        sgd_rng,
    } = io;
    let mut state = start;
    let mut trace = Vec::with_capacity(steps);
    let mut extra_time = 0.0;

    for k in 0..steps {
        let t = k as f64 * dt + extra_time;
        let s_in = input.current();
        let s_target = targets.target_at(t);
        let applied = state.electrode_voltages();
        let s_out = device_transfer(model, applied, s_in)?;
        let measured = measure(s_out, noise, noise_rng);

        let mut probe_time = 0.0;
        let probe = |x: VoltagePair, r: &mut R| -> Result<f64> {
            if timing == ProbeTiming::Strict {
                input.advance(dt);
                probe_time += dt;
            }
            let out =
                device_transfer(model, ElectrodeVoltages::new(x.v_a, x.v_c), input.current())?;
            Ok(cost(measure(out, noise, r), s_target))
        };
        let next = controller_step(&state, measured, s_target, cfg, probe, sgd_rng)?;
        extra_time += probe_time;

        trace.push(TraceSample {
            t,
            s_in,
            s_out,
            s_target,
            voltages: applied,
            mode: next.mode,
            error: sop_distance(s_out, s_target),
            clamped: next.clamped,
        });
        state = next;
        input.advance(dt);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{voltages_from_setting, RetarderSetting};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cal() -> CalibrationConstants {
        CalibrationConstants::default()
    }

    fn noiseless_probe(
        model: DeviceModel,
        s_in: StokesVector,
        s_target: StokesVector,
    ) -> impl FnMut(VoltagePair, &mut ChaCha8Rng) -> Result<f64> {
        move |x, _| {
            let out = device_transfer(&model, ElectrodeVoltages::new(x.v_a, x.v_c), s_in)?;
            Ok(cost(out, s_target))
        }
    }

    #[test]
    fn at_target_fixed_point() {
        let cfg = ControllerConfig::new(cal());
        let model = DeviceModel::new(cal());
        let s_in = StokesVector::new(0.0, 0.6, 0.8).unwrap();
        let v = voltages_from_setting(RetarderSetting::new(1.0, 0.3).unwrap(), cal());
        let state = ControllerState {
            voltages: VoltagePair::new(v.v_a, v.v_c),
            ..ControllerState::initial(&cfg)
        };
        let s_out = device_transfer(&model, v, s_in).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = controller_step(
            &state,
            s_out,
            s_out,
            &cfg,
            noiseless_probe(model, s_in, s_out),
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.mode, Mode::Sgd);
        assert!((next.voltages.v_a - v.v_a).abs() < 1e-9);
        assert!((next.voltages.v_c - v.v_c).abs() < 1e-9);
    }

    #[test]
    fn antipodal_target_is_reached_in_one_rotation() {
        let cfg = ControllerConfig::new(cal());
        let model = DeviceModel::new(cal());
        let s_in = StokesVector::new(0.36, 0.48, 0.8).unwrap();
        let s_target = StokesVector::from_direction(-s_in.as_vec()).unwrap();
        let state = ControllerState::initial(&cfg);
        let s_out = device_transfer(&model, state.electrode_voltages(), s_in).unwrap();
        assert!((sop_distance(s_out, s_target) - 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = controller_step(
            &state,
            s_out,
            s_target,
            &cfg,
            noiseless_probe(model, s_in, s_target),
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.mode, Mode::Rotation);
        let after = device_transfer(&model, next.electrode_voltages(), s_in).unwrap();
        assert!(sop_distance(after, s_target) < 1e-6);
    }

    #[test]
    fn threshold_tie_goes_to_sgd() {
        let cfg = ControllerConfig::new(cal());
        let state = ControllerState::initial(&cfg);
        // two SOPs on the equator exactly 0.3 apart in chord
        let half = (0.15f64).asin();
        let a = StokesVector::new(half.cos(), half.sin(), 0.0).unwrap();
        let b = StokesVector::new(half.cos(), -half.sin(), 0.0).unwrap();
        let d = sop_distance(a, b);
        let cfg = ControllerConfig {
            switch_threshold: d,
            ..cfg
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = controller_step(
            &state,
            a,
            b,
            &cfg,
            |_, _: &mut ChaCha8Rng| Ok(0.0),
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.mode, Mode::Sgd);
        let cfg = ControllerConfig {
            switch_threshold: d * (1.0 - 1e-12),
            ..cfg
        };
        let next = controller_step(
            &state,
            a,
            b,
            &cfg,
            |_, _: &mut ChaCha8Rng| Ok(0.0),
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.mode, Mode::Rotation);
    }

    #[test]
    fn out_of_range_plans_are_clamped_or_rejected() {
        // a weak stage needs far more than 1 V for a half-wave
        let weak = CalibrationConstants::new(40.0, 80.0, 0.0, 0.0).unwrap();
        let mut cfg = ControllerConfig::new(weak);
        cfg.voltage_limit = 1.0;
        let state = ControllerState::initial(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let never = |_: VoltagePair, _: &mut ChaCha8Rng| -> Result<f64> { unreachable!() };
        let next = controller_step(
            &state,
            StokesVector::H,
            StokesVector::V,
            &cfg,
            never,
            &mut rng,
        )
        .unwrap();
        assert!(next.clamped);
        assert!(next.voltages.v_a.abs() <= 1.0 && next.voltages.v_c.abs() <= 1.0);

        cfg.clamp_voltages = false;
        let res = controller_step(
            &state,
            StokesVector::H,
            StokesVector::V,
            &cfg,
            never,
            &mut rng,
        );
        assert!(matches!(res, Err(Error::VoltageOutOfRange { .. })));
    }

    #[test]
    fn episode_boundaries() {
        let cfg = ControllerConfig::new(cal());
        let model = DeviceModel::new(cal());
        let noise = NoiseModel::default();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let mut input = Constant(StokesVector::R);
        let run = |steps, input: &mut Constant, a: &mut ChaCha8Rng, b: &mut ChaCha8Rng| {
            let io = EpisodeIo {
                noise: &noise,
                noise_rng: a,
                sgd_rng: b,
            };
            run_episode(
                input,
                &Constant(StokesVector::H),
                io,
                &cfg,
                &model,
                steps,
                1e-6,
                ProbeTiming::Shared,
            )
        };
        assert!(run(0, &mut input, &mut a, &mut b).is_err());
        assert_eq!(run(1, &mut input, &mut a, &mut b).unwrap().len(), 1);
    }

    #[test]
    fn static_episode_converges() {
        let cfg = ControllerConfig::new(cal());
        let model = DeviceModel::new(cal());
        let noise = NoiseModel::default();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let mut input = Constant(StokesVector::new(0.48, -0.6, 0.64).unwrap());
        let io = EpisodeIo {
            noise: &noise,
            noise_rng: &mut a,
            sgd_rng: &mut b,
        };
        let trace = run_episode(
            &mut input,
            &Constant(StokesVector::A),
            io,
            &cfg,
            &model,
            100,
            1e-6,
            ProbeTiming::Shared,
        )
        .unwrap();
        assert_eq!(trace[0].mode, Mode::Rotation);
        assert!(trace.last().unwrap().error < 1e-6);
    }
}
