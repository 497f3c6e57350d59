//! One lithium-niobate polarization-controller stage.
//!
//! The stage is a linear retarder whose eigen-mode azimuth `alpha` and
//! normalized retardance `delta` are set through the voltages on electrodes A
//! and C (electrode B is grounded). On the Poincaré sphere it rotates every SOP
//! by `2π·delta` about the equatorial axis `(cos alpha, sin alpha, 0)`.
//!
//! Forward model, with `A = 2·v0` and `B = -v_pi`:
//!
//! ```text
//! V_a = 2·v0·δ·cos α − v_pi·δ·sin α + V_a_bias
//! V_b = 0
//! V_c = 2·v0·δ·cos α + v_pi·δ·sin α + V_c_bias
//! ```
//!
//! and its closed-form inverse, with `C = V_a − V_a_bias`, `D = V_c − V_c_bias`:
//!
//! ```text
//! δ·cos α = (C + D) / (2A)
//! δ·sin α = (C − D) / (2B)
//! ```

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Electrode, Error, Result};
use crate::sop::{
    quat_from_axis_angle, rotate, wrap_angle, AxisAngle, StokesVector, UnitQuaternion, Vec3,
};

/// Default drive range of one stage, in volts.
pub const DEFAULT_VOLTAGE_LIMIT: f64 = 70.0;

/// Retardance below which the azimuth is reported as 0.
pub const DELTA_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    /// Voltage that converts all power between TE and TM.
    pub v0: f64,
    /// Voltage producing a half-wave TE/TM phase shift.
    pub v_pi: f64,
    /// Zero-birefringence bias on electrode A.
    pub v_bias_a: f64,
    /// Zero-birefringence bias on electrode C.
    pub v_bias_c: f64,
}

impl CalibrationConstants {
    pub fn new(v0: f64, v_pi: f64, v_bias_a: f64, v_bias_c: f64) -> Result<Self> {
        let cal = CalibrationConstants {
            v0,
            v_pi,
            v_bias_a,
            v_bias_c,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v0", self.v0), ("v_pi", self.v_pi)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::field(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        for (name, v) in [("v_bias_a", self.v_bias_a), ("v_bias_c", self.v_bias_c)] {
            if !v.is_finite() {
                return Err(Error::field(name, "must be finite"));
            }
        }
        Ok(())
    }

    /// Voltages at which the stage has zero birefringence.
    pub fn bias(&self) -> ElectrodeVoltages {
        ElectrodeVoltages::new(self.v_bias_a, self.v_bias_c)
    }
}

impl Default for CalibrationConstants {
    fn default() -> Self {
        CalibrationConstants {
            v0: 12.0,
            v_pi: 26.0,
            v_bias_a: 2.5,
            v_bias_c: -1.5,
        }
    }
}

/// Eigen-mode azimuth `alpha ∈ [0, 2π)` and normalized retardance `delta ∈ [0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetarderSetting {
    alpha: f64,
    delta: f64,
}

impl RetarderSetting {
    pub const ZERO: RetarderSetting = RetarderSetting {
        alpha: 0.0,
        delta: 0.0,
    };

    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        if !(alpha.is_finite() && (0.0..TAU).contains(&alpha)) {
            return Err(Error::field(
                "alpha",
                format!("must lie in [0, 2π), got {alpha}"),
            ));
        }
        if !(delta.is_finite() && (0.0..1.0).contains(&delta)) {
            return Err(Error::field(
                "delta",
                format!("must lie in [0, 1), got {delta}"),
            ));
        }
        Ok(RetarderSetting { alpha, delta })
    }

    /// Maps any finite (alpha, delta) onto the equivalent canonical setting.
    ///
    /// Negative retardance is realized by flipping the axis; whole turns of
    /// retardance are dropped.
    pub fn canonical(alpha: f64, delta: f64) -> Self {
        let (alpha, delta) = if delta < 0.0 {
            (alpha + PI, -delta)
        } else {
            (alpha, delta)
        };
        let mut delta = delta.fract();
        if delta >= 1.0 {
            delta = 0.0;
        }
        RetarderSetting {
            alpha: wrap_angle(alpha),
            delta,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Retardance in radians, `2π·delta`.
    pub fn theta(&self) -> f64 {
        TAU * self.delta
    }

    /// Unit eigen-mode on the equator.
    pub fn eigen_mode(&self) -> Vec3 {
        let (s, c) = self.alpha.sin_cos();
        Vec3::new(c, s, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeVoltages {
    pub v_a: f64,
    pub v_b: f64,
    pub v_c: f64,
}

impl ElectrodeVoltages {
    /// Drive on A and C with B grounded.
    pub fn new(v_a: f64, v_c: f64) -> Self {
        ElectrodeVoltages { v_a, v_b: 0.0, v_c }
    }

    pub fn max_abs(&self) -> f64 {
        self.v_a.abs().max(self.v_c.abs())
    }
}

/// Simulated physical stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub true_calibration: CalibrationConstants,
    #[serde(default)]
    pub dac_resolution_bits: Option<u32>,
    #[serde(default = "default_voltage_limit")]
    pub voltage_limit: f64,
}

fn default_voltage_limit() -> f64 {
    DEFAULT_VOLTAGE_LIMIT
}

impl DeviceModel {
    pub fn new(true_calibration: CalibrationConstants) -> Self {
        DeviceModel {
            true_calibration,
            dac_resolution_bits: None,
            voltage_limit: DEFAULT_VOLTAGE_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.true_calibration.validate()?;
        if let Some(bits) = self.dac_resolution_bits {
            if !(8..=24).contains(&bits) {
                return Err(Error::field(
                    "dac_resolution_bits",
                    format!("must be within [8, 24], got {bits}"),
                ));
            }
        }
        if !(self.voltage_limit.is_finite() && self.voltage_limit > 0.0) {
            return Err(Error::field("voltage_limit", "must be finite and > 0"));
        }
        Ok(())
    }

    /// DAC output for a commanded voltage: uniform rounding over `[-limit, limit]`.
    pub fn quantize(&self, v: f64) -> f64 {
        match self.dac_resolution_bits {
            None => v,
            Some(bits) => {
                let lim = self.voltage_limit;
                let step = 2.0 * lim / (1u64 << bits) as f64;
                (-lim + ((v + lim) / step).round() * step).clamp(-lim, lim)
            }
        }
    }
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel::new(CalibrationConstants::default())
    }
}

pub fn voltages_from_setting(
    setting: RetarderSetting,
    cal: CalibrationConstants,
) -> ElectrodeVoltages {
    let (s, c) = setting.alpha.sin_cos();
    let d = setting.delta;
    let common = 2.0 * cal.v0 * d * c;
    let diff = cal.v_pi * d * s;
    ElectrodeVoltages::new(common - diff + cal.v_bias_a, common + diff + cal.v_bias_c)
}

/// Inverts the voltage model. Retardance beyond a whole turn is wrapped, which
/// leaves the stage rotation unchanged.
pub fn setting_from_voltages(v: ElectrodeVoltages, cal: CalibrationConstants) -> RetarderSetting {
    let a = 2.0 * cal.v0;
    let b = -cal.v_pi;
    let c = v.v_a - cal.v_bias_a;
    let d = v.v_c - cal.v_bias_c;
    let cos_part = (c + d) / (2.0 * a);
    let sin_part = (c - d) / (2.0 * b);
    let delta = cos_part.hypot(sin_part);
    if delta.is_nan() || delta < DELTA_EPSILON {
        return RetarderSetting::ZERO;
    }
    let alpha = (sin_part / delta).atan2(cos_part / delta);
    RetarderSetting::canonical(alpha, delta)
}

pub fn rotation_from_setting(setting: RetarderSetting) -> UnitQuaternion {
    let aa =
        AxisAngle::new(setting.eigen_mode(), setting.theta()).expect("eigen-mode is a unit vector");
    quat_from_axis_angle(aa)
}

pub fn validate_range(v: ElectrodeVoltages, limit: f64) -> Result<()> {
    if v.v_b != 0.0 {
        return Err(Error::VoltageOutOfRange {
            electrode: Electrode::B,
            value: v.v_b,
            limit,
        });
    }
    for (electrode, value) in [(Electrode::A, v.v_a), (Electrode::C, v.v_c)] {
        if value.is_nan() || value.abs() > limit {
            return Err(Error::VoltageOutOfRange {
                electrode,
                value,
                limit,
            });
        }
    }
    Ok(())
}

/// What the physical stage does to light under commanded voltages `v`.
pub fn device_transfer(
    model: &DeviceModel,
    v: ElectrodeVoltages,
    s_in: StokesVector,
) -> Result<StokesVector> {
    validate_range(v, model.voltage_limit)?;
    let applied = ElectrodeVoltages::new(model.quantize(v.v_a), model.quantize(v.v_c));
    let setting = setting_from_voltages(applied, model.true_calibration);
    Ok(rotate(rotation_from_setting(setting), s_in))
}

/// On-disk calibration/device description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub v0: f64,
    pub v_pi: f64,
    pub v_bias_a: f64,
    pub v_bias_c: f64,
    #[serde(default = "default_voltage_limit")]
    pub voltage_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dac_resolution_bits: Option<u32>,
}

impl CalibrationFile {
    /// Parses and validates a calibration document. Syntax errors carry the
    /// line and column reported by the JSON parser.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CalibrationFile = serde_json::from_str(text).map_err(|e| {
            Error::field(
                "calibration",
                format!("{e} (line {}, column {})", e.line(), e.column()),
            )
        })?;
        file.device().validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> std::io::Result<Result<Self>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json_str(&text))
    }

    pub fn calibration(&self) -> CalibrationConstants {
        CalibrationConstants {
            v0: self.v0,
            v_pi: self.v_pi,
            v_bias_a: self.v_bias_a,
            v_bias_c: self.v_bias_c,
        }
    }

    pub fn device(&self) -> DeviceModel {
        DeviceModel {
            true_calibration: self.calibration(),
            dac_resolution_bits: self.dac_resolution_bits,
            voltage_limit: self.voltage_limit,
        }
    }
}

impl From<DeviceModel> for CalibrationFile {
    fn from(m: DeviceModel) -> Self {
        let c = m.true_calibration;
        CalibrationFile {
            v0: c.v0,
            v_pi: c.v_pi,
            v_bias_a: c.v_bias_a,
            v_bias_c: c.v_bias_c,
            voltage_limit: m.voltage_limit,
            dac_resolution_bits: m.dac_resolution_bits,
        }
    }
}
