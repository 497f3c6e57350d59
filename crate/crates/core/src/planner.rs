//! Analytical rotation planning on the Poincaré sphere.
//!
//! A linear retarder can only rotate about an equatorial axis. Any axis `e`
//! orthogonal to `s_in - s_target` puts both SOPs on the same circle (equal
//! projections onto `e`), so a rotation about `e` through the angle between
//! the two "clock hands" measured from the circle center maps one onto the
//! other. Choosing `e` also orthogonal to the pole fixes it in the equatorial
//! plane.

use std::f64::consts::TAU;

use crate::device::{
    validate_range, voltages_from_setting, CalibrationConstants, ElectrodeVoltages, RetarderSetting,
};
use crate::error::{Error, Result};
use crate::sop::{
    quat_from_axis_angle, rotate, sop_distance, AxisAngle, StokesVector, Tolerances,
    UnitQuaternion, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationPlan {
    axis_angle: AxisAngle,
    center: Vec3,
    setting: RetarderSetting,
}

impl RotationPlan {
    pub fn identity() -> Self {
        RotationPlan {
            axis_angle: AxisAngle::new(Vec3::X, 0.0).expect("unit axis"),
            center: Vec3::ZERO,
            setting: RetarderSetting::ZERO,
        }
    }

    pub fn axis_angle(&self) -> AxisAngle {
        self.axis_angle
    }

    /// Center of the rotation circle, `(s_in·e) e`.
    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn setting(&self) -> RetarderSetting {
        self.setting
    }

    pub fn quaternion(&self) -> UnitQuaternion {
        quat_from_axis_angle(self.axis_angle)
    }
}

pub fn plan_rotation(s_in: StokesVector, s_target: StokesVector) -> Result<RotationPlan> {
    let tol = Tolerances::DEFAULT;
    let (a, b) = (s_in.as_vec(), s_target.as_vec());
    let chord = a - b;
    if chord.norm() < tol.parallel {
        return Ok(RotationPlan::identity());
    }

    let mut axis = [Vec3::Z, a, b, Vec3::X]
        .into_iter()
        .map(|w| chord.cross(w))
        .find(|c| c.norm() >= tol.parallel)
        .and_then(Vec3::normalized)
        .ok_or(Error::NonFinite("rotation axis"))?;
    // The fallbacks only trigger when the chord is along the pole; force the
    // axis back onto the equator to remove rounding residue.
    axis = Vec3::new(axis.x, axis.y, 0.0)
        .normalized()
        .ok_or(Error::NonFinite("rotation axis"))?;

    let center = axis * a.dot(axis);
    let from = a - center;
    let to = b - center;
    let cross = from.cross(to);
    let mut angle = cross.norm().atan2(from.dot(to));
    if cross.dot(axis) < 0.0 {
        axis = -axis;
    }
    if !angle.is_finite() {
        return Err(Error::NonFinite("rotation angle"));
    }
    angle = angle.clamp(0.0, std::f64::consts::PI);

    let axis_angle = AxisAngle::new(axis, angle)?;
    let plan = RotationPlan {
        axis_angle,
        center: axis * a.dot(axis),
        setting: RetarderSetting::canonical(axis.y.atan2(axis.x), angle / TAU),
    };

    let residual = sop_distance(rotate(plan.quaternion(), s_in), s_target);
    if residual.is_nan() || residual > tol.geometric {
        return Err(Error::PlanVerification(residual));
    }
    Ok(plan)
}

/// Drive voltages realizing `plan`, checked against the drive range.
pub fn plan_to_voltages(
    plan: &RotationPlan,
    cal: CalibrationConstants,
    limit: f64,
) -> Result<ElectrodeVoltages> {
    let v = voltages_from_setting(plan.setting, cal);
    validate_range(v, limit)?;
    Ok(v)
}
