//! Recovery of the (unmeasured) input SOP.

use crate::device::{
    rotation_from_setting, setting_from_voltages, CalibrationConstants, ElectrodeVoltages,
};
use crate::sop::{inverse, rotate, StokesVector};

/// Undoes the stage rotation implied by the commanded voltages under `cal`.
pub fn estimate_input(
    s_out_measured: StokesVector,
    v: ElectrodeVoltages,
    cal: CalibrationConstants,
) -> StokesVector {
    let q = rotation_from_setting(setting_from_voltages(v, cal));
    rotate(inverse(q), s_out_measured)
}
