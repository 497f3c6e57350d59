//! Endless polarization control with a single rotatable waveplate.
//!
//! The crate models a lithium-niobate polarization transformer as a linear
//! retarder with electrically steerable eigenaxis and retardance, and drives it
//! with a two-mode controller: an analytic rotation whenever the output is far
//! from the target, and gradient descent on the electrode voltages for fine
//! tracking. A seeded simulator closes the loop against drifting input SOPs.

pub mod cli;
pub mod controller;
pub mod device;
pub mod error;
pub mod estimator;
pub mod planner;
pub mod sgd;
pub mod sim;
pub mod sop;
pub mod trace;

pub use controller::{controller_step, ControllerConfig, ControllerState, Mode};
pub use device::{CalibrationConstants, DeviceModel, ElectrodeVoltages, RetarderSetting};
pub use error::{Error, Result};
pub use planner::{plan_rotation, RotationPlan};
pub use sim::{run_simulation, SimConfig, Summary};
pub use sop::{StokesVector, UnitQuaternion};
pub use trace::TraceSample;
