//! Stochastic gradient descent on the electrode-voltage pair.
//!
//! The plant has no usable analytic gradient, so it is estimated from
//! measurements: central differences of the cost around the operating point,
//! averaged over `m_probes` repetitions to suppress polarimeter noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sop::{sop_distance, StokesVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    /// Finite-difference perturbation, volts.
    pub epsilon_probe: f64,
    /// Number of repeated central differences averaged per component.
    pub m_probes: u32,
    /// Dimensionless gain of the error-scaled step.
    pub k_step: f64,
    /// Largest change of either voltage in one iteration, volts.
    pub max_step_volts: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epsilon_probe: 1e-3,
            m_probes: 1,
            k_step: 1.8,
            max_step_volts: 5.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::field(
                    format!("sgd.{name}"),
                    format!("must be finite and > 0, got {v}"),
                ))
            }
        };
        positive("epsilon_probe", self.epsilon_probe)?;
        positive("k_step", self.k_step)?;
        positive("max_step_volts", self.max_step_volts)?;
        if self.m_probes < 1 {
            return Err(Error::field("sgd.m_probes", "must be >= 1"));
        }
        Ok(())
    }

    /// Measurements consumed by one gradient estimate.
    pub fn probes_per_estimate(&self) -> u32 {
        4 * self.m_probes
    }
}

/// Voltages on electrodes A and C, the optimization variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltagePair {
    pub v_a: f64,
    pub v_c: f64,
}

impl VoltagePair {
    pub fn new(v_a: f64, v_c: f64) -> Self {
        VoltagePair { v_a, v_c }
    }

    fn shifted(self, component: usize, by: f64) -> Self {
        match component {
            0 => VoltagePair::new(self.v_a + by, self.v_c),
            _ => VoltagePair::new(self.v_a, self.v_c + by),
        }
    }
}

/// Squared chord distance to the target.
pub fn cost(s_out: StokesVector, s_target: StokesVector) -> f64 {
    let d = sop_distance(s_out, s_target);
    d * d
}

/// Averaged central-difference gradient, in cost units per volt.
///
/// `probe` measures the cost at a voltage pair and may draw measurement noise
/// from the supplied stream. Probes are issued as `+a, -a, +c, -c` per round.
pub fn estimate_gradient<R, F>(
    mut probe: F,
    x: VoltagePair,
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<[f64; 2]>
where
    R: Rng + ?Sized,
    F: FnMut(VoltagePair, &mut R) -> Result<f64>,
{
    let eps = cfg.epsilon_probe;
    let mut grad = [0.0; 2];
    for _ in 0..cfg.m_probes {
        for (i, g) in grad.iter_mut().enumerate() {
            let plus = probe(x.shifted(i, eps), rng)?;
            let minus = probe(x.shifted(i, -eps), rng)?;
            *g += (plus - minus) / (2.0 * eps);
        }
    }
    let m = f64::from(cfg.m_probes);
    Ok(grad.map(|g| g / m))
}

/// One descent step.
///
/// The step size is `k_step · error² / |grad|²`, so the first-order change of
/// the output SOP is proportional to the current error whatever the local
/// sensitivity of the plant. Each voltage moves by at most `max_step_volts`.
pub fn sgd_step(x: VoltagePair, grad: [f64; 2], error: f64, cfg: &SgdConfig) -> VoltagePair {
    let g2 = grad[0] * grad[0] + grad[1] * grad[1];
    if !(g2 > 0.0 && g2.is_finite() && error.is_finite()) {
        return x;
    }
    let alpha = cfg.k_step * error * error / g2;
    let cap = cfg.max_step_volts;
    let da = (-alpha * grad[0]).clamp(-cap, cap);
    let dc = (-alpha * grad[1]).clamp(-cap, cap);
    VoltagePair::new(x.v_a + da, x.v_c + dc)
}
