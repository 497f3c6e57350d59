use std::fmt;

use thiserror::Error;

/// One of the two driven electrodes of a controller stage (B is held at 0 V).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Electrode {
    A,
    B,
    C,
}

impl fmt::Display for Electrode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Electrode::A => "A",
            Electrode::B => "B",
            Electrode::C => "C",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Stokes intensity s0 must be positive, got {0}")]
    ZeroIntensity(f64),

    #[error("degree of polarization {dop} is outside 1 +/- {tolerance}")]
    Depolarized { dop: f64, tolerance: f64 },

    #[error("vector ({0}, {1}, {2}) is not a unit vector")]
    NotUnit(f64, f64, f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("electrode {electrode} voltage {value} V is outside the +/-{limit} V drive range")]
    VoltageOutOfRange {
        electrode: Electrode,
        value: f64,
        limit: f64,
    },

    #[error("rotation plan failed verification: residual {0}")]
    PlanVerification(f64),

    #[error("invalid `{field}`: {message}")]
    InvalidField { field: String, message: String },
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
