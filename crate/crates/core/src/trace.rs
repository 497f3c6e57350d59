//! Per-iteration trace records and their CSV / JSON-lines encodings.
//!
//! Floating-point fields are written in shortest round-trip form, so parsing
//! an emitted trace reproduces the in-memory samples bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::controller::Mode;
use crate::device::ElectrodeVoltages;
use crate::error::{Error, Result};
use crate::sop::StokesVector;

pub const CSV_HEADER: &str =
    "t,s1_in,s2_in,s3_in,s1_out,s2_out,s3_out,s1_tgt,s2_tgt,s3_tgt,v_a,v_c,mode,error,clamped";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// Simulated time, seconds.
    pub t: f64,
    pub s_in: StokesVector,
    pub s_out: StokesVector,
    pub s_target: StokesVector,
    /// Voltages in force during this iteration.
    pub voltages: ElectrodeVoltages,
    /// Mode chosen in response to this iteration's measurement.
    pub mode: Mode,
    /// Chord distance between `s_out` and `s_target`.
    pub error: f64,
    /// Whether the response command was clamped into range.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceFormat {
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "jsonl")]
    Jsonl,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    t: f64,
    s1_in: f64,
    s2_in: f64,
    s3_in: f64,
    s1_out: f64,
    s2_out: f64,
    s3_out: f64,
    s1_tgt: f64,
    s2_tgt: f64,
    s3_tgt: f64,
    v_a: f64,
    v_c: f64,
    mode: String,
    error: f64,
    clamped: u8,
}

impl From<&TraceSample> for Row {
    fn from(s: &TraceSample) -> Self {
        let [s1_in, s2_in, s3_in] = s.s_in.to_array();
        let [s1_out, s2_out, s3_out] = s.s_out.to_array();
        let [s1_tgt, s2_tgt, s3_tgt] = s.s_target.to_array();
        Row {
            t: s.t,
            s1_in,
            s2_in,
            s3_in,
            s1_out,
            s2_out,
            s3_out,
            s1_tgt,
            s2_tgt,
            s3_tgt,
            v_a: s.voltages.v_a,
            v_c: s.voltages.v_c,
            mode: s.mode.tag().to_string(),
            error: s.error,
            clamped: u8::from(s.clamped),
        }
    }
}

impl TryFrom<Row> for TraceSample {
    type Error = Error;

    fn try_from(r: Row) -> Result<Self> {
        let mode = match r.mode.as_str() {
            "R" => Mode::Rotation,
            "G" => Mode::Sgd,
            other => {
                return Err(Error::field(
                    "mode",
                    format!("expected R or G, got {other:?}"),
                ))
            }
        };
        let clamped = match r.clamped {
            0 => false,
            1 => true,
            other => {
                return Err(Error::field(
                    "clamped",
                    format!("expected 0 or 1, got {other}"),
                ))
            }
        };
        Ok(TraceSample {
            t: r.t,
            s_in: StokesVector::exact(r.s1_in, r.s2_in, r.s3_in)?,
            s_out: StokesVector::exact(r.s1_out, r.s2_out, r.s3_out)?,
            s_target: StokesVector::exact(r.s1_tgt, r.s2_tgt, r.s3_tgt)?,
            voltages: ElectrodeVoltages::new(r.v_a, r.v_c),
            mode,
            error: r.error,
            clamped,
        })
    }
}

fn io_err(e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

pub fn write_csv<W: Write>(out: W, trace: &[TraceSample]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in trace {
        w.serialize(Row::from(s)).map_err(io_err)?;
    }
    if trace.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(io_err)?;
    }
    w.flush()
}

pub fn write_jsonl<W: Write>(mut out: W, trace: &[TraceSample]) -> std::io::Result<()> {
    for s in trace {
        serde_json::to_writer(&mut out, &Row::from(s)).map_err(io_err)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_trace<W: Write>(
    out: W,
    trace: &[TraceSample],
    format: TraceFormat,
) -> std::io::Result<()> {
    match format {
        TraceFormat::Csv => write_csv(out, trace),
        TraceFormat::Jsonl => write_jsonl(out, trace),
    }
}

/// Parses a CSV trace; the header must match [`CSV_HEADER`] exactly.
pub fn read_csv(input: &[u8]) -> Result<Vec<TraceSample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r
        .headers()
        .map_err(|e| Error::field("trace", e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::field(
            "trace",
            format!("unexpected header {header:?}"),
        ));
    }
    r.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            let row =
                row.map_err(|e| Error::field(format!("trace row {}", i + 1), e.to_string()))?;
            TraceSample::try_from(row)
        })
        .collect()
}

pub fn read_jsonl(input: &[u8]) -> Result<Vec<TraceSample>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(l) if l.trim().is_empty()))
        .map(|(i, line)| {
            let line =
                line.map_err(|e| Error::field(format!("trace line {}", i + 1), e.to_string()))?;
            let row: Row = serde_json::from_str(&line)
                .map_err(|e| Error::field(format!("trace line {}", i + 1), e.to_string()))?;
            TraceSample::try_from(row)
        })
        .collect()
}
