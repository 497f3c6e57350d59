//! `polctl` command-line front end.
//!
//! Exit codes: 0 success, 1 check failed, 2 invalid input, 3 I/O failure.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::device::{
    device_transfer, rotation_from_setting, setting_from_voltages, voltages_from_setting,
    CalibrationConstants, CalibrationFile, DeviceModel, ElectrodeVoltages, RetarderSetting,
};
use crate::error::Error;
use crate::estimator::estimate_input;
use crate::planner::{plan_rotation, plan_to_voltages};
use crate::sim::{run_simulation, SimConfig, Summary};
use crate::sop::{rotate, sop_distance, StokesVector};
use crate::trace::{write_trace, TraceFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Directory prepended to relative `--out` paths when set.
pub const OUT_DIR_ENV: &str = "POLCTL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "polctl",
    version,
    about = "Single-waveplate polarization controller simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a closed-loop scenario and write its trace and summary.
    Simulate(SimulateArgs),
    /// Plan the rotation taking one SOP to another.
    #[command(allow_negative_numbers = true)]
    Plan(PlanArgs),
    /// Recover the input SOP from a measured output and the applied voltages.
    #[command(allow_negative_numbers = true)]
    Estimate(EstimateArgs),
    /// Verify a calibration against a simulated device.
    CalibrateCheck(CalibrateCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for TraceFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TraceFormat::Csv,
            FormatArg::Jsonl => TraceFormat::Jsonl,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON (a single scenario or `{"scenarios": [...]}`).
    #[arg(long)]
    pub config: PathBuf,
    /// Trace destination; standard output when omitted or `-`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Replaces the master seed (scenario `i` of a list gets `N + i`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// s1 s2 s3 of the input SOP followed by s1 s2 s3 of the target.
    #[arg(num_args = 6, value_names = ["S1_IN", "S2_IN", "S3_IN", "S1_TGT", "S2_TGT", "S3_TGT"])]
    pub sops: Vec<f64>,
    /// Calibration JSON; the built-in fixture when omitted.
    #[arg(long, alias = "config")]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// s1 s2 s3 of the measured output SOP, then V_a and V_c in volts.
    #[arg(num_args = 5, value_names = ["S1_OUT", "S2_OUT", "S3_OUT", "V_A", "V_C"])]
    pub values: Vec<f64>,
    #[arg(long, alias = "config")]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateCheckArgs {
    /// Candidate calibration JSON.
    #[arg(long, alias = "config")]
    pub calibration: PathBuf,
    /// Simulated device (true calibration, range, DAC); the candidate itself when omitted.
    #[arg(long)]
    pub device: Option<PathBuf>,
    /// Grid points per axis over alpha x delta.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..=4096))]
    pub grid: u32,
    /// Largest acceptable SOP chord error.
    #[arg(long, default_value_t = 1e-6)]
    pub bound: f64,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::invalid(e)
    }
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let stdout = io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Plan(a) => cmd_plan(&a, out),
        Command::Estimate(a) => cmd_estimate(&a, out),
        Command::CalibrateCheck(a) => cmd_calibrate_check(&a, out),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_calibration(path: Option<&Path>) -> Result<CalibrationFile, CliError> {
    match path {
        None => Ok(CalibrationFile::from(DeviceModel::default())),
        Some(p) => Ok(CalibrationFile::from_json_str(&read_text(p)?)
            .map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?),
    }
}

fn print_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn sop_arg(v: &[f64]) -> Result<StokesVector, CliError> {
    Ok(StokesVector::new(v[0], v[1], v[2])?)
}

fn voltages_json(v: ElectrodeVoltages) -> serde_json::Value {
    json!({"v_a": v.v_a, "v_b": v.v_b, "v_c": v.v_c})
}

fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn summary_path(trace: &Path) -> PathBuf {
    trace.with_extension("summary.json")
}

fn indexed_path(path: &Path, i: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{i}"),
    };
    path.with_file_name(name)
}

fn write_outputs(
    trace_path: &Path,
    trace: &[crate::trace::TraceSample],
    summary: &Summary,
    format: TraceFormat,
) -> Result<(), CliError> {
    if let Some(dir) = trace_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(trace_path).map_err(|e| CliError::io(trace_path, e))?;
    write_trace(BufWriter::new(file), trace, format).map_err(|e| CliError::io(trace_path, e))?;
    let spath = summary_path(trace_path);
    let text = serde_json::to_string_pretty(summary).expect("serializable");
    std::fs::write(&spath, text + "\n").map_err(|e| CliError::io(&spath, e))
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let text = read_text(&a.config)?;
    let mut scenarios = SimConfig::list_from_json_str(&text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        for (i, s) in scenarios.iter_mut().enumerate() {
            s.master_seed = seed.wrapping_add(i as u64);
        }
    }
    let format = TraceFormat::from(a.format);
    let target = a
        .out
        .as_deref()
        .filter(|p| *p != Path::new("-"))
        .map(resolve_out);

    if scenarios.len() == 1 {
        let result = run_simulation(&scenarios[0])?;
        match target {
            Some(path) => write_outputs(&path, &result.trace, &result.summary, format)?,
            None => {
                write_trace(&mut *out, &result.trace, format)
                    .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
                eprintln!(
                    "{}",
                    serde_json::to_string_pretty(&result.summary).expect("serializable")
                );
            }
        }
        return Ok(EXIT_OK);
    }

    let Some(path) = target else {
        return Err(CliError::invalid(
            "a scenario list needs --out to name per-run files",
        ));
    };
    let results: Vec<Result<(), CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                let run_path = indexed_path(&path, i);
                scope.spawn(move || {
                    let r = run_simulation(cfg)
                        .map_err(|e| CliError::invalid(format!("scenario {i}: {e}")))?;
                    write_outputs(&run_path, &r.trace, &r.summary, format)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    // Report the first failure in scenario order.
    results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EXIT_OK)
}

fn cmd_plan(a: &PlanArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = load_calibration(a.calibration.as_deref())?;
    let s_in = sop_arg(&a.sops[0..3])?;
    let s_target = sop_arg(&a.sops[3..6])?;
    let plan = plan_rotation(s_in, s_target)?;
    let v = plan_to_voltages(&plan, file.calibration(), file.voltage_limit)?;
    let aa = plan.axis_angle();
    print_json(
        out,
        &json!({
            "axis": aa.axis().to_array(),
            "angle": aa.angle(),
            "center": plan.center().to_array(),
            "alpha": plan.setting().alpha(),
            "delta": plan.setting().delta(),
            "voltages": voltages_json(v),
        }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_estimate(a: &EstimateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = load_calibration(a.calibration.as_deref())?;
    let s_out = sop_arg(&a.values[0..3])?;
    let v = ElectrodeVoltages::new(a.values[3], a.values[4]);
    if !(v.v_a.is_finite() && v.v_c.is_finite()) {
        return Err(CliError::invalid(Error::NonFinite("voltage")));
    }
    let setting = setting_from_voltages(v, file.calibration());
    let s_in = estimate_input(s_out, v, file.calibration());
    print_json(
        out,
        &json!({
            "s_in": s_in.to_array(),
            "alpha": setting.alpha(),
            "delta": setting.delta(),
        }),
    )?;
    Ok(EXIT_OK)
}

/// Largest residuals seen by a calibration sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub points: usize,
    pub max_alpha_residual: f64,
    pub max_delta_residual: f64,
    pub max_sop_error: f64,
}

/// Sweeps `grid x grid` settings, commanding each under `candidate` and
/// comparing the intended rotation with what `device` actually does to the
/// three basis SOPs H, D and R.
pub fn calibration_sweep(
    candidate: CalibrationConstants,
    device: &DeviceModel,
    grid: u32,
) -> crate::Result<CheckReport> {
    let n = grid.max(1);
    let probes = [StokesVector::H, StokesVector::D, StokesVector::R];
    let mut report = CheckReport {
        points: 0,
        max_alpha_residual: 0.0,
        max_delta_residual: 0.0,
        max_sop_error: 0.0,
    };
    for i in 0..n {
        for j in 0..n {
            let alpha = TAU * f64::from(i) / f64::from(n);
            let delta = (f64::from(j) + 0.5) / f64::from(n);
            let setting = RetarderSetting::new(alpha, delta)?;
            let v = voltages_from_setting(setting, candidate);
            let back = setting_from_voltages(v, candidate);
            let da = (back.alpha() - alpha).rem_euclid(TAU);
            report.max_alpha_residual = report.max_alpha_residual.max(da.min(TAU - da));
            report.max_delta_residual = report.max_delta_residual.max((back.delta() - delta).abs());
            let q = rotation_from_setting(setting);
            for s in probes {
                let actual = device_transfer(device, v, s)?;
                report.max_sop_error = report.max_sop_error.max(sop_distance(actual, rotate(q, s)));
            }
            report.points += 1;
        }
    }
    Ok(report)
}

fn cmd_calibrate_check(a: &CalibrateCheckArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if !(a.bound.is_finite() && a.bound >= 0.0) {
        return Err(CliError::invalid(
            "invalid `bound`: must be finite and >= 0",
        ));
    }
    let candidate = load_calibration(Some(&a.calibration))?;
    let device = match &a.device {
        Some(p) => load_calibration(Some(p))?,
        None => candidate,
    };
    let report = match calibration_sweep(candidate.calibration(), &device.device(), a.grid) {
        Ok(r) => r,
        Err(e @ Error::VoltageOutOfRange { .. }) => {
            print_json(out, &json!({"passed": false, "reason": e.to_string()}))?;
            return Ok(EXIT_CHECK_FAILED);
        }
        Err(e) => return Err(e.into()),
    };
    let passed = report.max_sop_error < a.bound;
    print_json(
        out,
        &json!({
            "grid": a.grid,
            "points": report.points,
            "max_alpha_residual": report.max_alpha_residual,
            "max_delta_residual": report.max_delta_residual,
            "max_sop_error": report.max_sop_error,
            "bound": a.bound,
            "passed": passed,
        }),
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}
