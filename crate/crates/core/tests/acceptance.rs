//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Run with `cargo test --test acceptance`. Wall-clock limits are measured
//! in-process and assume the optimized test profile of this workspace.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use polctl::controller::{run_episode, Constant, ControllerConfig, EpisodeIo, ProbeTiming};
use polctl::device::{
    device_transfer, setting_from_voltages, validate_range, voltages_from_setting,
    CalibrationConstants, DeviceModel, ElectrodeVoltages, RetarderSetting,
};
use polctl::estimator::estimate_input;
use polctl::planner::plan_rotation;
use polctl::sgd::{cost, estimate_gradient, SgdConfig, VoltagePair};
use polctl::sim::{measure, rotations_outside_window, run_simulation, NoiseModel, SimConfig};
use polctl::sop::{sop_distance, StokesVector};
use polctl::trace::write_csv;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Marsaglia: uniform on the sphere without trigonometry
    loop {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let r2 = a * a + b * b;
        if r2 < 1.0 {
            let f = 2.0 * (1.0 - r2).sqrt();
            return [a * f, b * f, 1.0 - 2.0 * r2];
        }
    }
}

fn random_sop(rng: &mut ChaCha8Rng) -> StokesVector {
    let [x, y, z] = random_unit(rng);
    StokesVector::new(x, y, z).unwrap()
}

fn random_calibration(rng: &mut ChaCha8Rng) -> CalibrationConstants {
    CalibrationConstants::new(
        rng.random_range(5.0..=40.0),
        rng.random_range(5.0..=40.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    )
    .unwrap()
}

/// Rotation matrix about a unit axis (Rodrigues), independent of the quaternion code.
fn rodrigues(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn apply(m: [[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn chord(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn angle_residual(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn rotation_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_err, mut worst_s3) = (0.0f64, 0.0f64);
    for _ in 0..100_000 {
        let s_in = random_sop(&mut rng);
        let s_t = random_sop(&mut rng);
        let plan = plan_rotation(s_in, s_t).unwrap();
        let aa = plan.axis_angle();
        let axis = aa.axis().to_array();
        let mapped = apply(rodrigues(axis, aa.angle()), s_in.to_array());
        worst_err = worst_err.max(chord(mapped, s_t.to_array()));
        worst_s3 = worst_s3.max(axis[2].abs());
    }
    outcome(
        worst_err < 1e-9 && worst_s3 < 1e-12,
        format!("max chord error {worst_err:.3e} (< 1e-9), max |axis s3| {worst_s3:.3e} (< 1e-12)"),
    )
}

fn device_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_alpha, mut worst_delta) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let cal = random_calibration(&mut rng);
        let alpha = rng.random_range(0.0..TAU);
        let delta = rng.random_range(1e-6..1.0);
        let v = voltages_from_setting(RetarderSetting::new(alpha, delta).unwrap(), cal);
        let back = setting_from_voltages(v, cal);
        worst_alpha = worst_alpha.max(angle_residual(back.alpha(), alpha));
        worst_delta = worst_delta.max((back.delta() - delta).abs());
    }
    outcome(
        worst_alpha < 1e-9 && worst_delta < 1e-12,
        format!("max alpha residual {worst_alpha:.3e} (< 1e-9), max delta residual {worst_delta:.3e} (< 1e-12)"),
    )
}

fn input_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let cal = random_calibration(&mut rng);
        let model = DeviceModel::new(cal);
        let v = ElectrodeVoltages::new(
            rng.random_range(-70.0..=70.0),
            rng.random_range(-70.0..=70.0),
        );
        let s_in = random_sop(&mut rng);
        let out = device_transfer(&model, v, s_in).unwrap();
        worst = worst.max(sop_distance(estimate_input(out, v, cal), s_in));
    }
    outcome(
        worst < 1e-9,
        format!("max recovery error {worst:.3e} (< 1e-9)"),
    )
}

fn plant_cost(
    model: &DeviceModel,
    s_in: StokesVector,
    s_t: StokesVector,
    v_a: f64,
    v_c: f64,
) -> f64 {
    cost(
        device_transfer(model, ElectrodeVoltages::new(v_a, v_c), s_in).unwrap(),
        s_t,
    )
}

fn gradient_fidelity() -> Outcome {
    let model = DeviceModel::default();
    let cfg = SgdConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // Richardson-extrapolated central differences with a much larger step
    let richardson = |f: &dyn Fn(f64) -> f64, h: f64| {
        let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
        (4.0 * d(h / 2.0) - d(h)) / 3.0
    };
    let mut worst_rel = 0.0f64;
    let mut points = 0;
    while points < 100 {
        let s_in = random_sop(&mut rng);
        let s_t = random_sop(&mut rng);
        let (v_a, v_c) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let oracle = [
            richardson(&|h| plant_cost(&model, s_in, s_t, v_a + h, v_c), 0.05),
            richardson(&|h| plant_cost(&model, s_in, s_t, v_a, v_c + h), 0.05),
        ];
        let norm = oracle[0].hypot(oracle[1]);
        if norm < 1e-2 {
            continue;
        }
        let probe =
            |x: VoltagePair, _: &mut ChaCha8Rng| Ok(plant_cost(&model, s_in, s_t, x.v_a, x.v_c));
        let g = estimate_gradient(probe, VoltagePair::new(v_a, v_c), &cfg, &mut rng).unwrap();
        worst_rel = worst_rel.max((g[0] - oracle[0]).hypot(g[1] - oracle[1]) / norm);
        points += 1;
    }

    let noise = NoiseModel {
        polarimeter_sigma: 0.01,
        seed: None,
    };
    let s_in = StokesVector::new(0.6, 0.0, 0.8).unwrap();
    let s_t = StokesVector::D;
    let x = VoltagePair::new(7.0, -4.0);
    let trials = 2000;
    let samples: Vec<(f64, f64)> = [1u32, 4, 16, 64]
        .iter()
        .map(|&m| {
            let cfg = SgdConfig { m_probes: m, ..cfg };
            let est: Vec<f64> = (0..trials)
                .map(|_| {
                    let probe = |p: VoltagePair, r: &mut ChaCha8Rng| {
                        let out =
                            device_transfer(&model, ElectrodeVoltages::new(p.v_a, p.v_c), s_in)?;
                        Ok(cost(measure(out, &noise, r), s_t))
                    };
                    estimate_gradient(probe, x, &cfg, &mut rng).unwrap()[0]
                })
                .collect();
            let mean = est.iter().sum::<f64>() / trials as f64;
            let var = est.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            (f64::from(m).ln(), var.ln())
        })
        .collect();
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let slope = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum::<f64>()
        / samples.iter().map(|s| (s.0 - mx).powi(2)).sum::<f64>();

    outcome(
        worst_rel < 1e-3 && (slope + 1.0).abs() <= 0.1,
        format!("max relative gradient error {worst_rel:.3e} (< 1e-3), variance slope {slope:.4} (-1 +/- 0.1)"),
    )
}

fn static_convergence() -> Outcome {
    let model = DeviceModel::default();
    let cfg = ControllerConfig::new(model.true_calibration);
    let noise = NoiseModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut converged = 0;
    let mut slowest = 0;
    for _ in 0..100 {
        let s_in = random_sop(&mut rng);
        let s_t = random_sop(&mut rng);
        let (mut a, mut b) = (ChaCha8Rng::seed_from_u64(0), ChaCha8Rng::seed_from_u64(1));
        let io = EpisodeIo {
            noise: &noise,
            noise_rng: &mut a,
            sgd_rng: &mut b,
        };
        // sample k holds the output after k controller iterations
        let trace = run_episode(
            &mut Constant(s_in),
            &Constant(s_t),
            io,
            &cfg,
            &model,
            101,
            1e-6,
            ProbeTiming::Shared,
        )
        .unwrap();
        if let Some(k) = trace.iter().position(|s| s.error < 1e-6) {
            converged += 1;
            slowest = slowest.max(k);
        }
    }
    outcome(
        converged == 100,
        format!("{converged}/100 trials below 1e-6 within 100 iterations (slowest {slowest})"),
    )
}

fn scenario_csv(cfg: &SimConfig) -> Vec<u8> {
    let out = run_simulation(cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &out.trace).unwrap();
    buf
}

fn scenario_reproduction() -> Outcome {
    let cfg = SimConfig::default();
    let out = run_simulation(&cfg).unwrap();
    let late = rotations_outside_window(&out.trace, 5);
    let s = &out.summary;
    let passed = out.trace.len() == 100_000
        && late.is_empty()
        && s.fraction_below_threshold >= 0.95
        && s.max_abs_voltage <= 70.0;
    outcome(
        passed,
        format!(
            "{} iterations; (a) {} late rotation samples of {} total; (b) fraction below threshold {} (>= 0.95); (c) max |V| {:.3} (<= 70)",
            out.trace.len(),
            late.len(),
            s.mode_counts.rotation,
            s.fraction_below_threshold,
            s.max_abs_voltage
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = SimConfig::default();
    let first = scenario_csv(&cfg);
    let second = scenario_csv(&cfg);
    let other = scenario_csv(&SimConfig {
        master_seed: cfg.master_seed + 1,
        ..cfg.clone()
    });
    outcome(
        first == second && first != other,
        format!(
            "identical traces: {} ({} bytes); another seed differs: {}",
            first == second,
            first.len(),
            first != other
        ),
    )
}

fn voltage_range() -> Outcome {
    let lim = 70.0f64;
    let above = f64::from_bits(lim.to_bits() + 1);
    let below = f64::from_bits(lim.to_bits() - 1);
    let with_b = |v_a, v_b, v_c| ElectrodeVoltages { v_a, v_b, v_c };
    let edge_cases = [
        (with_b(lim, 0.0, -lim), true),
        (with_b(-lim, 0.0, lim), true),
        (with_b(below, -0.0, 0.0), true),
        (with_b(above, 0.0, 0.0), false),
        (with_b(0.0, 0.0, -above), false),
        (with_b(0.0, 1e-300, 0.0), false),
        (with_b(f64::NAN, 0.0, 0.0), false),
        (with_b(0.0, 0.0, f64::INFINITY), false),
    ];
    let mut mismatches = edge_cases
        .iter()
        .filter(|(v, ok)| validate_range(*v, lim).is_ok() != *ok)
        .count();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let v_b = if rng.random_bool(0.2) {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        };
        let v = with_b(
            rng.random_range(-80.0..80.0),
            v_b,
            rng.random_range(-80.0..80.0),
        );
        let inside = v.v_a.abs() <= lim && v.v_c.abs() <= lim && v.v_b == 0.0;
        if validate_range(v, lim).is_ok() != inside {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} disagreements with the closed box over 10008 cases"),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Option<Duration>); 8] = [
        (
            "1 rotation exactness",
            rotation_exactness,
            Some(Duration::from_secs(5)),
        ),
        (
            "2 device round trip",
            device_round_trip,
            Some(Duration::from_secs(2)),
        ),
        ("3 input recovery", input_recovery, None),
        ("4 gradient fidelity", gradient_fidelity, None),
        ("5 static convergence", static_convergence, None),
        (
            "6 switching scenario",
            scenario_reproduction,
            Some(Duration::from_secs(60)),
        ),
        ("7 determinism", determinism, None),
        ("8 voltage range", voltage_range, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let Some(limit) = budget {
            if elapsed > limit {
                result.passed = false;
                result.detail += &format!("; over time budget {limit:?}");
            }
        }
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] criterion {name}: {} [{:.2} s]",
            result.detail,
            elapsed.as_secs_f64()
        );
        failed += usize::from(!result.passed);
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
