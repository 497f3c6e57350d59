#![no_main]

use libfuzzer_sys::fuzz_target;
use polctl::planner::plan_rotation;
use polctl::sop::{rotate, sop_distance, StokesVector};

fuzz_target!(|data: &[u8]| {
    if data.len() < 48 {
        return;
    }
    let f: Vec<f64> = data[..48]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (Ok(s_in), Ok(s_target)) = (
        StokesVector::new(f[0], f[1], f[2]),
        StokesVector::new(f[3], f[4], f[5]),
    ) else {
        return;
    };
    if let Ok(plan) = plan_rotation(s_in, s_target) {
        assert!(plan.axis_angle().axis().z.abs() < 1e-12);
        assert!(sop_distance(rotate(plan.quaternion(), s_in), s_target) < 1e-9);
    }
});
