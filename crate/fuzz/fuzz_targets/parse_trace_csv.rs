#![no_main]

use libfuzzer_sys::fuzz_target;
use polctl::trace::{read_csv, write_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(trace) = read_csv(data) else {
        return;
    };
    let mut out = Vec::new();
    write_csv(&mut out, &trace).unwrap();
    let again = read_csv(&out).expect("re-parse of emitted trace");
    // Debug formatting treats NaN fields as equal
    assert_eq!(format!("{again:?}"), format!("{trace:?}"));
});
