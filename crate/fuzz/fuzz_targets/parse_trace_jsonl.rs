#![no_main]

use libfuzzer_sys::fuzz_target;
use polctl::trace::{read_jsonl, write_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(trace) = read_jsonl(data) else {
        return;
    };
    let mut out = Vec::new();
    if write_jsonl(&mut out, &trace).is_ok() {
        let again = read_jsonl(&out).expect("re-parse of emitted trace");
        assert_eq!(format!("{again:?}"), format!("{trace:?}"));
    }
});
