#![no_main]

use libfuzzer_sys::fuzz_target;
use polctl::device::CalibrationFile;

fuzz_target!(|s: &str| {
    if let Ok(file) = CalibrationFile::from_json_str(s) {
        // anything accepted must describe a usable device
        assert!(file.device().validate().is_ok());
    }
});
