#![no_main]

use libfuzzer_sys::fuzz_target;
use polctl::sim::SimConfig;

fuzz_target!(|s: &str| {
    let Ok(list) = SimConfig::list_from_json_str(s) else {
        return;
    };
    for cfg in list {
        assert!(cfg.validate().is_ok());
        let again =
            SimConfig::from_json_str(&cfg.to_json_string()).expect("re-parse of emitted config");
        assert_eq!(again, cfg);
    }
});
