#![no_main]

use dsslic::training::TrainingConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = TrainingConfig::from_toml(text) {
        let again = TrainingConfig::from_toml(&cfg.to_toml().expect("valid config serializes"));
        assert_eq!(again.expect("reparse"), cfg);
    }
});
