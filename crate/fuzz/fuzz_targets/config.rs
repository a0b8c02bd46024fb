#![no_main]

use droplet::experiments::{validate, ExperimentConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).expect("rendered config parses");
        assert_eq!(back.hash(), cfg.hash());
        let _ = validate(&cfg);
    }
});
