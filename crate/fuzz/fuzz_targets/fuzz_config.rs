//! The config parser must never panic, and anything it accepts must
//! survive a serialize/parse round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use netnewton::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ExperimentConfig::parse(text) {
            let canonical = config.serialize();
            let reparsed = ExperimentConfig::parse(&canonical)
                .expect("canonical serialization must parse");
            assert_eq!(config, reparsed, "round trip changed the config");
            assert_eq!(canonical, reparsed.serialize(), "serialization unstable");
        }
    }
});
