//! The LIBSVM parser must reject malformed input with an error, never a
//! panic, and accepted input must produce a consistent dataset.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ds) = netnewton::objectives::parse_libsvm(text) {
            for sample in ds.samples() {
                assert_eq!(sample.features.len(), ds.dim());
                assert!(sample.label == 1.0 || sample.label == -1.0);
                assert!(sample.features.iter().all(|v| v.is_finite()));
            }
        }
    }
});
