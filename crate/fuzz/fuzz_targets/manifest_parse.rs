#![no_main]

use denoisenet::data::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(entries) = parse_manifest(text) {
            assert!(entries.iter().all(|e| !e.path.as_os_str().is_empty()));
        }
    }
});
