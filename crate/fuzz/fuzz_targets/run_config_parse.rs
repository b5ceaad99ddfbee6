#![no_main]

use denoisenet_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::from_json(text) {
            let json = serde_json::to_string(&config).unwrap();
            assert_eq!(RunConfig::from_json(&json).unwrap(), config);
        }
    }
});
