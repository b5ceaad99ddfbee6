#![no_main]

use denoisenet::model::DenoiseNet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = DenoiseNet::decode(data) {
        assert_eq!(model.encode().unwrap(), data);
    }
});
