#![no_main]

use denoisenet::tensor::{decode_dump, encode_dump};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_dump(data) {
        assert_eq!(encode_dump(&t), data);
    }
});
