#![no_main]

use denoisenet::data::{decode_gray, encode_gray_pgm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_gray(data) {
        assert!(img.pixels().iter().all(|v| (-0.5..=0.5).contains(v)));
        let again = decode_gray(&encode_gray_pgm(&img)).unwrap();
        assert_eq!(again.to_levels(), img.to_levels());
    }
});
