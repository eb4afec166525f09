#![no_main]
use kws_core::frontend::{decode_features, encode_features};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_features(data) {
        assert_eq!(decode_features(&encode_features(&f)).unwrap(), f);
    }
});
