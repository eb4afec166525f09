#![no_main]
use kws_core::frontend::{decode_wav, encode_wav};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = decode_wav(data) {
        let bytes = encode_wav(&clip).expect("decoded clip re-encodes");
        assert_eq!(decode_wav(&bytes).unwrap().sample_rate_hz(), clip.sample_rate_hz());
    }
});
