#![no_main]
use kws_core::runtime::ProfileIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(idx) = ProfileIndex::parse(text, "fuzz") {
        assert_eq!(ProfileIndex::parse(&idx.format(), "fuzz").unwrap(), idx);
    }
});
