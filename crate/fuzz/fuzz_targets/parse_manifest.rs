#![no_main]
use std::path::Path;

use kws_core::dataset::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = Manifest::parse(text, Path::new("."), "fuzz");
});
