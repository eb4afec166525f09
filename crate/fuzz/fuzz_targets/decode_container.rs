#![no_main]
use kws_core::checkpoint::{model_from_container, Container};
use kws_core::quant::QuantizedModel;
use kws_core::runtime::EnrollmentProfile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        assert_eq!(c.encode().unwrap(), data);
        let _ = model_from_container(&c);
        let _ = QuantizedModel::from_container(&c);
        let _ = EnrollmentProfile::from_container(&c);
    }
});
