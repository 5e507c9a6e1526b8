#![no_main]

use irtlong::simulate::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(text, 1) {
        assert!(m.validate().is_ok());
    }
});
