#![no_main]

use irtlong::model::ModelSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = text.parse::<ModelSpec>() {
        // Accepted specs round-trip through their own config text.
        let again: ModelSpec = spec.to_config_string().parse().expect("round trip");
        assert_eq!(again, spec);
    }
});
