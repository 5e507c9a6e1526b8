#![no_main]

use irtlong::config::ConfigDoc;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = ConfigDoc::parse(text) {
        // Every accepted key must be retrievable.
        for e in doc.entries() {
            assert!(doc.get(&e.key).is_some());
        }
    }
});
