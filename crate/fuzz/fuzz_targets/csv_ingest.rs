#![no_main]

use irtlong::data::{ingest_csv, write_csv};
use irtlong::model::ModelSpec;
use libfuzzer_sys::fuzz_target;

const SPEC: &str = "\
family = cumulative
cdf = logistic
items.q1.categories = 4
items.q2.categories = 3
items.q2.reversed = true
fixed_effects = [group, time]
";

fuzz_target!(|data: &[u8]| {
    let spec: ModelSpec = SPEC.parse().expect("fixed spec");
    if let Ok((ds, report)) = ingest_csv(data, &spec) {
        assert_eq!(report.observations, ds.n_observations());
        // Accepted data survive a write/read cycle unchanged.
        let mut buf = Vec::new();
        write_csv(&ds, &spec, &mut buf).expect("write");
        let (again, _) = ingest_csv(buf.as_slice(), &spec).expect("reingest");
        assert_eq!(again, ds);
    }
});
