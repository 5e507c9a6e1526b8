#![no_main]

use irtlong::model::ModelSpec;
use irtlong_cli::plot::{profiles, write_decomposition, PlotParams};
use libfuzzer_sys::fuzz_target;

const SPEC: &str = "\
family = adjacent
cdf = logistic
items.a.categories = 4
items.b.categories = 3
fixed_effects = [group, time]
";

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let spec: ModelSpec = SPEC.parse().expect("fixed spec");
    if let Ok(p) = PlotParams::parse(text, &spec) {
        let names = spec.covariate_names();
        if p.times.len() * p.profile_values.iter().map(Vec::len).product::<usize>() > 10_000 {
            return;
        }
        let profs = profiles(&names, &p.profile_values);
        write_decomposition(&spec, &p.items, &p.beta, &p.times, &profs, std::io::sink()).expect("valid params plot");
    }
});
