#![no_main]

use libfuzzer_sys::fuzz_target;
use rismeta_harness::ExperimentSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = ExperimentSpec::from_json(text) {
        let again = serde_json::to_string(&spec).unwrap();
        assert_eq!(ExperimentSpec::from_json(&again).unwrap(), spec);
    }
});
