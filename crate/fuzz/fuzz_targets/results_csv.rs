#![no_main]

use libfuzzer_sys::fuzz_target;
use rismeta_harness::report::{parse_report, report_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_report(text) {
        // whatever parses re-serializes to a stable form
        let canonical = report_csv(&rows).unwrap();
        assert_eq!(report_csv(&parse_report(&canonical).unwrap()).unwrap(), canonical);
    }
});
