#![no_main]

use libfuzzer_sys::fuzz_target;
use ntk_active::report::{parse_report, to_text};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(report) = parse_report(text) else { return };
    let Ok(once) = to_text(&report) else { return };
    let again = parse_report(&once).expect("encoded report must parse");
    assert_eq!(to_text(&again).unwrap(), once);
});
