#![no_main]

use libfuzzer_sys::fuzz_target;
use ntk_active::report::{config_to_text, parse_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = parse_config(text) else { return };
    let once = config_to_text(&cfg).expect("a parsed config must encode");
    let again = parse_config(&once).expect("encoded config must parse");
    assert_eq!(config_to_text(&again).unwrap(), once);
});
