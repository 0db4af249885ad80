#![no_main]

use libfuzzer_sys::fuzz_target;
use ntk_active::data::parse_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // First line picks the label column; the rest is the file.
    let (label, body) = text.split_once('\n').unwrap_or(("", text));
    let label = (!label.is_empty()).then_some(label);
    if let Ok(ds) = parse_csv(body, label) {
        assert_eq!(ds.inputs.len(), ds.labels.as_ref().map_or(ds.inputs.len(), |y| y.len()));
        assert!(ds.inputs.iter().flatten().all(|v| v.is_finite()));
    }
});
