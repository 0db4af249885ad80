#![no_main]

use std::fmt::Display;
use std::str::FromStr;

use libfuzzer_sys::fuzz_target;
use ntk_active::criteria::{CriterionKind, RefMethod};
use ntk_active::select::{OptimizerKind, ProviderSpec};

fn round_trip<T: FromStr + Display + PartialEq + std::fmt::Debug>(s: &str) {
    if let Ok(v) = s.parse::<T>() {
        let shown = v.to_string();
        let back: T = shown.parse().ok().expect("displayed value must parse");
        assert_eq!(back, v, "{s:?} -> {shown:?}");
    }
}

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    round_trip::<CriterionKind>(s);
    round_trip::<OptimizerKind>(s);
    round_trip::<ProviderSpec>(s);
    round_trip::<RefMethod>(s);
});
