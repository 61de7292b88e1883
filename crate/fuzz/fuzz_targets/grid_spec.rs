#![no_main]

use libfuzzer_sys::fuzz_target;
use pbs_cli::options::{GridSpec, RrSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = text.parse::<GridSpec>() {
        assert!(!g.values().is_empty());
        assert!(g.values().iter().all(|v| v.is_finite()));
        let again: GridSpec = g.to_string().parse().expect("display re-parses");
        assert_eq!(again.values(), g.values());
    }
    let _ = text.parse::<RrSpec>();
});
