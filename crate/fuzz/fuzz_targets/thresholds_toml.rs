#![no_main]

use libfuzzer_sys::fuzz_target;
use pcaids::artifact::{thresholds_from_toml, thresholds_to_toml};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((t, sum)) = thresholds_from_toml(text) {
        let again = thresholds_from_toml(&thresholds_to_toml(&t, sum.as_deref()).unwrap()).unwrap();
        assert_eq!((t, sum), again);
    }
});
