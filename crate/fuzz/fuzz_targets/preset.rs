#![no_main]

use libfuzzer_sys::fuzz_target;
use pcaids::dataset::FeaturePreset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = FeaturePreset::parse(text);
});
