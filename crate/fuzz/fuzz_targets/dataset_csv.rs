#![no_main]

use libfuzzer_sys::fuzz_target;
use pcaids::dataset::{load_csv_reader, FeaturePreset, LoadOptions};

fuzz_target!(|data: &[u8]| {
    // first byte picks the preset and the malformed-row policy
    let Some((&mode, body)) = data.split_first() else { return };
    let preset = match mode % 3 {
        0 => FeaturePreset::generic(Some("label"), &["1"]),
        1 => FeaturePreset::generic(None, &[]),
        _ => pcaids::dataset::labeled_csv_preset(),
    };
    let options = LoadOptions {
        skip_malformed: mode & 0x80 != 0,
    };
    if let Ok(report) = load_csv_reader(body, &preset, options) {
        let d = report.dataset;
        assert_eq!(d.row_ids.len(), d.rows());
        assert!(d.y.as_slice().iter().all(|v| v.is_finite()));
    }
});
