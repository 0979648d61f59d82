#![no_main]

use libfuzzer_sys::fuzz_target;
use pcaids::simulation::{parse_experiment_config, ShiftPolicy};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = parse_experiment_config(text) {
        for cfg in &plan.experiments {
            assert!(cfg.validate().is_ok());
        }
    }
    if let Ok(p) = text.parse::<ShiftPolicy>() {
        assert_eq!(p.to_string().parse::<ShiftPolicy>().unwrap(), p);
    }
});
