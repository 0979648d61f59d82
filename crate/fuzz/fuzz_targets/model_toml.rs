#![no_main]

use libfuzzer_sys::fuzz_target;
use pcaids::artifact::ModelArtifact;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(a) = ModelArtifact::from_toml(text) {
        // whatever parses must serialize and parse back to the same model
        let again = ModelArtifact::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, again);
    }
});
