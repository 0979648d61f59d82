#![no_main]

use libfuzzer_sys::fuzz_target;
use pcaids::artifact::read_score_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = read_score_csv(data) {
        for method in table.methods() {
            let _ = table.method_columns(&method);
        }
    }
});
