#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = bbb_core::datamodel::parse_real_labels(text) {
            let splits = bbb_core::datamodel::real::stratified_real_split(&rows, 0);
            assert_eq!(splits.len(), rows.len());
        }
    }
});
