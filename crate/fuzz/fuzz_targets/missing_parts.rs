#![no_main]

use bbb_core::datamodel::{decode_missing_parts, encode_missing_parts, DamageLabels};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(missing) = decode_missing_parts(text) {
            let labels = DamageLabels { missing, ..Default::default() };
            assert_eq!(decode_missing_parts(&encode_missing_parts(&labels)).unwrap(), missing);
        }
    }
});
