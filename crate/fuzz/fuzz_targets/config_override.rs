#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if bbb_core::config::parse_override(text).is_ok() {
            let _ = bbb_core::config::RunConfig::load(None, &[text.to_string()], "train");
        }
    }
});
