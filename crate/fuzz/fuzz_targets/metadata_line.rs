#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rec) = bbb_core::datamodel::metadata::parse_metadata_line(text) {
            // whatever parses must survive a round trip through the record form
            let _ = rec.to_record(std::path::Path::new("/data"));
        }
    }
});
