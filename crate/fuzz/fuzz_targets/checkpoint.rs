#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = bbb_core::model::checkpoint::from_bytes(data);
});
