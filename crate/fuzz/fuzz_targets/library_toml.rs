#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(lib) = bbb_core::synthgen::ModelLibrary::from_toml_str(text) {
            for model in lib.models() {
                let _ = model.breakable_tubes();
            }
        }
    }
});
