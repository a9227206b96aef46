#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = bbb_core::config::RunConfig::parse(text) {
            // a parsed config serialises back to something that parses
            let again = cfg.to_toml().expect("serialisable");
            bbb_core::config::RunConfig::parse(&again).expect("round trip");
        }
    }
});
