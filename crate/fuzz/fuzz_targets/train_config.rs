#![no_main]

use clicklab::runner::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // parse + validate; any outcome but a panic is fine
        let _ = TrainConfig::from_toml_str(text);
    }
});
