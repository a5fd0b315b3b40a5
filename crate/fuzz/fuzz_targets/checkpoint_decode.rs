#![no_main]

use clicklab::runner::decode_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Length-checked decoding: arbitrary bytes must never panic or
    // over-allocate.
    let _ = decode_checkpoint(data);
});
