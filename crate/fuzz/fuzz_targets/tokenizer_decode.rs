#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = vqbet::rvq::ResidualQuantizer::from_bytes(data);
});
