#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = vqbet::data::TrajectoryDataset::from_bytes(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(ds.to_bytes().unwrap(), data);
    }
});
