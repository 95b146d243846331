#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = vqbet::policy::PolicyConfig::from_text(text) {
            assert_eq!(vqbet::policy::PolicyConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
    }
});
