#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = vqbet_cli::RunConfig::parse(text) {
            assert_eq!(vqbet_cli::RunConfig::parse(&cfg.to_text()).unwrap().to_text(), cfg.to_text());
        }
    }
});
