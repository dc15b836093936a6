#![no_main]

use dmliv_harness::config::{parse_config_text, parse_override, resolve};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(flat) = parse_config_text(text) {
        if let Ok(cfg) = resolve(&flat) {
            let lock = cfg.to_lock_text().expect("resolved config renders");
            let back = resolve(&parse_config_text(&lock).expect("lock parses")).expect("lock resolves");
            assert_eq!(back.digest(), cfg.digest());
        }
    }
    for line in text.lines() {
        let _ = parse_override(line);
    }
});
