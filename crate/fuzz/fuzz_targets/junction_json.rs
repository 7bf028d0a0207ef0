#![no_main]

use libfuzzer_sys::fuzz_target;
use qnoise::junction::JunctionConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<JunctionConfig>(data) {
        let _ = cfg.validate();
    }
});
