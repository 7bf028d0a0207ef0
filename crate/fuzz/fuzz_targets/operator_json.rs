#![no_main]

use libfuzzer_sys::fuzz_target;
use qnoise::hilbert::Operator;

fuzz_target!(|data: &[u8]| {
    if let Ok(op) = serde_json::from_slice::<Operator>(data) {
        let text = serde_json::to_string(&op).unwrap();
        let back: Operator = serde_json::from_str(&text).unwrap();
        assert_eq!(back.max_abs_diff(&op), 0.0);
    }
});
