#![no_main]

use libfuzzer_sys::fuzz_target;
use qnoise::kernel::MemoryKernel;

fuzz_target!(|data: &[u8]| {
    if let Ok(k) = serde_json::from_slice::<MemoryKernel>(data) {
        // a kernel that parsed must be usable
        let _ = k.f_omega(0.7);
        let _ = k.f_time(0.3);
        let text = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<MemoryKernel>(&text).unwrap(), k);
    }
});
