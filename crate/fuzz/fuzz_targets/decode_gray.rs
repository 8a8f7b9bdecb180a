#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = holorecon::io::decode_gray(data) {
        assert!(img.values().iter().all(|v| (0.0..=255.0).contains(v)));
    }
});
