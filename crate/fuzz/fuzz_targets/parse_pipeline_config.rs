#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = holorecon::config::parse_config(text) {
        if cfg.validate().is_ok() {
            let again = cfg.to_toml().expect("valid config serializes");
            assert_eq!(holorecon::config::parse_config(&again).unwrap(), cfg);
        }
    }
});
