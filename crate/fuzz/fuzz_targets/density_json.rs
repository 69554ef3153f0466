#![no_main]

use brodinger_core::io::parse_density_json;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_density_json(text);
    }
});
