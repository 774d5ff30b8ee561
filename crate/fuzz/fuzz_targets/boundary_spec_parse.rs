#![no_main]
use libfuzzer_sys::fuzz_target;
use surfpde::band::BoundarySpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = BoundarySpec::parse(text);
    }
});
