#![no_main]
use libfuzzer_sys::fuzz_target;
use surfpde::geometry::{parse_obj, NonTriPolicy};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // the parser must never panic, with either face policy
        let _ = parse_obj(text, NonTriPolicy::Fan);
        let _ = parse_obj(text, NonTriPolicy::Reject);
    }
});
