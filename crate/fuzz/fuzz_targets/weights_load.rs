#![no_main]
use libfuzzer_sys::fuzz_target;
use surfpde::operator::load_params_bytes;

fuzz_target!(|data: &[u8]| {
    // corrupt weight files must be rejected without panicking or huge
    // allocations (the loader caps dimensions before allocating)
    let _ = load_params_bytes(data);
});
