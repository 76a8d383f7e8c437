#![no_main]

use libfuzzer_sys::fuzz_target;
use tqr_tensor::io::read_named;

fuzz_target!(|data: &[u8]| {
    let mut r = &data[..];
    // stop at the first error; bounded by input length
    while let Ok(Some(_)) = read_named(&mut r) {}
});
