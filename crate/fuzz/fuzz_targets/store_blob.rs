#![no_main]

use libfuzzer_sys::fuzz_target;
use tqr::embed::EmbeddingStore;

fuzz_target!(|data: &[u8]| {
    let _ = EmbeddingStore::read_from(&mut &data[..]);
});
