#![no_main]

use libfuzzer_sys::fuzz_target;
use tqr::tkg::TemporalKg;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(kg) = TemporalKg::parse_tsv(src) {
        // whatever parses must survive a round trip
        let again = TemporalKg::parse_tsv(&kg.to_tsv()).unwrap();
        assert_eq!(again.facts().len(), kg.facts().len());
    }
});
