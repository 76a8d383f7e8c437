#![no_main]

use libfuzzer_sys::fuzz_target;
use tqr::config::RunConfig;
use tqr::forge::{Mix, QType};
use tqr::harness::Regime;
use tqr::model::{Fusion, Variant};
use tqr::supervision::AblationKind;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let _ = s.parse::<Variant>();
    let _ = s.parse::<Mix>();
    let _ = s.parse::<QType>();
    let _ = s.parse::<Fusion>();
    let _ = s.parse::<Regime>();
    let _ = s.parse::<AblationKind>();
    let mut cfg = RunConfig::default();
    let _ = cfg.merge_text(s);
});
