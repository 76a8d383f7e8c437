#![no_main]

use std::sync::{Arc, OnceLock};

use libfuzzer_sys::fuzz_target;
use tqr::embed::EmbeddingStore;
use tqr::model::{read_header, QaModel};
use tqr::tkg::TemporalKg;

const KG: &str = "a\tleads\tb\t2001\t2003\nb\tjoins\tc\t2002\t2002\nc\tleads\ta\t2004\t2006\n";

fn fixture() -> &'static (Arc<TemporalKg>, Arc<EmbeddingStore>) {
    static F: OnceLock<(Arc<TemporalKg>, Arc<EmbeddingStore>)> = OnceLock::new();
    F.get_or_init(|| {
        let kg = TemporalKg::parse_tsv(KG).unwrap();
        let mut store = EmbeddingStore::init(&kg, 4, 0.1, 0).unwrap();
        store.freeze();
        (Arc::new(kg), Arc::new(store))
    })
}

fuzz_target!(|data: &[u8]| {
    let _ = read_header(&mut &data[..]);
    let (kg, store) = fixture();
    let _ = QaModel::read_from(&mut &data[..], Arc::clone(store), Arc::clone(kg));
});
